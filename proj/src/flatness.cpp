#include "flatland/flatness.hpp"

#include <cmath>
#include <cstdio>

namespace flatland::flatness {

namespace {

void check_grid(const landscape::LossSurface& s, int min_n) {
    const int n = s.grid.n_per_axis;
    if (n < min_n) throw DimensionError("surface grid is too small for this metric");
    if (long(s.values.size()) != long(n) * n)
        throw DimensionError("surface value count does not match its grid");
}

void append_f17(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

}  // namespace

double surface_curvature(const landscape::LossSurface& s) {
    check_grid(s, 3);
    const int n = s.grid.n_per_axis;
    const double ha2 = s.grid.h_alpha() * s.grid.h_alpha();
    const double hb2 = s.grid.h_beta() * s.grid.h_beta();
    double sum = 0.0;
    for (int i = 1; i + 1 < n; ++i)
        for (int j = 1; j + 1 < n; ++j) {
            const double faa = (s.at(i + 1, j) - 2.0 * s.at(i, j) + s.at(i - 1, j)) / ha2;
            const double fbb = (s.at(i, j + 1) - 2.0 * s.at(i, j) + s.at(i, j - 1)) / hb2;
            sum += std::fabs(faa + fbb);
        }
    return sum / (double(n - 2) * double(n - 2));
}

double average_gradient(const landscape::LossSurface& s) {
    check_grid(s, 3);
    const int n = s.grid.n_per_axis;
    const double two_ha = 2.0 * s.grid.h_alpha();
    const double two_hb = 2.0 * s.grid.h_beta();
    double sum = 0.0;
    for (int i = 1; i + 1 < n; ++i)
        for (int j = 1; j + 1 < n; ++j) {
            const double fa = (s.at(i + 1, j) - s.at(i - 1, j)) / two_ha;
            const double fb = (s.at(i, j + 1) - s.at(i, j - 1)) / two_hb;
            sum += std::hypot(fa, fb);
        }
    return sum / (double(n - 2) * double(n - 2));
}

double mean_absolute_gradient(const landscape::LossSurface& s) {
    check_grid(s, 2);
    const int n = s.grid.n_per_axis;
    double sum = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j + 1 < n; ++j) sum += std::fabs(s.at(i, j + 1) - s.at(i, j));
    for (int j = 0; j < n; ++j)
        for (int i = 0; i + 1 < n; ++i) sum += std::fabs(s.at(i + 1, j) - s.at(i, j));
    return sum / (2.0 * double(n) * double(n - 1));
}

FlatnessReport flatness_report(const landscape::LossSurface& s) {
    FlatnessReport r;
    r.sc = surface_curvature(s);
    r.ag = average_gradient(s);
    r.mag = mean_absolute_gradient(s);
    r.composite = (r.sc + r.ag + r.mag) / 3.0;
    r.n_per_axis = s.grid.n_per_axis;
    r.h_alpha = s.grid.h_alpha();
    r.h_beta = s.grid.h_beta();
    return r;
}

std::string flatness_csv_header() {
    return "checkpoint_id,sc,ag,mag,composite,n,h_alpha,h_beta";
}

std::string flatness_csv_row(const std::string& checkpoint_id, const FlatnessReport& r) {
    std::string out = checkpoint_id;
    out += ",";
    append_f17(out, r.sc);
    out += ",";
    append_f17(out, r.ag);
    out += ",";
    append_f17(out, r.mag);
    out += ",";
    append_f17(out, r.composite);
    char buf[24];
    std::snprintf(buf, sizeof buf, ",%d,", r.n_per_axis);
    out += buf;
    append_f17(out, r.h_alpha);
    out += ",";
    append_f17(out, r.h_beta);
    return out;
}

}  // namespace flatland::flatness
