#include "flatland/landscape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <thread>
#include <unordered_map>

#include "flatland/rng.hpp"

namespace flatland::landscape {

namespace {

constexpr std::uint64_t kDirectionTag = 0xD1E;

void append_f17(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

void append_f2(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    out += buf;
}

double slice_norm(const std::vector<double>& v, long offset, long count) {
    double sq = 0.0;
    for (long k = 0; k < count; ++k) sq += v[offset + k] * v[offset + k];
    return std::sqrt(sq);
}

void filter_normalize(nn::ParamVector& delta, const nn::ParamVector& theta0,
                      const nn::ModelSpec& spec) {
    for (const nn::LayerView& v : nn::layer_views(spec)) {
        const long count = long(v.in) * v.out + v.out;
        const double theta_norm = slice_norm(theta0, v.w_offset, count);
        const double delta_norm = slice_norm(delta, v.w_offset, count);
        if (theta_norm == 0.0 || delta_norm == 0.0) continue;  // leave the slice as drawn
        const double scale = theta_norm / delta_norm;
        for (long k = 0; k < count; ++k) delta[v.w_offset + k] *= scale;
    }
}

double direction_norm(const nn::ParamVector& d) {
    double sq = 0.0;
    for (double x : d) sq += x * x;
    return std::sqrt(sq);
}

}  // namespace

const char* to_string(DirectionKind k) {
    return k == DirectionKind::Gaussian ? "gaussian" : "gaussian_filter_normalized";
}

DirectionKind direction_kind_from_string(const std::string& s) {
    if (s == "gaussian") return DirectionKind::Gaussian;
    if (s == "gaussian_filter_normalized") return DirectionKind::GaussianFilterNormalized;
    throw ConfigError("unknown direction kind: " + s);
}

void GridSpec::validate() const {
    if (n_per_axis < 3) throw ConfigError("grid needs at least 3 points per axis");
    if (!(alpha_min < alpha_max) || !(beta_min < beta_max))
        throw ConfigError("grid ranges must have positive extent");
    if (!std::isfinite(alpha_min) || !std::isfinite(alpha_max) || !std::isfinite(beta_min) ||
        !std::isfinite(beta_max))
        throw ConfigError("grid ranges must be finite");
}

DirectionPair sample_directions(const nn::ModelSpec& spec, const nn::ParamVector& theta0,
                                std::uint64_t seed, DirectionKind kind) {
    spec.validate();
    const long p = spec.param_count();
    if (kind == DirectionKind::GaussianFilterNormalized && long(theta0.size()) != p)
        throw DimensionError("filter normalization needs the model parameters");

    DirectionPair pair;
    pair.kind = kind;
    pair.seed = seed;
    Rng rng(mix_seed(seed, kDirectionTag));
    pair.delta1.resize(p);
    pair.delta2.resize(p);
    for (long i = 0; i < p; ++i) pair.delta1[i] = rng.normal();
    for (long i = 0; i < p; ++i) pair.delta2[i] = rng.normal();
    if (kind == DirectionKind::GaussianFilterNormalized) {
        filter_normalize(pair.delta1, theta0, spec);
        filter_normalize(pair.delta2, theta0, spec);
    }
    if (direction_norm(pair.delta1) == 0.0 || direction_norm(pair.delta2) == 0.0)
        throw NumericError("sampled a zero direction vector");
    return pair;
}

LossSurface evaluate_surface(const nn::ParamVector& theta0, const nn::ModelSpec& spec,
                             const nn::Batch& eval_batch, const DirectionPair& directions,
                             const GridSpec& grid, int n_threads,
                             const std::string& eval_batch_id) {
    grid.validate();
    spec.validate();
    const long p = spec.param_count();
    if (long(theta0.size()) != p) throw DimensionError("theta0 does not match the model spec");
    if (long(directions.delta1.size()) != p || long(directions.delta2.size()) != p)
        throw DimensionError("direction vectors do not match the model spec");

    const int n = grid.n_per_axis;
    LossSurface surf;
    surf.grid = grid;
    surf.eval_batch_id = eval_batch_id;
    surf.values.assign(std::size_t(n) * n, 0.0);

    auto eval_rows = [&](int first_row, int stride) {
        nn::ParamVector w(theta0.size());
        for (int i = first_row; i < n; i += stride) {
            const double a = grid.alpha_at(i);
            for (int j = 0; j < n; ++j) {
                const double b = grid.beta_at(j);
                for (std::size_t k = 0; k < w.size(); ++k)
                    w[k] = theta0[k] + a * directions.delta1[k] + b * directions.delta2[k];
                double value;
                try {
                    value = nn::loss(nn::forward(w, spec, eval_batch), eval_batch.targets,
                                     spec.loss_kind);
                } catch (const NumericError&) {
                    value = std::nan("");
                }
                surf.values[std::size_t(i) * n + j] = value;
            }
        }
    };

    const int workers = std::min(std::max(n_threads, 1), n);
    if (workers <= 1) {
        eval_rows(0, 1);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int t = 0; t < workers; ++t) pool.emplace_back(eval_rows, t, workers);
        for (auto& th : pool) th.join();
    }

    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (!std::isfinite(surf.at(i, j))) {
                char buf[96];
                std::snprintf(buf, sizeof buf, "surface value not finite at alpha=%g, beta=%g",
                              grid.alpha_at(i), grid.beta_at(j));
                throw NumericError(buf);
            }
    return surf;
}

// ---- contour rendering ----

namespace {

struct Point {
    double x, y;  // alpha, beta
};

// Grid edges carry stable integer ids so segments from neighboring cells
// chain exactly: id = (i*n + j)*2, +0 for the edge to (i, j+1), +1 for the
// edge to (i+1, j).
long beta_edge(int i, int j, int n) { return (long(i) * n + j) * 2; }
long alpha_edge(int i, int j, int n) { return (long(i) * n + j) * 2 + 1; }

Point edge_crossing(const LossSurface& s, long edge, double t) {
    const int n = s.grid.n_per_axis;
    const int cell = int(edge / 2);
    const int i = cell / n;
    const int j = cell % n;
    if (edge % 2 == 0) {
        const double va = s.at(i, j), vb = s.at(i, j + 1);
        const double f = (t - va) / (vb - va);
        const double b0 = s.grid.beta_at(j), b1 = s.grid.beta_at(j + 1);
        return {s.grid.alpha_at(i), b0 + f * (b1 - b0)};
    }
    const double va = s.at(i, j), vb = s.at(i + 1, j);
    const double f = (t - va) / (vb - va);
    const double a0 = s.grid.alpha_at(i), a1 = s.grid.alpha_at(i + 1);
    return {a0 + f * (a1 - a0), s.grid.beta_at(j)};
}

struct Segment {
    long a, b;
};

// Marching squares over one level; returns chained polylines of edge ids.
std::vector<std::vector<long>> trace_level(const LossSurface& s, double t) {
    const int n = s.grid.n_per_axis;
    std::vector<Segment> segments;
    for (int i = 0; i + 1 < n; ++i) {
        for (int j = 0; j + 1 < n; ++j) {
            const bool s00 = s.at(i, j) >= t;
            const bool s01 = s.at(i, j + 1) >= t;
            const bool s10 = s.at(i + 1, j) >= t;
            const bool s11 = s.at(i + 1, j + 1) >= t;
            const long top = beta_edge(i, j, n);
            const long bottom = beta_edge(i + 1, j, n);
            const long left = alpha_edge(i, j, n);
            const long right = alpha_edge(i, j + 1, n);

            long cut[4];
            int n_cut = 0;
            if (s00 != s01) cut[n_cut++] = top;
            if (s01 != s11) cut[n_cut++] = right;
            if (s10 != s11) cut[n_cut++] = bottom;
            if (s00 != s10) cut[n_cut++] = left;

            if (n_cut == 2) {
                segments.push_back({cut[0], cut[1]});
            } else if (n_cut == 4) {
                // saddle: resolve by the cell-center average
                const double center =
                    (s.at(i, j) + s.at(i, j + 1) + s.at(i + 1, j) + s.at(i + 1, j + 1)) / 4.0;
                if ((center >= t) == s00) {
                    segments.push_back({top, right});
                    segments.push_back({left, bottom});
                } else {
                    segments.push_back({top, left});
                    segments.push_back({bottom, right});
                }
            }
        }
    }

    std::unordered_map<long, std::vector<std::pair<std::size_t, long>>> adjacent;
    for (std::size_t k = 0; k < segments.size(); ++k) {
        adjacent[segments[k].a].push_back({k, segments[k].b});
        adjacent[segments[k].b].push_back({k, segments[k].a});
    }

    std::vector<char> used(segments.size(), 0);
    std::vector<std::vector<long>> chains;
    for (std::size_t k = 0; k < segments.size(); ++k) {
        if (used[k]) continue;
        used[k] = 1;
        std::deque<long> chain = {segments[k].a, segments[k].b};
        bool closed = false;
        while (!closed) {  // extend the tail
            int next = -1;
            long other = 0;
            for (const auto& [si, on] : adjacent[chain.back()])
                if (!used[si]) {
                    next = int(si);
                    other = on;
                    break;
                }
            if (next < 0) break;
            used[next] = 1;
            chain.push_back(other);
            closed = other == chain.front();
        }
        while (!closed) {  // extend the head
            int next = -1;
            long other = 0;
            for (const auto& [si, on] : adjacent[chain.front()])
                if (!used[si]) {
                    next = int(si);
                    other = on;
                    break;
                }
            if (next < 0) break;
            used[next] = 1;
            chain.push_front(other);
        }
        chains.emplace_back(chain.begin(), chain.end());
    }
    return chains;
}

constexpr const char* kPalette[] = {
    "#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2",
    "#eeca3b", "#b279a2", "#ff9da6", "#9d755d", "#bab0ac",
};

}  // namespace

std::string emit_contour(const LossSurface& surface, int levels) {
    if (levels < 2) throw ConfigError("contour rendering needs at least 2 levels");
    surface.grid.validate();
    const int n = surface.grid.n_per_axis;
    if (long(surface.values.size()) != long(n) * n)
        throw DimensionError("surface value count does not match its grid");

    double lo = surface.values[0], hi = surface.values[0];
    for (double v : surface.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }

    const double plot = 560.0, margin = 60.0;
    const double amin = surface.grid.alpha_min, amax = surface.grid.alpha_max;
    const double bmin = surface.grid.beta_min, bmax = surface.grid.beta_max;
    auto px = [&](double alpha) { return margin + (alpha - amin) / (amax - amin) * plot; };
    auto py = [&](double beta) { return margin + plot - (beta - bmin) / (bmax - bmin) * plot; };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"680\" "
           "height=\"680\" viewBox=\"0 0 680 680\">\n";
    svg += "<rect x=\"0\" y=\"0\" width=\"680\" height=\"680\" fill=\"#ffffff\"/>\n";
    svg += "<rect x=\"60\" y=\"60\" width=\"560\" height=\"560\" fill=\"none\" "
           "stroke=\"#222222\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"340\" y=\"665\" font-family=\"sans-serif\" font-size=\"18\" "
           "text-anchor=\"middle\">\xce\xb1</text>\n";
    svg += "<text x=\"18\" y=\"340\" font-family=\"sans-serif\" font-size=\"18\" "
           "text-anchor=\"middle\">\xce\xb2</text>\n";

    auto tick = [&](double vx, double vy, double value, const char* anchor) {
        char buf[120];
        std::string num;
        append_f2(num, value);
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\" "
                      "text-anchor=\"%s\">%s</text>\n",
                      vx, vy, anchor, num.c_str());
        svg += buf;
    };
    tick(margin, margin + plot + 20.0, amin, "middle");
    tick(margin + plot, margin + plot + 20.0, amax, "middle");
    tick(margin - 8.0, margin + plot, bmin, "end");
    tick(margin - 8.0, margin + 12.0, bmax, "end");

    if (lo == hi) {
        svg += "<text x=\"340\" y=\"340\" font-family=\"sans-serif\" font-size=\"16\" "
               "text-anchor=\"middle\">constant surface: no contours</text>\n";
        svg += "</svg>\n";
        return svg;
    }

    {
        std::string legend = "loss range [";
        append_f17(legend, lo);
        legend += ", ";
        append_f17(legend, hi);
        legend += "]";
        svg += "<text x=\"340\" y=\"40\" font-family=\"sans-serif\" font-size=\"13\" "
               "text-anchor=\"middle\">" +
               legend + "</text>\n";
    }

    for (int k = 0; k < levels; ++k) {
        const double t = lo + (hi - lo) * double(k + 1) / double(levels + 1);
        const char* color = kPalette[k % (sizeof kPalette / sizeof kPalette[0])];
        for (const auto& chain : trace_level(surface, t)) {
            std::string points;
            for (long edge : chain) {
                const Point p = edge_crossing(surface, edge, t);
                if (!points.empty()) points += " ";
                append_f2(points, px(p.x));
                points += ",";
                append_f2(points, py(p.y));
            }
            svg += "<polyline fill=\"none\" stroke=\"";
            svg += color;
            svg += "\" stroke-width=\"1.2\" points=\"" + points + "\"/>\n";
        }
    }
    svg += "</svg>\n";
    return svg;
}

std::string surface_to_csv(const LossSurface& surface) {
    const int n = surface.grid.n_per_axis;
    if (long(surface.values.size()) != long(n) * n)
        throw DimensionError("surface value count does not match its grid");
    std::string out = "alpha,beta,loss\n";
    for (int i = 0; i < n; ++i) {
        const double a = surface.grid.alpha_at(i);
        for (int j = 0; j < n; ++j) {
            append_f17(out, a);
            out += ",";
            append_f17(out, surface.grid.beta_at(j));
            out += ",";
            append_f17(out, surface.at(i, j));
            out += "\n";
        }
    }
    return out;
}

LossSurface surface_from_csv(const std::string& text) {
    std::vector<std::array<double, 3>> rows;
    std::size_t pos = 0;
    bool first = true;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (first) {
            if (line != "alpha,beta,loss")
                throw ConfigError("surface csv must start with header alpha,beta,loss");
            first = false;
            continue;
        }
        std::array<double, 3> row{};
        const char* s = line.c_str();
        char* cursor = nullptr;
        for (int c = 0; c < 3; ++c) {
            row[c] = std::strtod(s, &cursor);
            if (cursor == s) throw ConfigError("surface csv has a malformed number: " + line);
            s = cursor;
            if (c < 2) {
                if (*s != ',') throw ConfigError("surface csv row needs 3 columns: " + line);
                ++s;
            }
        }
        if (*s != '\0') throw ConfigError("surface csv row has trailing characters: " + line);
        rows.push_back(row);
    }
    if (first) throw ConfigError("surface csv is empty");

    std::size_t n = 1;
    while (n < rows.size() && rows[n][0] == rows[0][0]) ++n;
    if (n * n != rows.size())
        throw ConfigError("surface csv does not describe a square grid");

    LossSurface surf;
    surf.grid.n_per_axis = int(n);
    surf.grid.alpha_min = rows[0][0];
    surf.grid.alpha_max = rows[rows.size() - 1][0];
    surf.grid.beta_min = rows[0][1];
    surf.grid.beta_max = rows[n - 1][1];
    surf.grid.validate();
    surf.values.reserve(rows.size());
    for (const auto& row : rows) surf.values.push_back(row[2]);
    return surf;
}

}  // namespace flatland::landscape
