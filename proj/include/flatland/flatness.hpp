#pragma once

#include <string>

#include "flatland/errors.hpp"
#include "flatland/landscape.hpp"

namespace flatland::flatness {

// Scalar summaries of a sampled loss surface. All three metrics are means
// over the grid, so refining the grid does not change their scale.
struct FlatnessReport {
    double sc = 0.0;         // surface curvature
    double ag = 0.0;         // average gradient magnitude
    double mag = 0.0;        // mean absolute adjacent difference
    double composite = 0.0;  // (sc + ag + mag) / 3
    int n_per_axis = 0;
    double h_alpha = 0.0;
    double h_beta = 0.0;
};

// Mean |f_aa + f_bb| over interior points, second differences divided by h^2.
double surface_curvature(const landscape::LossSurface& surface);

// Mean Euclidean norm of the central-difference gradient over interior points.
double average_gradient(const landscape::LossSurface& surface);

// Mean |v(p) - v(q)| over all axis-adjacent grid pairs, without dividing by h.
double mean_absolute_gradient(const landscape::LossSurface& surface);

FlatnessReport flatness_report(const landscape::LossSurface& surface);

std::string flatness_csv_header();
std::string flatness_csv_row(const std::string& checkpoint_id, const FlatnessReport& report);

}  // namespace flatland::flatness
