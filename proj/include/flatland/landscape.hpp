#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flatland/nn.hpp"

namespace flatland::landscape {

enum class DirectionKind { Gaussian, GaussianFilterNormalized };

const char* to_string(DirectionKind k);
DirectionKind direction_kind_from_string(const std::string& s);

/// Pair of parameter-space directions spanning the probe plane.
struct DirectionPair {
    nn::ParamVector delta1;
    nn::ParamVector delta2;
    DirectionKind kind = DirectionKind::Gaussian;
    std::uint64_t seed = 0;
};

/// Regular (alpha, beta) grid. Coordinates come from an endpoint-exact
/// lerp, so symmetric ranges with an odd point count hit (0, 0) exactly.
struct GridSpec {
    double alpha_min = -1.0;
    double alpha_max = 1.0;
    double beta_min = -1.0;
    double beta_max = 1.0;
    int n_per_axis = 41;

    void validate() const;

    double alpha_at(int i) const {
        const int m = n_per_axis - 1;
        return (alpha_min * (m - i) + alpha_max * i) / m;
    }
    double beta_at(int j) const {
        const int m = n_per_axis - 1;
        return (beta_min * (m - j) + beta_max * j) / m;
    }
    double h_alpha() const { return (alpha_max - alpha_min) / (n_per_axis - 1); }
    double h_beta() const { return (beta_max - beta_min) / (n_per_axis - 1); }

    bool operator==(const GridSpec&) const = default;
};

/// Loss values over the grid; row index runs over alpha, column over beta.
struct LossSurface {
    std::vector<double> values;  // n_per_axis * n_per_axis, row-major
    GridSpec grid;
    std::string eval_batch_id;

    double at(int i, int j) const { return values[std::size_t(i) * grid.n_per_axis + j]; }
    double& at(int i, int j) { return values[std::size_t(i) * grid.n_per_axis + j]; }
};

/// Two seeded directions. Gaussian draws are i.i.d. standard normals; the
/// filter-normalized variant then rescales each per-layer slice to the
/// Euclidean norm of the matching slice of theta0.
DirectionPair sample_directions(const nn::ModelSpec& spec, const nn::ParamVector& theta0,
                                std::uint64_t seed, DirectionKind kind);

/// f(alpha, beta) = loss(theta0 + alpha*delta1 + beta*delta2) over the grid.
/// Cells are independent, so rows may be spread over n_threads without
/// changing a single bit of the result.
LossSurface evaluate_surface(const nn::ParamVector& theta0, const nn::ModelSpec& spec,
                             const nn::Batch& eval_batch, const DirectionPair& directions,
                             const GridSpec& grid, int n_threads = 1,
                             const std::string& eval_batch_id = "");

/// Standalone SVG with marching-squares contour polylines at `levels`
/// equally spaced loss values strictly between the surface min and max.
/// A constant surface yields labeled axes and a notice instead.
std::string emit_contour(const LossSurface& surface, int levels);

/// "alpha,beta,loss" rows, row-major with alpha outermost, floats at 17
/// significant digits so a reload is bitwise faithful.
std::string surface_to_csv(const LossSurface& surface);
LossSurface surface_from_csv(const std::string& text);

}  // namespace flatland::landscape
