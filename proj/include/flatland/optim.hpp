#pragma once

#include <cstdint>
#include <string>
#include <variant>

#include "flatland/nn.hpp"

namespace flatland::optim {

struct SgdConfig {
    double lr = 1e-2;

    bool operator==(const SgdConfig&) const = default;
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    bool operator==(const AdamWConfig&) const = default;
};

enum class BaseKind { Sgd, AdamW };

// Two-step sharpness-aware update: gradient at the current point defines an
// ascent perturbation of norm rho, the base rule then consumes the gradient
// taken at the perturbed point while updating the original parameters.
struct SamConfig {
    double rho = 2.0;
    BaseKind base = BaseKind::AdamW;
    SgdConfig sgd;
    AdamWConfig adamw;
    double grad_norm_floor = 1e-12;

    bool operator==(const SamConfig&) const = default;
};

using OptimizerConfig = std::variant<SgdConfig, AdamWConfig, SamConfig>;

struct OptimizerState {
    long step_count = 0;
    nn::ParamVector first_moment;
    nn::ParamVector second_moment;
    long passes_used = 0;
};

/// Plain gradient descent; stateless.
nn::ParamVector sgd_step(const nn::ParamVector& params, const nn::Gradient& grad, double lr);

/// Bias-corrected moments with decoupled weight decay; counts one pass.
nn::ParamVector adamw_step(const nn::ParamVector& params, const nn::Gradient& grad,
                           OptimizerState& state, const AdamWConfig& cfg);

/// rho * grad / ||grad||, or the zero vector when ||grad|| is at or below
/// the floor.
nn::Gradient sam_perturbation(const nn::Gradient& grad, double rho, double grad_norm_floor);

/// One SAM step on a single batch; counts two passes. When loss_at_params is
/// non-null it receives the unperturbed batch loss.
nn::ParamVector sam_step(const nn::ParamVector& params, const nn::ModelSpec& spec,
                         const nn::Batch& batch, const SamConfig& cfg, OptimizerState& state,
                         double* loss_at_params = nullptr);

/// Gradient passes one step consumes: 2 for SAM, 1 otherwise.
int passes_per_step(const OptimizerConfig& cfg);

/// Stable identifier: "sgd", "adamw", "sam-sgd" or "sam-adamw".
std::string optimizer_name(const OptimizerConfig& cfg);

/// One training step under any optimizer config, with uniform pass
/// accounting; step_loss receives the batch loss at the incoming params.
nn::ParamVector optimizer_step(const nn::ParamVector& params, const nn::ModelSpec& spec,
                               const nn::Batch& batch, const OptimizerConfig& cfg,
                               OptimizerState& state, double* step_loss = nullptr);

}  // namespace flatland::optim
