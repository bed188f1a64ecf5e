#include "flatland/optim.hpp"

#include <cmath>

namespace flatland::optim {

namespace {

void check_sizes(const nn::ParamVector& params, const nn::Gradient& grad) {
    if (params.size() != grad.size())
        throw DimensionError("parameter and gradient lengths differ");
}

// AdamW update rule plus step_count, without pass accounting; shared by the
// plain step and the SAM inner step so passes are only counted once.
nn::ParamVector adamw_apply(const nn::ParamVector& params, const nn::Gradient& grad,
                            OptimizerState& state, const AdamWConfig& cfg) {
    check_sizes(params, grad);
    if (state.first_moment.empty()) state.first_moment.assign(params.size(), 0.0);
    if (state.second_moment.empty()) state.second_moment.assign(params.size(), 0.0);
    if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
        throw DimensionError("optimizer state does not match parameter length");

    state.step_count += 1;
    const double t = double(state.step_count);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    // decay applied as a factor on the params so a zero-gradient step
    // shrinks them by exactly (1 - lr * weight_decay)
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;

    nn::ParamVector out(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double m = state.first_moment[i] =
            cfg.beta1 * state.first_moment[i] + (1.0 - cfg.beta1) * grad[i];
        const double v = state.second_moment[i] =
            cfg.beta2 * state.second_moment[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        out[i] = params[i] * decay - cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
    return out;
}

}  // namespace

nn::ParamVector sgd_step(const nn::ParamVector& params, const nn::Gradient& grad, double lr) {
    check_sizes(params, grad);
    if (lr < 0.0) throw ConfigError("learning rate must be non-negative");
    nn::ParamVector out(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) out[i] = params[i] - lr * grad[i];
    return out;
}

nn::ParamVector adamw_step(const nn::ParamVector& params, const nn::Gradient& grad,
                           OptimizerState& state, const AdamWConfig& cfg) {
    nn::ParamVector out = adamw_apply(params, grad, state, cfg);
    state.passes_used += 1;
    return out;
}

nn::Gradient sam_perturbation(const nn::Gradient& grad, double rho, double grad_norm_floor) {
    if (rho < 0.0) throw ConfigError("sam rho must be non-negative");
    double sq = 0.0;
    for (double g : grad) sq += g * g;
    const double norm = std::sqrt(sq);
    nn::Gradient eps(grad.size(), 0.0);
    if (rho == 0.0 || !(norm > grad_norm_floor)) return eps;
    for (std::size_t i = 0; i < grad.size(); ++i) eps[i] = grad[i] / norm * rho;
    return eps;
}

nn::ParamVector sam_step(const nn::ParamVector& params, const nn::ModelSpec& spec,
                         const nn::Batch& batch, const SamConfig& cfg, OptimizerState& state,
                         double* loss_at_params) {
    const nn::BackwardResult first = nn::backward(params, spec, batch);
    if (loss_at_params) *loss_at_params = first.loss;

    const nn::Gradient eps = sam_perturbation(first.grad, cfg.rho, cfg.grad_norm_floor);
    nn::ParamVector shifted(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) shifted[i] = params[i] + eps[i];
    const nn::BackwardResult second = nn::backward(shifted, spec, batch);

    nn::ParamVector out;
    if (cfg.base == BaseKind::Sgd) {
        out = sgd_step(params, second.grad, cfg.sgd.lr);
        state.step_count += 1;
    } else {
        out = adamw_apply(params, second.grad, state, cfg.adamw);
    }
    state.passes_used += 2;
    return out;
}

int passes_per_step(const OptimizerConfig& cfg) {
    return std::holds_alternative<SamConfig>(cfg) ? 2 : 1;
}

std::string optimizer_name(const OptimizerConfig& cfg) {
    if (std::holds_alternative<SgdConfig>(cfg)) return "sgd";
    if (std::holds_alternative<AdamWConfig>(cfg)) return "adamw";
    const SamConfig& sam = std::get<SamConfig>(cfg);
    return sam.base == BaseKind::Sgd ? "sam-sgd" : "sam-adamw";
}

nn::ParamVector optimizer_step(const nn::ParamVector& params, const nn::ModelSpec& spec,
                               const nn::Batch& batch, const OptimizerConfig& cfg,
                               OptimizerState& state, double* step_loss) {
    if (const SamConfig* sam = std::get_if<SamConfig>(&cfg))
        return sam_step(params, spec, batch, *sam, state, step_loss);

    const nn::BackwardResult res = nn::backward(params, spec, batch);
    if (step_loss) *step_loss = res.loss;
    nn::ParamVector out;
    if (const SgdConfig* sgd = std::get_if<SgdConfig>(&cfg)) {
        out = sgd_step(params, res.grad, sgd->lr);
        state.step_count += 1;
        state.passes_used += 1;
    } else {
        out = adamw_step(params, res.grad, state, std::get<AdamWConfig>(cfg));
    }
    return out;
}

}  // namespace flatland::optim
