#include "flatland/nn.hpp"

#include <algorithm>
#include <cmath>

#include "flatland/rng.hpp"

namespace flatland::nn {

namespace {

void check_params(const ParamVector& params, const ModelSpec& spec) {
    if (long(params.size()) != spec.param_count())
        throw DimensionError("parameter vector has " + std::to_string(params.size()) +
                             " entries, model expects " + std::to_string(spec.param_count()));
}

void check_inputs(const Matrix& inputs, const ModelSpec& spec) {
    if (inputs.cols != spec.input_dim())
        throw DimensionError("batch input width " + std::to_string(inputs.cols) +
                             " does not match model input width " +
                             std::to_string(spec.input_dim()));
    if (inputs.rows < 1) throw DimensionError("batch is empty");
}

void check_finite(const Matrix& m, const char* where) {
    for (double v : m.data)
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + where);
}

// Affine stack with the hidden activation applied everywhere except the
// last layer. When acts is non-null it records the input batch followed by
// every layer output (post-activation), as needed by backward().
Matrix run_layers(const ParamVector& params, const ModelSpec& spec, const Matrix& inputs,
                  std::vector<Matrix>* acts) {
    spec.validate();
    check_params(params, spec);
    check_inputs(inputs, spec);

    const auto views = layer_views(spec);
    const int depth = spec.layer_count();
    if (acts) {
        acts->clear();
        acts->push_back(inputs);
    }

    Matrix current = inputs;
    for (int l = 0; l < depth; ++l) {
        const LayerView& v = views[l];
        Matrix z(current.rows, v.out);
        for (int s = 0; s < current.rows; ++s) {
            const double* xs = &current.data[std::size_t(s) * v.in];
            double* zs = &z.data[std::size_t(s) * v.out];
            for (int o = 0; o < v.out; ++o) {
                double acc = params[v.b_offset + o];
                const double* w = &params[v.w_offset + std::size_t(o) * v.in];
                for (int i = 0; i < v.in; ++i) acc += w[i] * xs[i];
                zs[o] = acc;
            }
        }
        check_finite(z, "forward pass");
        if (l + 1 < depth) {
            if (spec.activation == Activation::Tanh)
                for (double& v2 : z.data) v2 = std::tanh(v2);
            else
                for (double& v2 : z.data) v2 = v2 > 0.0 ? v2 : 0.0;
        }
        current = std::move(z);
        if (acts) acts->push_back(current);
    }
    return current;
}

}  // namespace

const char* to_string(Activation a) {
    return a == Activation::Tanh ? "tanh" : "relu";
}

const char* to_string(LossKind k) {
    return k == LossKind::Mse ? "mse" : "softmax_cross_entropy";
}

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw ConfigError("unknown activation: " + s);
}

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "mse") return LossKind::Mse;
    if (s == "softmax_cross_entropy") return LossKind::SoftmaxCrossEntropy;
    throw ConfigError("unknown loss kind: " + s);
}

void ModelSpec::validate() const {
    if (layer_widths.size() < 2)
        throw ConfigError("model needs at least an input and an output width");
    for (int w : layer_widths)
        if (w < 1) throw ConfigError("layer widths must be >= 1");
}

long ModelSpec::param_count() const {
    long n = 0;
    for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l)
        n += long(layer_widths[l]) * layer_widths[l + 1] + layer_widths[l + 1];
    return n;
}

std::vector<LayerView> layer_views(const ModelSpec& spec) {
    std::vector<LayerView> views;
    long offset = 0;
    for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
        LayerView v;
        v.in = spec.layer_widths[l];
        v.out = spec.layer_widths[l + 1];
        v.w_offset = offset;
        v.b_offset = offset + long(v.in) * v.out;
        offset = v.b_offset + v.out;
        views.push_back(v);
    }
    return views;
}

std::vector<LayerParams> unflatten(const ParamVector& params, const ModelSpec& spec) {
    spec.validate();
    check_params(params, spec);
    std::vector<LayerParams> layers;
    for (const LayerView& v : layer_views(spec)) {
        LayerParams lp;
        lp.weights = Matrix(v.out, v.in);
        std::copy_n(params.begin() + v.w_offset, std::size_t(v.out) * v.in,
                    lp.weights.data.begin());
        lp.bias.assign(params.begin() + v.b_offset, params.begin() + v.b_offset + v.out);
        layers.push_back(std::move(lp));
    }
    return layers;
}

ParamVector flatten(const std::vector<LayerParams>& layers, const ModelSpec& spec) {
    spec.validate();
    const auto views = layer_views(spec);
    if (layers.size() != views.size())
        throw DimensionError("layer count does not match model spec");
    ParamVector params(spec.param_count());
    for (std::size_t l = 0; l < views.size(); ++l) {
        const LayerView& v = views[l];
        const LayerParams& lp = layers[l];
        if (lp.weights.rows != v.out || lp.weights.cols != v.in || int(lp.bias.size()) != v.out)
            throw DimensionError("layer " + std::to_string(l) + " has unexpected shape");
        std::copy(lp.weights.data.begin(), lp.weights.data.end(), params.begin() + v.w_offset);
        std::copy(lp.bias.begin(), lp.bias.end(), params.begin() + v.b_offset);
    }
    return params;
}

ParamVector init_model(const ModelSpec& spec) {
    spec.validate();
    ParamVector params(spec.param_count(), 0.0);
    Rng rng(spec.init_seed);
    for (const LayerView& v : layer_views(spec)) {
        const double limit = std::sqrt(6.0 / (v.in + v.out));
        const long n_weights = long(v.in) * v.out;
        for (long k = 0; k < n_weights; ++k)
            params[v.w_offset + k] = rng.uniform(-limit, limit);
        // biases stay zero
    }
    return params;
}

Matrix forward(const ParamVector& params, const ModelSpec& spec, const Batch& batch) {
    return run_layers(params, spec, batch.inputs, nullptr);
}

double loss(const Matrix& predictions, const Matrix& targets, LossKind kind) {
    if (predictions.rows != targets.rows || predictions.cols != targets.cols)
        throw DimensionError("prediction and target shapes differ");
    if (predictions.rows < 1) throw DimensionError("loss over an empty batch");
    for (double v : predictions.data)
        if (!std::isfinite(v)) throw NumericError("non-finite prediction passed to loss");
    for (double v : targets.data)
        if (!std::isfinite(v)) throw NumericError("non-finite target passed to loss");

    const int n = predictions.rows;
    const int d = predictions.cols;
    double total = 0.0;
    if (kind == LossKind::Mse) {
        for (std::size_t i = 0; i < predictions.data.size(); ++i) {
            const double r = predictions.data[i] - targets.data[i];
            total += r * r;
        }
        return total / (double(n) * double(d));
    }
    for (int s = 0; s < n; ++s) {
        const double* z = &predictions.data[std::size_t(s) * d];
        const double* t = &targets.data[std::size_t(s) * d];
        double zmax = z[0];
        for (int k = 1; k < d; ++k) zmax = std::max(zmax, z[k]);
        double sum_exp = 0.0;
        double dot = 0.0;
        for (int k = 0; k < d; ++k) {
            sum_exp += std::exp(z[k] - zmax);
            dot += t[k] * z[k];
        }
        total += zmax + std::log(sum_exp) - dot;
    }
    return total / double(n);
}

BackwardResult backward(const ParamVector& params, const ModelSpec& spec, const Batch& batch) {
    if (batch.targets.cols != spec.output_dim())
        throw DimensionError("target width does not match model output width");
    if (batch.targets.rows != batch.inputs.rows)
        throw DimensionError("input and target row counts differ");

    std::vector<Matrix> acts;
    const Matrix& predictions = [&]() -> const Matrix& {
        run_layers(params, spec, batch.inputs, &acts);
        return acts.back();
    }();
    const double loss_value = loss(predictions, batch.targets, spec.loss_kind);

    const int n = batch.size();
    const int d = spec.output_dim();
    const auto views = layer_views(spec);
    const int depth = spec.layer_count();

    // dL/dZ at the linear output layer
    Matrix dz(n, d);
    if (spec.loss_kind == LossKind::Mse) {
        const double scale = 2.0 / (double(n) * double(d));
        for (std::size_t i = 0; i < dz.data.size(); ++i)
            dz.data[i] = scale * (predictions.data[i] - batch.targets.data[i]);
    } else {
        for (int s = 0; s < n; ++s) {
            const double* z = &predictions.data[std::size_t(s) * d];
            const double* t = &batch.targets.data[std::size_t(s) * d];
            double* g = &dz.data[std::size_t(s) * d];
            double zmax = z[0];
            for (int k = 1; k < d; ++k) zmax = std::max(zmax, z[k]);
            double sum_exp = 0.0;
            for (int k = 0; k < d; ++k) {
                g[k] = std::exp(z[k] - zmax);
                sum_exp += g[k];
            }
            for (int k = 0; k < d; ++k) g[k] = (g[k] / sum_exp - t[k]) / double(n);
        }
    }

    Gradient grad(params.size(), 0.0);
    for (int l = depth - 1; l >= 0; --l) {
        const LayerView& v = views[l];
        const Matrix& a_in = acts[l];
        for (int o = 0; o < v.out; ++o) {
            double* gw = &grad[v.w_offset + std::size_t(o) * v.in];
            double gb = 0.0;
            for (int s = 0; s < n; ++s) {
                const double g = dz.at(s, o);
                gb += g;
                const double* as = &a_in.data[std::size_t(s) * v.in];
                for (int i = 0; i < v.in; ++i) gw[i] += g * as[i];
            }
            grad[v.b_offset + o] = gb;
        }
        if (l > 0) {
            Matrix dprev(n, v.in);
            for (int s = 0; s < n; ++s) {
                const double* gs = &dz.data[std::size_t(s) * v.out];
                double* ds = &dprev.data[std::size_t(s) * v.in];
                for (int i = 0; i < v.in; ++i) {
                    double acc = 0.0;
                    for (int o = 0; o < v.out; ++o)
                        acc += gs[o] * params[v.w_offset + std::size_t(o) * v.in + i];
                    ds[i] = acc;
                }
            }
            // gate by the activation derivative, reconstructed from the
            // stored post-activation values
            const Matrix& a_here = acts[l];
            if (spec.activation == Activation::Tanh) {
                for (std::size_t i = 0; i < dprev.data.size(); ++i) {
                    const double a = a_here.data[i];
                    dprev.data[i] *= 1.0 - a * a;
                }
            } else {
                for (std::size_t i = 0; i < dprev.data.size(); ++i)
                    if (!(a_here.data[i] > 0.0)) dprev.data[i] = 0.0;
            }
            dz = std::move(dprev);
        }
    }
    return {loss_value, std::move(grad)};
}

Gradient finite_diff_grad(const ParamVector& params, const ModelSpec& spec, const Batch& batch,
                          double h) {
    if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
    spec.validate();
    check_params(params, spec);
    Gradient grad(params.size(), 0.0);
    ParamVector probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        probe[i] = params[i] + h;
        const double up = loss(forward(probe, spec, batch), batch.targets, spec.loss_kind);
        probe[i] = params[i] - h;
        const double down = loss(forward(probe, spec, batch), batch.targets, spec.loss_kind);
        probe[i] = params[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

}  // namespace flatland::nn
