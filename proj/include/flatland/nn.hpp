#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flatland/errors.hpp"

namespace flatland::nn {

enum class Activation { Tanh, Relu };
enum class LossKind { Mse, SoftmaxCrossEntropy };

const char* to_string(Activation a);
const char* to_string(LossKind k);
Activation activation_from_string(const std::string& s);
LossKind loss_kind_from_string(const std::string& s);

/// Dense row-major matrix of doubles; rows are samples.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(std::size_t(r) * std::size_t(c), 0.0) {}

    double& at(int r, int c) { return data[std::size_t(r) * cols + c]; }
    double at(int r, int c) const { return data[std::size_t(r) * cols + c]; }
};

/// Architecture plus init seed. Widths run input-first, output-last;
/// hidden layers share one activation, the output layer is linear.
struct ModelSpec {
    std::vector<int> layer_widths;
    Activation activation = Activation::Tanh;
    LossKind loss_kind = LossKind::SoftmaxCrossEntropy;
    std::uint64_t init_seed = 0;

    void validate() const;
    int layer_count() const { return int(layer_widths.size()) - 1; }
    int input_dim() const { return layer_widths.front(); }
    int output_dim() const { return layer_widths.back(); }
    long param_count() const;

    bool operator==(const ModelSpec&) const = default;
};

// Flat parameter buffer. Canonical order: for each layer, the
// (out x in) weight matrix row-major, then the bias vector.
using ParamVector = std::vector<double>;
using Gradient = std::vector<double>;

/// Offsets of one layer's weight block and bias block inside a ParamVector.
struct LayerView {
    int in = 0;
    int out = 0;
    long w_offset = 0;
    long b_offset = 0;
};

std::vector<LayerView> layer_views(const ModelSpec& spec);

struct LayerParams {
    Matrix weights;  // out x in
    std::vector<double> bias;
};

std::vector<LayerParams> unflatten(const ParamVector& params, const ModelSpec& spec);
ParamVector flatten(const std::vector<LayerParams>& layers, const ModelSpec& spec);

struct Batch {
    Matrix inputs;   // n_samples x input_dim
    Matrix targets;  // n_samples x output_dim; one-hot rows for cross-entropy
    int size() const { return inputs.rows; }
};

/// Xavier-uniform weights, zero biases, fully determined by init_seed.
ParamVector init_model(const ModelSpec& spec);

/// Batched predictions; pure, safe to call from several threads at once.
Matrix forward(const ParamVector& params, const ModelSpec& spec, const Batch& batch);

/// Mean loss over the batch. MSE averages over samples and output dims;
/// cross-entropy folds softmax into a log-sum-exp form and averages over
/// samples only.
double loss(const Matrix& predictions, const Matrix& targets, LossKind kind);

struct BackwardResult {
    double loss = 0.0;
    Gradient grad;
};

/// Analytic loss gradient with respect to every parameter.
BackwardResult backward(const ParamVector& params, const ModelSpec& spec, const Batch& batch);

/// Central-difference gradient oracle; slow, meant for tests.
Gradient finite_diff_grad(const ParamVector& params, const ModelSpec& spec, const Batch& batch,
                          double h);

}  // namespace flatland::nn
