#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flatland/errors.hpp"
#include "flatland/flatness.hpp"
#include "flatland/landscape.hpp"
#include "flatland/nn.hpp"
#include "flatland/optim.hpp"
#include "flatland/task.hpp"

namespace flatland::continual {

struct EvalResult {
    double accuracy = 0.0;  // fraction in [0, 1]
    double mean_loss = 0.0;
};

// Argmax classification against one-hot targets; ties pick the lowest index.
EvalResult evaluate(const nn::ParamVector& params, const nn::ModelSpec& spec,
                    const nn::Batch& batch);

struct TrainTrace {
    std::vector<double> step_losses;
    std::string warning;  // set when the budget admits no step at all
};

struct TrainResult {
    nn::ParamVector params;
    TrainTrace trace;
    long passes_used = 0;
    optim::OptimizerState state;
};

// Minibatch training under a gradient-pass budget. Every optimizer step pays
// passes_per_step; training stops before the step that would overrun the
// budget. Minibatches walk a fresh shuffle of the data each epoch and keep
// the short final slice.
TrainResult train_stage(const nn::ParamVector& params, const nn::ModelSpec& spec,
                        const nn::Batch& data, const optim::OptimizerConfig& config,
                        long pass_budget, int batch_size, std::uint64_t shuffle_seed);

// lambda * base + (1 - lambda) * followup, elementwise; lambda in [0, 1].
nn::ParamVector wise_ft_merge(const nn::ParamVector& base, const nn::ParamVector& followup,
                              double lambda);

// Appends ceil(ratio * new_data.size()) samples drawn from old_data without
// replacement, then shuffles the combined batch.
nn::Batch rehearsal_mix(const nn::Batch& old_data, const nn::Batch& new_data, double ratio,
                        std::uint64_t seed);

// after - before, in whatever units the caller uses.
double forgetting_delta(double before, double after);

struct Correlation {
    double spearman = 0.0;
    double pearson = 0.0;
};

Correlation correlate(const std::vector<double>& x, const std::vector<double>& y);

// Substream seeds for one run. Single-stage training in the CLI and the full
// two-stage sequence both draw from these, so their checkpoints agree.
struct DerivedSeeds {
    std::uint64_t model = 0;
    std::uint64_t base_task = 0;
    std::uint64_t followup_task = 0;
    std::uint64_t base_shuffle = 0;
    std::uint64_t followup_shuffle = 0;
    std::uint64_t rehearsal = 0;
};

DerivedSeeds derive_seeds(std::uint64_t run_seed);

struct ProbeSpec {
    landscape::GridSpec grid;
    std::uint64_t direction_seed = 1;
    landscape::DirectionKind kind = landscape::DirectionKind::Gaussian;
    int contour_levels = 10;
    int n_threads = 1;

    bool operator==(const ProbeSpec&) const = default;
};

struct SequencePlan {
    std::string plan_id = "seq";
    nn::ModelSpec model;
    task::TaskSpec base_task;
    task::TaskSpec followup_task;
    optim::OptimizerConfig base_optimizer = optim::AdamWConfig{};
    long base_pass_budget = 640;
    optim::OptimizerConfig optimizer = optim::AdamWConfig{};
    long pass_budget = 1280;
    int batch_size = 64;
    double rehearsal_ratio = 0.0;
    std::optional<double> wiseft_lambda;
    ProbeSpec probe;
    bool eval_after_each_stage = true;

    void validate() const;

    bool operator==(const SequencePlan&) const = default;
};

struct StageReport {
    std::string name;
    std::string checkpoint_id;
    double base_task_acc_pp = 0.0;  // accuracy on the base task test set, percentage points
    double base_task_loss = 0.0;
    double own_task_acc_pp = 0.0;  // accuracy on this stage's training task test set
    double own_task_loss = 0.0;
    std::optional<flatness::FlatnessReport> flatness;
    long passes_used = 0;
    nn::ParamVector params;
};

struct RunReport {
    std::string plan_id;
    std::uint64_t seed = 0;
    double gap = 0.0;
    std::string method;
    StageReport base;
    StageReport followup;
    double forgetting_delta_pp = 0.0;  // followup base-task accuracy minus base stage's
};

// Two-stage continual run: train on the base task, continue on the follow-up
// task (optionally with rehearsal), optionally merge the two checkpoints,
// and probe the loss surface around each checkpoint on the base task's test
// set with one shared direction seed.
RunReport run_sequence(const SequencePlan& plan, std::uint64_t seed);

std::string method_name(const SequencePlan& plan);
std::string run_report_text(const RunReport& report);
std::string summary_csv_header();
std::string summary_csv_row(const RunReport& report);

}  // namespace flatland::continual
