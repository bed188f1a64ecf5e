#include "flatland/continual.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "flatland/rng.hpp"

namespace flatland::continual {

namespace {

constexpr std::uint64_t kShuffleTag = 0xC401;
constexpr std::uint64_t kRehearsalTag = 0xC402;
constexpr std::uint64_t kModelTag = 1;
constexpr std::uint64_t kBaseTaskTag = 2;
constexpr std::uint64_t kFollowupTaskTag = 3;
constexpr std::uint64_t kBaseShuffleTag = 4;
constexpr std::uint64_t kFollowupShuffleTag = 5;
constexpr std::uint64_t kRehearsalSeedTag = 6;

void append_f17(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

int argmax_row(const nn::Matrix& m, int row) {
    int best = 0;
    for (int c = 1; c < m.cols; ++c)
        if (m.at(row, c) > m.at(row, best)) best = c;
    return best;
}

nn::Batch gather_rows(const nn::Batch& data, const std::vector<long>& rows) {
    nn::Batch out;
    out.inputs = nn::Matrix(int(rows.size()), data.inputs.cols);
    out.targets = nn::Matrix(int(rows.size()), data.targets.cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (int c = 0; c < data.inputs.cols; ++c)
            out.inputs.at(int(r), c) = data.inputs.at(int(rows[r]), c);
        for (int c = 0; c < data.targets.cols; ++c)
            out.targets.at(int(r), c) = data.targets.at(int(rows[r]), c);
    }
    return out;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double shared = (double(i + 1) + double(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
        i = j + 1;
    }
    return ranks;
}

bool has_ties(const std::vector<double>& ranks) {
    for (double r : ranks)
        if (r != std::floor(r)) return true;
    std::vector<double> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
}

double pearson_of(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = double(x.size());
    double mx = 0.0, my = 0.0;
    for (double v : x) mx += v;
    for (double v : y) my += v;
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        throw CorrelationError("correlation is undefined for a constant sequence");
    return sxy / std::sqrt(sxx * syy);
}

flatness::FlatnessReport probe_checkpoint(const nn::ParamVector& params, const SequencePlan& plan,
                                          const nn::Batch& probe_batch) {
    const landscape::DirectionPair dirs = landscape::sample_directions(
        plan.model, params, plan.probe.direction_seed, plan.probe.kind);
    const landscape::LossSurface surf = landscape::evaluate_surface(
        params, plan.model, probe_batch, dirs, plan.probe.grid, plan.probe.n_threads);
    return flatness::flatness_report(surf);
}

void append_stage_text(std::string& out, const StageReport& stage) {
    out += "\n[stage " + stage.name + "]\n";
    out += "checkpoint_id = " + stage.checkpoint_id + "\n";
    out += "base_task_acc_pp = ";
    append_f17(out, stage.base_task_acc_pp);
    out += "\nbase_task_loss = ";
    append_f17(out, stage.base_task_loss);
    out += "\nown_task_acc_pp = ";
    append_f17(out, stage.own_task_acc_pp);
    out += "\nown_task_loss = ";
    append_f17(out, stage.own_task_loss);
    out += "\npasses_used = " + std::to_string(stage.passes_used) + "\n";
    if (stage.flatness) {
        out += "sc = ";
        append_f17(out, stage.flatness->sc);
        out += "\nag = ";
        append_f17(out, stage.flatness->ag);
        out += "\nmag = ";
        append_f17(out, stage.flatness->mag);
        out += "\ncomposite = ";
        append_f17(out, stage.flatness->composite);
        out += "\n";
    }
}

}  // namespace

EvalResult evaluate(const nn::ParamVector& params, const nn::ModelSpec& spec,
                    const nn::Batch& batch) {
    const nn::Matrix preds = nn::forward(params, spec, batch);
    long correct = 0;
    for (int r = 0; r < preds.rows; ++r)
        if (argmax_row(preds, r) == argmax_row(batch.targets, r)) ++correct;
    EvalResult result;
    result.accuracy = double(correct) / double(preds.rows);
    result.mean_loss = nn::loss(preds, batch.targets, spec.loss_kind);
    return result;
}

TrainResult train_stage(const nn::ParamVector& params, const nn::ModelSpec& spec,
                        const nn::Batch& data, const optim::OptimizerConfig& config,
                        long pass_budget, int batch_size, std::uint64_t shuffle_seed) {
    spec.validate();
    if (pass_budget < 1) throw ConfigError("pass budget must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    if (data.inputs.rows < 1) throw ConfigError("training data is empty");

    TrainResult result;
    result.params = params;
    const int cost = optim::passes_per_step(config);
    if (cost > pass_budget) {
        result.trace.warning = "pass budget " + std::to_string(pass_budget) +
                               " cannot fund one optimizer step costing " + std::to_string(cost);
        return result;
    }

    Rng rng(mix_seed(shuffle_seed, kShuffleTag));
    std::vector<long> order(data.inputs.rows);
    std::iota(order.begin(), order.end(), 0);

    while (result.state.passes_used + cost <= pass_budget) {
        rng.shuffle(order);
        for (std::size_t start = 0;
             start < order.size() && result.state.passes_used + cost <= pass_budget;
             start += std::size_t(batch_size)) {
            const std::size_t end = std::min(start + std::size_t(batch_size), order.size());
            const std::vector<long> rows(order.begin() + long(start), order.begin() + long(end));
            const nn::Batch mini = gather_rows(data, rows);
            double step_loss = 0.0;
            result.params =
                optim::optimizer_step(result.params, spec, mini, config, result.state, &step_loss);
            if (!std::isfinite(step_loss)) throw NumericError("training loss became non-finite");
            result.trace.step_losses.push_back(step_loss);
        }
    }
    result.passes_used = result.state.passes_used;
    return result;
}

nn::ParamVector wise_ft_merge(const nn::ParamVector& base, const nn::ParamVector& followup,
                              double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw ConfigError("merge weight lambda must lie in [0, 1]");
    if (base.size() != followup.size())
        throw DimensionError("cannot merge parameter vectors of different lengths");
    if (lambda == 0.0) return followup;
    if (lambda == 1.0) return base;
    nn::ParamVector out(base.size());
    for (std::size_t i = 0; i < base.size(); ++i)
        out[i] = lambda * base[i] + (1.0 - lambda) * followup[i];
    return out;
}

nn::Batch rehearsal_mix(const nn::Batch& old_data, const nn::Batch& new_data, double ratio,
                        std::uint64_t seed) {
    if (!(ratio >= 0.0 && ratio <= 1.0))
        throw ConfigError("rehearsal ratio must lie in [0, 1]");
    if (old_data.inputs.cols != new_data.inputs.cols ||
        old_data.targets.cols != new_data.targets.cols)
        throw DimensionError("rehearsal batches must share input and target widths");
    if (new_data.inputs.rows < 1) throw ConfigError("rehearsal needs a non-empty new batch");

    const long n_new = new_data.inputs.rows;
    const long n_old = ratio == 0.0 ? 0 : long(std::ceil(ratio * double(n_new)));
    if (n_old > old_data.inputs.rows)
        throw ConfigError("rehearsal ratio asks for more old samples than available");

    Rng rng(mix_seed(seed, kRehearsalTag));
    std::vector<long> old_idx(old_data.inputs.rows);
    std::iota(old_idx.begin(), old_idx.end(), 0);
    for (long i = 0; i < n_old; ++i) {
        const long j = i + long(rng.uniform_below(std::uint64_t(old_idx.size() - i)));
        std::swap(old_idx[i], old_idx[j]);
    }

    nn::Batch combined;
    combined.inputs = nn::Matrix(int(n_new + n_old), new_data.inputs.cols);
    combined.targets = nn::Matrix(int(n_new + n_old), new_data.targets.cols);
    for (long r = 0; r < n_new; ++r) {
        for (int c = 0; c < new_data.inputs.cols; ++c)
            combined.inputs.at(int(r), c) = new_data.inputs.at(int(r), c);
        for (int c = 0; c < new_data.targets.cols; ++c)
            combined.targets.at(int(r), c) = new_data.targets.at(int(r), c);
    }
    for (long r = 0; r < n_old; ++r) {
        for (int c = 0; c < old_data.inputs.cols; ++c)
            combined.inputs.at(int(n_new + r), c) = old_data.inputs.at(int(old_idx[r]), c);
        for (int c = 0; c < old_data.targets.cols; ++c)
            combined.targets.at(int(n_new + r), c) = old_data.targets.at(int(old_idx[r]), c);
    }

    std::vector<long> order(n_new + n_old);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    return gather_rows(combined, order);
}

double forgetting_delta(double before, double after) { return after - before; }

DerivedSeeds derive_seeds(std::uint64_t run_seed) {
    DerivedSeeds s;
    s.model = mix_seed(run_seed, kModelTag);
    s.base_task = mix_seed(run_seed, kBaseTaskTag);
    s.followup_task = mix_seed(run_seed, kFollowupTaskTag);
    s.base_shuffle = mix_seed(run_seed, kBaseShuffleTag);
    s.followup_shuffle = mix_seed(run_seed, kFollowupShuffleTag);
    s.rehearsal = mix_seed(run_seed, kRehearsalSeedTag);
    return s;
}

Correlation correlate(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        throw DimensionError("correlation needs sequences of equal length");
    if (x.size() < 3) throw CorrelationError("correlation needs at least 3 points");
    for (double v : x)
        if (!std::isfinite(v)) throw CorrelationError("correlation input is not finite");
    for (double v : y)
        if (!std::isfinite(v)) throw CorrelationError("correlation input is not finite");

    Correlation c;
    c.pearson = pearson_of(x, y);
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    if (!has_ties(rx) && !has_ties(ry)) {
        double sum_d2 = 0.0;
        for (std::size_t i = 0; i < rx.size(); ++i) sum_d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
        const double n = double(rx.size());
        c.spearman = 1.0 - 6.0 * sum_d2 / (n * (n * n - 1.0));
    } else {
        c.spearman = pearson_of(rx, ry);
    }
    return c;
}

void SequencePlan::validate() const {
    if (plan_id.empty()) throw ConfigError("plan_id must not be empty");
    for (char ch : plan_id)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' ||
              ch == '.'))
            throw ConfigError("plan_id may only use letters, digits, '_', '-' and '.'");
    model.validate();
    base_task.validate();
    followup_task.validate();
    if (base_task.input_dim != followup_task.input_dim ||
        base_task.n_classes != followup_task.n_classes)
        throw ConfigError("base and follow-up tasks must share input_dim and n_classes");
    if (model.input_dim() != base_task.input_dim)
        throw ConfigError("model input width must match the task input_dim");
    if (model.output_dim() != base_task.n_classes)
        throw ConfigError("model output width must match the task n_classes");
    if (base_pass_budget < 1 || pass_budget < 1)
        throw ConfigError("pass budgets must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    if (!(rehearsal_ratio >= 0.0 && rehearsal_ratio <= 1.0))
        throw ConfigError("rehearsal ratio must lie in [0, 1]");
    if (wiseft_lambda && !(*wiseft_lambda >= 0.0 && *wiseft_lambda <= 1.0))
        throw ConfigError("merge weight lambda must lie in [0, 1]");
    probe.grid.validate();
    if (probe.contour_levels < 2) throw ConfigError("contour levels must be at least 2");
    if (probe.n_threads < 1) throw ConfigError("probe thread count must be positive");
}

std::string method_name(const SequencePlan& plan) {
    std::string name = optim::optimizer_name(plan.optimizer);
    if (plan.rehearsal_ratio > 0.0) name += "+rehearsal";
    if (plan.wiseft_lambda) name += "+wiseft";
    return name;
}

RunReport run_sequence(const SequencePlan& plan, std::uint64_t seed) {
    plan.validate();

    const DerivedSeeds seeds = derive_seeds(seed);
    nn::ModelSpec model = plan.model;
    model.init_seed = seeds.model;
    task::TaskSpec base_spec = plan.base_task;
    base_spec.seed = seeds.base_task;
    task::TaskSpec followup_spec = plan.followup_task;
    followup_spec.seed = seeds.followup_task;

    const task::Task base_task = task::make_task(base_spec);
    const task::Task followup_task = task::make_task(followup_spec);

    RunReport report;
    report.plan_id = plan.plan_id;
    report.seed = seed;
    report.gap = plan.followup_task.gap;
    report.method = method_name(plan);

    const nn::ParamVector theta_init = nn::init_model(model);
    const TrainResult base_train =
        train_stage(theta_init, model, base_task.train, plan.base_optimizer,
                    plan.base_pass_budget, plan.batch_size, seeds.base_shuffle);

    report.base.name = "base";
    report.base.checkpoint_id = plan.plan_id + "_s" + std::to_string(seed) + "_base";
    report.base.params = base_train.params;
    report.base.passes_used = base_train.passes_used;
    {
        const EvalResult on_base = evaluate(base_train.params, model, base_task.test);
        report.base.base_task_acc_pp = on_base.accuracy * 100.0;
        report.base.base_task_loss = on_base.mean_loss;
        report.base.own_task_acc_pp = report.base.base_task_acc_pp;
        report.base.own_task_loss = report.base.base_task_loss;
    }
    if (plan.eval_after_each_stage)
        report.base.flatness = probe_checkpoint(base_train.params, plan, base_task.test);

    nn::Batch followup_data = followup_task.train;
    if (plan.rehearsal_ratio > 0.0)
        followup_data = rehearsal_mix(base_task.train, followup_task.train, plan.rehearsal_ratio,
                                      seeds.rehearsal);

    const TrainResult followup_train =
        train_stage(base_train.params, model, followup_data, plan.optimizer, plan.pass_budget,
                    plan.batch_size, seeds.followup_shuffle);

    nn::ParamVector final_params = followup_train.params;
    if (plan.wiseft_lambda)
        final_params = wise_ft_merge(base_train.params, followup_train.params, *plan.wiseft_lambda);

    report.followup.name = "followup";
    report.followup.checkpoint_id = plan.plan_id + "_s" + std::to_string(seed) + "_followup";
    report.followup.params = final_params;
    report.followup.passes_used = followup_train.passes_used;
    {
        const EvalResult on_base = evaluate(final_params, model, base_task.test);
        const EvalResult on_new = evaluate(final_params, model, followup_task.test);
        report.followup.base_task_acc_pp = on_base.accuracy * 100.0;
        report.followup.base_task_loss = on_base.mean_loss;
        report.followup.own_task_acc_pp = on_new.accuracy * 100.0;
        report.followup.own_task_loss = on_new.mean_loss;
    }
    report.followup.flatness = probe_checkpoint(final_params, plan, base_task.test);

    report.forgetting_delta_pp =
        forgetting_delta(report.base.base_task_acc_pp, report.followup.base_task_acc_pp);
    return report;
}

std::string run_report_text(const RunReport& report) {
    std::string out = "[run]\n";
    out += "plan_id = " + report.plan_id + "\n";
    out += "seed = " + std::to_string(report.seed) + "\n";
    out += "gap = ";
    append_f17(out, report.gap);
    out += "\nmethod = " + report.method + "\n";
    out += "forgetting_delta_pp = ";
    append_f17(out, report.forgetting_delta_pp);
    out += "\n";
    append_stage_text(out, report.base);
    append_stage_text(out, report.followup);
    return out;
}

std::string summary_csv_header() {
    return "plan_id,seed,gap,method,forgetting_delta,sc,ag,mag,composite,passes_used";
}

std::string summary_csv_row(const RunReport& report) {
    if (!report.followup.flatness)
        throw Error("summary row needs the final checkpoint's flatness report");
    const flatness::FlatnessReport& f = *report.followup.flatness;
    std::string out = report.plan_id + "," + std::to_string(report.seed) + ",";
    append_f17(out, report.gap);
    out += "," + report.method + ",";
    append_f17(out, report.forgetting_delta_pp);
    out += ",";
    append_f17(out, f.sc);
    out += ",";
    append_f17(out, f.ag);
    out += ",";
    append_f17(out, f.mag);
    out += ",";
    append_f17(out, f.composite);
    out += "," + std::to_string(report.followup.passes_used);
    return out;
}

}  // namespace flatland::continual
