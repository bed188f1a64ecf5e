#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "flatland/checkpoint.hpp"
#include "flatland/config.hpp"
#include "flatland/continual.hpp"
#include "flatland/errors.hpp"
#include "flatland/flatness.hpp"
#include "flatland/landscape.hpp"
#include "flatland/nn.hpp"
#include "flatland/task.hpp"

namespace fs = std::filesystem;
using namespace flatland;

namespace {

std::string f17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string f6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path.string());
    out.write(content.data(), std::streamsize(content.size()));
    if (!out) throw Error("cannot write file: " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path resolve_root(const std::string& flag, const std::string& cfg_out_dir) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("FLATLAND_OUT"); env && *env) return env;
    if (!cfg_out_dir.empty()) return cfg_out_dir;
    return "out";
}

struct TrainArgs {
    std::string config_path;
    std::string out;
    std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
    const config::RunConfig cfg = config::load_config(a.config_path);
    const std::uint64_t seed = a.seed ? *a.seed : cfg.seeds.front();
    const fs::path dir = resolve_root(a.out, cfg.out_dir) / cfg.plan.plan_id / "train";
    fs::create_directories(dir);

    const continual::DerivedSeeds seeds = continual::derive_seeds(seed);
    nn::ModelSpec model = cfg.plan.model;
    model.init_seed = seeds.model;
    task::TaskSpec base_spec = cfg.plan.base_task;
    base_spec.seed = seeds.base_task;
    const task::Task base = task::make_task(base_spec);

    const nn::ParamVector theta0 = nn::init_model(model);
    const continual::TrainResult result =
        continual::train_stage(theta0, model, base.train, cfg.plan.base_optimizer,
                               cfg.plan.base_pass_budget, cfg.plan.batch_size, seeds.base_shuffle);
    if (!result.trace.warning.empty()) std::cerr << "warning: " << result.trace.warning << "\n";

    const std::string stem = "base_seed" + std::to_string(seed);
    const fs::path ckpt_path = dir / (stem + ".flnd");
    checkpoint::save_checkpoint(ckpt_path.string(), model, result.params);

    std::string trace = "step,loss\n";
    for (std::size_t i = 0; i < result.trace.step_losses.size(); ++i)
        trace += std::to_string(i + 1) + "," + f17(result.trace.step_losses[i]) + "\n";
    write_file(dir / (stem + "_trace.csv"), trace);
    write_file(dir / "resolved.cfg", config::serialize_config(cfg));

    const continual::EvalResult eval = continual::evaluate(result.params, model, base.test);
    std::cout << "checkpoint: " << ckpt_path.string() << "\n"
              << "steps: " << result.trace.step_losses.size() << "\n"
              << "passes_used: " << result.passes_used << "\n"
              << "test_accuracy_pp: " << f6(eval.accuracy * 100.0) << "\n"
              << "test_loss: " << f6(eval.mean_loss) << "\n";
    return 0;
}

struct LandscapeArgs {
    std::string checkpoint_path;
    std::string config_path;
    std::string out;
    std::string task_name = "base";
    std::optional<std::string> id;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> direction_seed;
    std::optional<std::string> direction_kind;
    std::optional<int> grid_n;
    std::optional<double> alpha_min, alpha_max, beta_min, beta_max;
    std::optional<int> levels;
    std::optional<int> threads;
};

int run_landscape(const LandscapeArgs& a) {
    const config::RunConfig cfg = config::load_config(a.config_path);
    const checkpoint::Checkpoint ckpt = checkpoint::load_checkpoint(a.checkpoint_path);

    const std::uint64_t seed = a.seed ? *a.seed : cfg.seeds.front();
    const continual::DerivedSeeds seeds = continual::derive_seeds(seed);
    const bool on_base = a.task_name == "base";
    task::TaskSpec spec = on_base ? cfg.plan.base_task : cfg.plan.followup_task;
    spec.seed = on_base ? seeds.base_task : seeds.followup_task;
    if (ckpt.spec.input_dim() != spec.input_dim)
        throw ConfigError("checkpoint expects input dimension " +
                          std::to_string(ckpt.spec.input_dim()) + " but the task provides " +
                          std::to_string(spec.input_dim));
    if (ckpt.spec.layer_widths.back() != spec.n_classes)
        throw ConfigError("checkpoint has " + std::to_string(ckpt.spec.layer_widths.back()) +
                          " outputs but the task has " + std::to_string(spec.n_classes) +
                          " classes");
    const task::Task tk = task::make_task(spec);

    continual::ProbeSpec probe = cfg.plan.probe;
    if (a.grid_n) probe.grid.n_per_axis = *a.grid_n;
    if (a.alpha_min) probe.grid.alpha_min = *a.alpha_min;
    if (a.alpha_max) probe.grid.alpha_max = *a.alpha_max;
    if (a.beta_min) probe.grid.beta_min = *a.beta_min;
    if (a.beta_max) probe.grid.beta_max = *a.beta_max;
    if (a.direction_seed) probe.direction_seed = *a.direction_seed;
    if (a.direction_kind) probe.kind = landscape::direction_kind_from_string(*a.direction_kind);
    if (a.levels) probe.contour_levels = *a.levels;
    if (a.threads) probe.n_threads = *a.threads;

    const landscape::DirectionPair dirs =
        landscape::sample_directions(ckpt.spec, ckpt.params, probe.direction_seed, probe.kind);
    const landscape::LossSurface surf = landscape::evaluate_surface(
        ckpt.params, ckpt.spec, tk.test, dirs, probe.grid, probe.n_threads);
    const flatness::FlatnessReport rep = flatness::flatness_report(surf);

    const std::string id = a.id ? *a.id : fs::path(a.checkpoint_path).stem().string();
    const fs::path dir = resolve_root(a.out, cfg.out_dir) / cfg.plan.plan_id / "landscape";
    fs::create_directories(dir);
    const fs::path surface_path = dir / (id + "_surface.csv");
    const fs::path contour_path = dir / (id + "_contour.svg");
    const fs::path flatness_path = dir / (id + "_flatness.csv");
    write_file(surface_path, landscape::surface_to_csv(surf));
    write_file(contour_path, landscape::emit_contour(surf, probe.contour_levels));
    const std::string flatness_text =
        flatness::flatness_csv_header() + "\n" + flatness::flatness_csv_row(id, rep) + "\n";
    write_file(flatness_path, flatness_text);

    std::cout << "surface: " << surface_path.string() << "\n"
              << "contour: " << contour_path.string() << "\n"
              << "flatness: " << flatness_path.string() << "\n"
              << flatness_text;
    return 0;
}

struct SequenceArgs {
    std::string config_path;
    std::string out;
    std::vector<std::uint64_t> seeds;
};

int run_sequence_cmd(const SequenceArgs& a) {
    const config::RunConfig cfg = config::load_config(a.config_path);
    const std::vector<std::uint64_t> seeds = a.seeds.empty() ? cfg.seeds : a.seeds;
    const fs::path dir = resolve_root(a.out, cfg.out_dir) / cfg.plan.plan_id / "sequence";
    fs::create_directories(dir);

    std::string summary = continual::summary_csv_header() + "\n";
    int failures = 0;
    for (const std::uint64_t seed : seeds) {
        try {
            const continual::RunReport report = continual::run_sequence(cfg.plan, seed);
            nn::ModelSpec model = cfg.plan.model;
            model.init_seed = continual::derive_seeds(seed).model;
            const std::string tag = "seed" + std::to_string(seed);
            write_file(dir / ("report_" + tag + ".txt"), continual::run_report_text(report));
            checkpoint::save_checkpoint((dir / ("base_" + tag + ".flnd")).string(), model,
                                        report.base.params);
            checkpoint::save_checkpoint((dir / ("final_" + tag + ".flnd")).string(), model,
                                        report.followup.params);
            summary += continual::summary_csv_row(report) + "\n";
            std::cout << "seed " << seed
                      << ": forgetting_delta_pp = " << f6(report.forgetting_delta_pp) << "\n";
        } catch (const Error& e) {
            ++failures;
            std::cerr << "seed " << seed << " failed: " << e.what() << "\n";
        }
    }
    write_file(dir / "summary.csv", summary);
    write_file(dir / "resolved.cfg", config::serialize_config(cfg));
    std::cout << "summary: " << (dir / "summary.csv").string() << "\n";
    return failures == 0 ? 0 : 1;
}

struct SummaryRow {
    std::string plan_id;
    std::uint64_t seed = 0;
    double gap = 0;
    std::string method;
    double delta = 0, sc = 0, ag = 0, mag = 0, composite = 0;
    long passes = 0;
};

std::vector<std::string> split_on(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::string current;
    for (const char c : text) {
        if (c == sep) {
            parts.push_back(current);
            current.clear();
        } else {
            current += c;
        }
    }
    parts.push_back(current);
    return parts;
}

double num_field(const std::string& where, const std::string& text) {
    const char* s = text.c_str();
    char* end = nullptr;
    const double v = std::strtod(s, &end);
    if (end == s || *end != '\0')
        throw ConfigError(where + ": expected a number, got '" + text + "'");
    return v;
}

std::vector<SummaryRow> read_summary(const std::string& path) {
    const std::string text = read_file(path);
    std::vector<std::string> lines = split_on(text, '\n');
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty() || lines.front() != continual::summary_csv_header())
        throw ConfigError("unexpected header in " + path);
    std::vector<SummaryRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const std::string where = path + ":" + std::to_string(i + 1);
        const std::vector<std::string> f = split_on(lines[i], ',');
        if (f.size() != 10) throw ConfigError(where + ": expected 10 fields");
        SummaryRow row;
        row.plan_id = f[0];
        row.seed = std::uint64_t(num_field(where, f[1]));
        row.gap = num_field(where, f[2]);
        row.method = f[3];
        row.delta = num_field(where, f[4]);
        row.sc = num_field(where, f[5]);
        row.ag = num_field(where, f[6]);
        row.mag = num_field(where, f[7]);
        row.composite = num_field(where, f[8]);
        row.passes = long(num_field(where, f[9]));
        rows.push_back(row);
    }
    return rows;
}

struct CompareArgs {
    std::vector<std::string> inputs;
    std::string out;
};

int run_compare(const CompareArgs& a) {
    std::vector<SummaryRow> rows;
    for (const std::string& input : a.inputs) {
        const std::vector<SummaryRow> part = read_summary(input);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    if (rows.empty()) throw ConfigError("no data rows in the given summary files");

    std::set<std::tuple<std::string, std::uint64_t, std::string>> seen;
    for (const SummaryRow& row : rows)
        if (!seen.insert({row.plan_id, row.seed, row.method}).second)
            std::cerr << "warning: duplicate run " << row.plan_id << " seed " << row.seed
                      << " method " << row.method << " (statistics may be degenerate)\n";

    std::map<std::string, std::vector<const SummaryRow*>> by_method;
    for (const SummaryRow& row : rows) by_method[row.method].push_back(&row);

    struct MethodStats {
        std::string method;
        std::size_t n = 0;
        double mean_delta = 0, std_delta = 0, mean_abs = 0, mean_composite = 0;
    };
    std::vector<MethodStats> stats;
    for (const auto& [method, group] : by_method) {
        MethodStats s;
        s.method = method;
        s.n = group.size();
        for (const SummaryRow* r : group) {
            s.mean_delta += r->delta;
            s.mean_abs += std::abs(r->delta);
            s.mean_composite += r->composite;
        }
        s.mean_delta /= double(s.n);
        s.mean_abs /= double(s.n);
        s.mean_composite /= double(s.n);
        if (s.n > 1) {
            double ss = 0;
            for (const SummaryRow* r : group)
                ss += (r->delta - s.mean_delta) * (r->delta - s.mean_delta);
            s.std_delta = std::sqrt(ss / double(s.n - 1));
        }
        stats.push_back(s);
    }
    std::sort(stats.begin(), stats.end(), [](const MethodStats& x, const MethodStats& y) {
        return std::tie(x.mean_abs, x.method) < std::tie(y.mean_abs, y.method);
    });

    std::printf("%-24s %5s %14s %14s %16s %16s\n", "method", "n", "mean_delta", "std_delta",
                "mean_abs_delta", "mean_composite");
    for (const MethodStats& s : stats)
        std::printf("%-24s %5zu %14s %14s %16s %16s\n", s.method.c_str(), s.n,
                    f6(s.mean_delta).c_str(), f6(s.std_delta).c_str(), f6(s.mean_abs).c_str(),
                    f6(s.mean_composite).c_str());

    std::vector<double> composite, abs_delta;
    for (const SummaryRow& row : rows) {
        composite.push_back(row.composite);
        abs_delta.push_back(std::abs(row.delta));
    }
    try {
        const continual::Correlation c = continual::correlate(composite, abs_delta);
        std::cout << "spearman(composite, abs_forgetting) = " << f6(c.spearman) << " (pearson "
                  << f6(c.pearson) << ") over " << rows.size() << " runs\n";
    } catch (const CorrelationError& e) {
        std::cout << "correlation = undefined (" << e.what() << ")\n";
    }

    if (!a.out.empty()) {
        std::string csv = "method,n,mean_delta,std_delta,mean_abs_delta,mean_composite\n";
        for (const MethodStats& s : stats)
            csv += s.method + "," + std::to_string(s.n) + "," + f17(s.mean_delta) + "," +
                   f17(s.std_delta) + "," + f17(s.mean_abs) + "," + f17(s.mean_composite) + "\n";
        const fs::path out_path = a.out;
        if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
        write_file(out_path, csv);
        std::cout << "table: " << out_path.string() << "\n";
    }
    return 0;
}

struct MergeArgs {
    std::string a_path, b_path, out_path;
    double lambda = 0.5;
};

int run_merge(const MergeArgs& a) {
    const checkpoint::Checkpoint ca = checkpoint::load_checkpoint(a.a_path);
    const checkpoint::Checkpoint cb = checkpoint::load_checkpoint(a.b_path);
    if (ca.spec.layer_widths != cb.spec.layer_widths ||
        ca.spec.activation != cb.spec.activation || ca.spec.loss_kind != cb.spec.loss_kind)
        throw ConfigError("checkpoints disagree on model architecture");
    const nn::ParamVector merged = continual::wise_ft_merge(ca.params, cb.params, a.lambda);
    const fs::path out_path = a.out_path;
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    checkpoint::save_checkpoint(out_path.string(), ca.spec, merged);
    std::cout << "merged checkpoint: " << out_path.string() << "\n";
    return 0;
}

struct FlatnessArgs {
    std::string surface_path;
    std::string out;
    std::optional<std::string> id;
};

int run_flatness(const FlatnessArgs& a) {
    const landscape::LossSurface surf = landscape::surface_from_csv(read_file(a.surface_path));
    const flatness::FlatnessReport rep = flatness::flatness_report(surf);
    const std::string id = a.id ? *a.id : fs::path(a.surface_path).stem().string();
    const std::string text =
        flatness::flatness_csv_header() + "\n" + flatness::flatness_csv_row(id, rep) + "\n";
    std::cout << text;
    if (!a.out.empty()) {
        const fs::path out_path = a.out;
        if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
        write_file(out_path, text);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dense-network loss landscapes for continual-learning experiments"};
    app.require_subcommand(1);

    TrainArgs targs;
    CLI::App* train = app.add_subcommand("train", "train the base-stage model and save it");
    train->add_option("--config", targs.config_path, "experiment config file")->required();
    train->add_option("--seed", targs.seed, "run seed (default: first seed in the config)");
    train->add_option("--out", targs.out, "output root directory");

    LandscapeArgs largs;
    CLI::App* land =
        app.add_subcommand("landscape", "probe the loss surface around a checkpoint");
    land->add_option("--checkpoint", largs.checkpoint_path, "checkpoint file")->required();
    land->add_option("--config", largs.config_path, "experiment config file")->required();
    land->add_option("--task", largs.task_name, "evaluation task")
        ->check(CLI::IsMember({"base", "followup"}));
    land->add_option("--id", largs.id, "artifact id (default: checkpoint file stem)");
    land->add_option("--seed", largs.seed, "run seed (default: first seed in the config)");
    land->add_option("--grid-n", largs.grid_n, "grid points per axis");
    land->add_option("--alpha-min", largs.alpha_min, "alpha range lower bound");
    land->add_option("--alpha-max", largs.alpha_max, "alpha range upper bound");
    land->add_option("--beta-min", largs.beta_min, "beta range lower bound");
    land->add_option("--beta-max", largs.beta_max, "beta range upper bound");
    land->add_option("--direction-seed", largs.direction_seed, "probe direction seed");
    land->add_option("--direction-kind", largs.direction_kind, "probe direction kind")
        ->check(CLI::IsMember({"gaussian", "gaussian_filter_normalized"}));
    land->add_option("--levels", largs.levels, "contour level count");
    land->add_option("--threads", largs.threads, "worker threads for surface evaluation");
    land->add_option("--out", largs.out, "output root directory");

    SequenceArgs sargs;
    CLI::App* seq = app.add_subcommand("sequence", "run the two-task sequence end to end");
    seq->add_option("--config", sargs.config_path, "experiment config file")->required();
    seq->add_option("--seed", sargs.seeds, "run seeds (default: seeds in the config)");
    seq->add_option("--out", sargs.out, "output root directory");

    CompareArgs cargs;
    CLI::App* comp = app.add_subcommand("compare", "aggregate summary files across methods");
    comp->add_option("inputs", cargs.inputs, "summary.csv files")->expected(-1);
    comp->add_option("--out", cargs.out, "write the aggregate table to this CSV file");

    MergeArgs margs;
    CLI::App* merge = app.add_subcommand("merge", "interpolate two checkpoints");
    merge->add_option("--a", margs.a_path, "checkpoint weighted by lambda")->required();
    merge->add_option("--b", margs.b_path, "checkpoint weighted by 1 - lambda")->required();
    merge->add_option("--lambda", margs.lambda, "interpolation weight in [0, 1]")->required();
    merge->add_option("--out", margs.out_path, "output checkpoint file")->required();

    FlatnessArgs fargs;
    CLI::App* flat = app.add_subcommand("flatness", "compute flatness metrics for a surface");
    flat->add_option("--surface", fargs.surface_path, "surface CSV file")->required();
    flat->add_option("--id", fargs.id, "row id (default: surface file stem)");
    flat->add_option("--out", fargs.out, "also write the metrics to this CSV file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(train)) return run_train(targs);
        if (app.got_subcommand(land)) return run_landscape(largs);
        if (app.got_subcommand(seq)) return run_sequence_cmd(sargs);
        if (app.got_subcommand(comp)) return run_compare(cargs);
        if (app.got_subcommand(merge)) return run_merge(margs);
        if (app.got_subcommand(flat)) return run_flatness(fargs);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
