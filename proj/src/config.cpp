#include "flatland/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <map>
#include <set>

#include "flatland/landscape.hpp"
#include "flatland/optim.hpp"

namespace flatland::config {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string f17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

[[noreturn]] void bad_value(const std::string& where, const std::string& value) {
    throw ConfigError("invalid value for " + where + ": '" + value + "'");
}

double parse_double(const std::string& where, const std::string& value) {
    const char* s = value.c_str();
    char* end = nullptr;
    const double v = std::strtod(s, &end);
    if (end == s || *end != '\0') bad_value(where, value);
    return v;
}

long parse_long(const std::string& where, const std::string& value) {
    const char* s = value.c_str();
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    if (end == s || *end != '\0') bad_value(where, value);
    return v;
}

int parse_int(const std::string& where, const std::string& value) {
    return int(parse_long(where, value));
}

std::uint64_t parse_u64(const std::string& where, const std::string& value) {
    const char* s = value.c_str();
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0' || value.find('-') != std::string::npos)
        bad_value(where, value);
    return v;
}

bool parse_bool(const std::string& where, const std::string& value) {
    if (value == "true") return true;
    if (value == "false") return false;
    bad_value(where, value);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (pos <= value.size()) {
        std::size_t comma = value.find(',', pos);
        if (comma == std::string::npos) comma = value.size();
        parts.push_back(trim(value.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return parts;
}

struct Entry {
    std::string section;
    std::string key;
    std::string value;
    int line;
};

const std::set<std::string> kSections = {"run",            "model", "task",  "followup",
                                         "base_optimizer", "optimizer", "train", "probe"};
const std::set<std::string> kOptimizerKeys = {"kind", "lr",  "beta1",          "beta2",
                                              "eps",  "weight_decay", "rho",
                                              "grad_norm_floor"};

std::vector<Entry> tokenize(const std::string& text) {
    std::vector<Entry> entries;
    std::string section;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        const std::string line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!kSections.count(section))
                throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" +
                                  section + "]");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        if (section.empty())
            throw ConfigError("line " + std::to_string(line_no) + ": key outside any section");
        Entry e;
        e.section = section;
        e.key = trim(line.substr(0, eq));
        e.value = trim(line.substr(eq + 1));
        e.line = line_no;
        if (e.key.empty())
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        entries.push_back(e);
    }
    return entries;
}

void apply_task_key(task::TaskSpec& spec, const std::string& section, const Entry& e) {
    const std::string where = section + "." + e.key;
    if (e.key == "family")
        spec.family = task::task_family_from_string(e.value);
    else if (e.key == "gap")
        spec.gap = parse_double(where, e.value);
    else if (e.key == "input_dim")
        spec.input_dim = parse_int(where, e.value);
    else if (e.key == "n_classes")
        spec.n_classes = parse_int(where, e.value);
    else if (e.key == "n_train")
        spec.n_train = parse_int(where, e.value);
    else if (e.key == "n_test")
        spec.n_test = parse_int(where, e.value);
    else if (e.key == "noise_sigma")
        spec.noise_sigma = parse_double(where, e.value);
    else
        throw ConfigError("unknown key " + where);
}

struct OptimizerDraft {
    std::map<std::string, std::string> values;
    std::set<std::string> explicit_keys;

    void set_preset(const std::string& key, const std::string& value) {
        if (!explicit_keys.count(key)) values[key] = value;
    }
    void set_explicit(const std::string& key, const std::string& value) {
        values[key] = value;
        explicit_keys.insert(key);
    }
};

optim::OptimizerConfig build_optimizer(const std::string& section, const OptimizerDraft& draft) {
    std::string kind = "adamw";
    if (auto it = draft.values.find("kind"); it != draft.values.end()) kind = it->second;

    std::set<std::string> allowed = {"kind", "lr"};
    if (kind == "adamw" || kind == "sam-adamw") {
        allowed.insert("beta1");
        allowed.insert("beta2");
        allowed.insert("eps");
        allowed.insert("weight_decay");
    }
    if (kind == "sam-sgd" || kind == "sam-adamw") {
        allowed.insert("rho");
        allowed.insert("grad_norm_floor");
    }
    if (kind != "sgd" && kind != "adamw" && kind != "sam-sgd" && kind != "sam-adamw")
        throw ConfigError("invalid value for " + section + ".kind: '" + kind + "'");

    std::map<std::string, std::string> active;
    for (const auto& [key, value] : draft.values) {
        if (!allowed.count(key)) {
            if (draft.explicit_keys.count(key))
                throw ConfigError("key " + section + "." + key + " does not apply to optimizer kind " +
                                  kind);
            continue;  // stale preset key for another kind
        }
        active[key] = value;
    }

    const auto get_double = [&](const char* key, double fallback) {
        auto it = active.find(key);
        return it == active.end() ? fallback
                                  : parse_double(section + "." + key, it->second);
    };

    if (kind == "sgd") {
        optim::SgdConfig cfg;
        cfg.lr = get_double("lr", cfg.lr);
        return cfg;
    }
    if (kind == "adamw") {
        optim::AdamWConfig cfg;
        cfg.lr = get_double("lr", cfg.lr);
        cfg.beta1 = get_double("beta1", cfg.beta1);
        cfg.beta2 = get_double("beta2", cfg.beta2);
        cfg.eps = get_double("eps", cfg.eps);
        cfg.weight_decay = get_double("weight_decay", cfg.weight_decay);
        return cfg;
    }
    optim::SamConfig cfg;
    cfg.base = kind == "sam-sgd" ? optim::BaseKind::Sgd : optim::BaseKind::AdamW;
    cfg.rho = get_double("rho", cfg.rho);
    cfg.grad_norm_floor = get_double("grad_norm_floor", cfg.grad_norm_floor);
    if (cfg.base == optim::BaseKind::Sgd) {
        cfg.sgd.lr = get_double("lr", cfg.sgd.lr);
    } else {
        cfg.adamw.lr = get_double("lr", cfg.adamw.lr);
        cfg.adamw.beta1 = get_double("beta1", cfg.adamw.beta1);
        cfg.adamw.beta2 = get_double("beta2", cfg.adamw.beta2);
        cfg.adamw.eps = get_double("eps", cfg.adamw.eps);
        cfg.adamw.weight_decay = get_double("weight_decay", cfg.adamw.weight_decay);
    }
    return cfg;
}

void serialize_optimizer(std::string& out, const char* section,
                         const optim::OptimizerConfig& cfg) {
    out += std::string("[") + section + "]\n";
    out += "kind = " + optim::optimizer_name(cfg) + "\n";
    if (const auto* sgd = std::get_if<optim::SgdConfig>(&cfg)) {
        out += "lr = " + f17(sgd->lr) + "\n";
    } else if (const auto* adamw = std::get_if<optim::AdamWConfig>(&cfg)) {
        out += "lr = " + f17(adamw->lr) + "\n";
        out += "beta1 = " + f17(adamw->beta1) + "\n";
        out += "beta2 = " + f17(adamw->beta2) + "\n";
        out += "eps = " + f17(adamw->eps) + "\n";
        out += "weight_decay = " + f17(adamw->weight_decay) + "\n";
    } else {
        const auto& sam = std::get<optim::SamConfig>(cfg);
        out += "rho = " + f17(sam.rho) + "\n";
        out += "grad_norm_floor = " + f17(sam.grad_norm_floor) + "\n";
        if (sam.base == optim::BaseKind::Sgd) {
            out += "lr = " + f17(sam.sgd.lr) + "\n";
        } else {
            out += "lr = " + f17(sam.adamw.lr) + "\n";
            out += "beta1 = " + f17(sam.adamw.beta1) + "\n";
            out += "beta2 = " + f17(sam.adamw.beta2) + "\n";
            out += "eps = " + f17(sam.adamw.eps) + "\n";
            out += "weight_decay = " + f17(sam.adamw.weight_decay) + "\n";
        }
    }
}

void serialize_task(std::string& out, const char* section, const task::TaskSpec& spec) {
    out += std::string("[") + section + "]\n";
    out += std::string("family = ") + task::to_string(spec.family) + "\n";
    out += "gap = " + f17(spec.gap) + "\n";
    out += "input_dim = " + std::to_string(spec.input_dim) + "\n";
    out += "n_classes = " + std::to_string(spec.n_classes) + "\n";
    out += "n_train = " + std::to_string(spec.n_train) + "\n";
    out += "n_test = " + std::to_string(spec.n_test) + "\n";
    out += "noise_sigma = " + f17(spec.noise_sigma) + "\n";
}

}  // namespace

RunConfig default_config() {
    RunConfig cfg;
    cfg.plan.plan_id = "seq";
    cfg.plan.model.layer_widths = {16, 32, 3};
    cfg.plan.model.activation = nn::Activation::Tanh;
    cfg.plan.model.loss_kind = nn::LossKind::SoftmaxCrossEntropy;

    cfg.plan.base_task.family = task::TaskFamily::Rotation;
    cfg.plan.base_task.gap = 0.0;
    cfg.plan.base_task.input_dim = 16;
    cfg.plan.base_task.n_classes = 3;
    cfg.plan.base_task.n_train = 2048;
    cfg.plan.base_task.n_test = 512;
    cfg.plan.base_task.noise_sigma = 0.3;

    cfg.plan.followup_task = cfg.plan.base_task;
    cfg.plan.followup_task.gap = 1.0;

    cfg.plan.base_optimizer = optim::AdamWConfig{};
    cfg.plan.optimizer = optim::AdamWConfig{};
    cfg.plan.base_pass_budget = 640;
    cfg.plan.pass_budget = 1280;
    cfg.plan.batch_size = 64;
    cfg.plan.rehearsal_ratio = 0.0;
    cfg.plan.wiseft_lambda.reset();

    cfg.plan.probe.grid.alpha_min = -0.5;
    cfg.plan.probe.grid.alpha_max = 0.5;
    cfg.plan.probe.grid.beta_min = -0.5;
    cfg.plan.probe.grid.beta_max = 0.5;
    cfg.plan.probe.grid.n_per_axis = 21;
    cfg.plan.probe.direction_seed = 1;
    cfg.plan.probe.kind = landscape::DirectionKind::Gaussian;
    cfg.plan.probe.contour_levels = 10;
    cfg.plan.probe.n_threads = 1;
    cfg.plan.eval_after_each_stage = true;
    return cfg;
}

RunConfig parse_config(const std::string& text) {
    const std::vector<Entry> entries = tokenize(text);
    RunConfig cfg = default_config();

    std::string preset;
    for (const Entry& e : entries)
        if (e.section == "run" && e.key == "preset") preset = e.value;
    if (!preset.empty() && preset != "paper-defaults")
        throw ConfigError("unknown preset: '" + preset + "'");
    cfg.preset = preset;

    OptimizerDraft base_opt, opt;
    if (preset == "paper-defaults") {
        opt.set_preset("kind", "sam-adamw");
        opt.set_preset("rho", "2");
        opt.set_preset("lr", "5e-6");
        cfg.plan.batch_size = 128;
    }

    std::vector<Entry> followup_overrides;
    for (const Entry& e : entries) {
        const std::string where = e.section + "." + e.key;
        if (e.section == "run") {
            if (e.key == "plan_id")
                cfg.plan.plan_id = e.value;
            else if (e.key == "seeds") {
                cfg.seeds.clear();
                for (const std::string& part : split_list(e.value)) {
                    if (part.empty()) throw ConfigError("empty entry in run.seeds");
                    cfg.seeds.push_back(parse_u64(where, part));
                }
            } else if (e.key == "out_dir")
                cfg.out_dir = e.value;
            else if (e.key == "preset") {
            }
            else
                throw ConfigError("unknown key " + where);
        } else if (e.section == "model") {
            if (e.key == "widths") {
                cfg.plan.model.layer_widths.clear();
                for (const std::string& part : split_list(e.value)) {
                    if (part.empty()) throw ConfigError("empty entry in model.widths");
                    cfg.plan.model.layer_widths.push_back(parse_int(where, part));
                }
            } else if (e.key == "activation")
                cfg.plan.model.activation = nn::activation_from_string(e.value);
            else if (e.key == "loss")
                cfg.plan.model.loss_kind = nn::loss_kind_from_string(e.value);
            else
                throw ConfigError("unknown key " + where);
        } else if (e.section == "task") {
            apply_task_key(cfg.plan.base_task, "task", e);
            apply_task_key(cfg.plan.followup_task, "task", e);
        } else if (e.section == "followup") {
            followup_overrides.push_back(e);
        } else if (e.section == "base_optimizer") {
            if (!kOptimizerKeys.count(e.key)) throw ConfigError("unknown key " + where);
            base_opt.set_explicit(e.key, e.value);
        } else if (e.section == "optimizer") {
            if (!kOptimizerKeys.count(e.key)) throw ConfigError("unknown key " + where);
            opt.set_explicit(e.key, e.value);
        } else if (e.section == "train") {
            if (e.key == "base_pass_budget")
                cfg.plan.base_pass_budget = parse_long(where, e.value);
            else if (e.key == "pass_budget")
                cfg.plan.pass_budget = parse_long(where, e.value);
            else if (e.key == "batch_size")
                cfg.plan.batch_size = parse_int(where, e.value);
            else if (e.key == "rehearsal_ratio")
                cfg.plan.rehearsal_ratio = parse_double(where, e.value);
            else if (e.key == "wiseft_lambda") {
                if (e.value == "off")
                    cfg.plan.wiseft_lambda.reset();
                else
                    cfg.plan.wiseft_lambda = parse_double(where, e.value);
            } else if (e.key == "eval_after_each_stage")
                cfg.plan.eval_after_each_stage = parse_bool(where, e.value);
            else
                throw ConfigError("unknown key " + where);
        } else if (e.section == "probe") {
            if (e.key == "n_per_axis")
                cfg.plan.probe.grid.n_per_axis = parse_int(where, e.value);
            else if (e.key == "alpha_min")
                cfg.plan.probe.grid.alpha_min = parse_double(where, e.value);
            else if (e.key == "alpha_max")
                cfg.plan.probe.grid.alpha_max = parse_double(where, e.value);
            else if (e.key == "beta_min")
                cfg.plan.probe.grid.beta_min = parse_double(where, e.value);
            else if (e.key == "beta_max")
                cfg.plan.probe.grid.beta_max = parse_double(where, e.value);
            else if (e.key == "direction_seed")
                cfg.plan.probe.direction_seed = parse_u64(where, e.value);
            else if (e.key == "direction_kind")
                cfg.plan.probe.kind = landscape::direction_kind_from_string(e.value);
            else if (e.key == "contour_levels")
                cfg.plan.probe.contour_levels = parse_int(where, e.value);
            else if (e.key == "threads")
                cfg.plan.probe.n_threads = parse_int(where, e.value);
            else
                throw ConfigError("unknown key " + where);
        }
    }

    for (const Entry& e : followup_overrides)
        apply_task_key(cfg.plan.followup_task, "followup", e);

    cfg.plan.base_optimizer = build_optimizer("base_optimizer", base_opt);
    cfg.plan.optimizer = build_optimizer("optimizer", opt);

    if (cfg.seeds.empty()) throw ConfigError("run.seeds must name at least one seed");
    if (cfg.out_dir.empty()) throw ConfigError("run.out_dir must not be empty");
    cfg.plan.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::string text;
    char buf[65536];
    std::size_t got = 0;
    while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
    std::fclose(f);
    return parse_config(text);
}

std::string serialize_config(const RunConfig& cfg) {
    std::string out = "[run]\n";
    out += "plan_id = " + cfg.plan.plan_id + "\n";
    out += "seeds = ";
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(cfg.seeds[i]);
    }
    out += "\n";
    out += "out_dir = " + cfg.out_dir + "\n";
    out += "preset = " + cfg.preset + "\n";

    out += "\n[model]\n";
    out += "widths = ";
    for (std::size_t i = 0; i < cfg.plan.model.layer_widths.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(cfg.plan.model.layer_widths[i]);
    }
    out += "\n";
    out += std::string("activation = ") + nn::to_string(cfg.plan.model.activation) + "\n";
    out += std::string("loss = ") + nn::to_string(cfg.plan.model.loss_kind) + "\n";

    out += "\n";
    serialize_task(out, "task", cfg.plan.base_task);
    out += "\n";
    serialize_task(out, "followup", cfg.plan.followup_task);

    out += "\n";
    serialize_optimizer(out, "base_optimizer", cfg.plan.base_optimizer);
    out += "\n";
    serialize_optimizer(out, "optimizer", cfg.plan.optimizer);

    out += "\n[train]\n";
    out += "base_pass_budget = " + std::to_string(cfg.plan.base_pass_budget) + "\n";
    out += "pass_budget = " + std::to_string(cfg.plan.pass_budget) + "\n";
    out += "batch_size = " + std::to_string(cfg.plan.batch_size) + "\n";
    out += "rehearsal_ratio = " + f17(cfg.plan.rehearsal_ratio) + "\n";
    out += "wiseft_lambda = " +
           (cfg.plan.wiseft_lambda ? f17(*cfg.plan.wiseft_lambda) : std::string("off")) + "\n";
    out += std::string("eval_after_each_stage = ") +
           (cfg.plan.eval_after_each_stage ? "true" : "false") + "\n";

    out += "\n[probe]\n";
    out += "n_per_axis = " + std::to_string(cfg.plan.probe.grid.n_per_axis) + "\n";
    out += "alpha_min = " + f17(cfg.plan.probe.grid.alpha_min) + "\n";
    out += "alpha_max = " + f17(cfg.plan.probe.grid.alpha_max) + "\n";
    out += "beta_min = " + f17(cfg.plan.probe.grid.beta_min) + "\n";
    out += "beta_max = " + f17(cfg.plan.probe.grid.beta_max) + "\n";
    out += "direction_seed = " + std::to_string(cfg.plan.probe.direction_seed) + "\n";
    out += std::string("direction_kind = ") + landscape::to_string(cfg.plan.probe.kind) + "\n";
    out += "contour_levels = " + std::to_string(cfg.plan.probe.contour_levels) + "\n";
    out += "threads = " + std::to_string(cfg.plan.probe.n_threads) + "\n";
    return out;
}

}  // namespace flatland::config
