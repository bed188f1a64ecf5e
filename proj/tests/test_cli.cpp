#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

fs::path scratch_root() {
    static const fs::path root = [] {
        const fs::path p = fs::temp_directory_path() /
                           ("flatland_cli_" + std::to_string(::getpid()));
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void spit(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(bool(out));
    out.write(content.data(), std::streamsize(content.size()));
}

CmdResult run_cli(const std::string& args, const std::string& env_prefix = "") {
    const fs::path out_path = scratch_root() / "stdout.txt";
    const fs::path err_path = scratch_root() / "stderr.txt";
    const std::string cmd = env_prefix + FLATLAND_CLI_PATH + " " + args + " > " +
                            out_path.string() + " 2> " + err_path.string();
    const int raw = std::system(cmd.c_str());
    CmdResult result;
    result.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    result.out = slurp(out_path);
    result.err = slurp(err_path);
    return result;
}

fs::path fixture_config() {
    static const fs::path path = [] {
        const fs::path p = scratch_root() / "tiny.cfg";
        spit(p,
             "[run]\n"
             "plan_id = cli\n"
             "seeds = 1,2\n"
             "out_dir = " + (scratch_root() / "cfgroot").string() + "\n"
             "[model]\n"
             "widths = 4,8,2\n"
             "[task]\n"
             "input_dim = 4\n"
             "n_classes = 2\n"
             "n_train = 64\n"
             "n_test = 32\n"
             "[followup]\n"
             "gap = 1.0\n"
             "[train]\n"
             "base_pass_budget = 32\n"
             "pass_budget = 32\n"
             "batch_size = 16\n"
             "[probe]\n"
             "n_per_axis = 5\n"
             "alpha_min = -0.5\n"
             "alpha_max = 0.5\n"
             "beta_min = -0.5\n"
             "beta_max = 0.5\n");
        return p;
    }();
    return path;
}

std::size_t count_lines(const std::string& text) {
    std::size_t n = 0;
    for (const char c : text)
        if (c == '\n') ++n;
    return n;
}

std::vector<std::string> split_csv_line(const std::string& text, std::size_t line_index) {
    std::vector<std::string> lines;
    std::string current;
    for (const char c : text) {
        if (c == '\n') {
            lines.push_back(current);
            current.clear();
        } else {
            current += c;
        }
    }
    REQUIRE(line_index < lines.size());
    std::vector<std::string> fields;
    std::string field;
    for (const char c : lines[line_index]) {
        if (c == ',') {
            fields.push_back(field);
            field.clear();
        } else {
            field += c;
        }
    }
    fields.push_back(field);
    return fields;
}

}  // namespace

TEST_CASE("usage errors exit with 2 and help exits with 0") {
    CHECK(run_cli("--help").exit_code == 0);
    CHECK(run_cli("train --help").exit_code == 0);
    CHECK(run_cli("").exit_code == 2);
    CHECK(run_cli("train").exit_code == 2);
    CHECK(run_cli("no-such-verb").exit_code == 2);

    const CmdResult missing = run_cli("train --config " + (scratch_root() / "absent.cfg").string());
    CHECK(missing.exit_code == 2);
    CHECK(missing.err.find("absent.cfg") != std::string::npos);
}

TEST_CASE("train writes deterministic artifacts under the chosen root") {
    const std::string cfg = fixture_config().string();
    const fs::path root_a = scratch_root() / "train_a";
    const fs::path root_b = scratch_root() / "train_b";

    const CmdResult first = run_cli("train --config " + cfg + " --out " + root_a.string());
    CHECK(first.exit_code == 0);
    const fs::path ckpt_a = root_a / "cli" / "train" / "base_seed1.flnd";
    const fs::path trace_a = root_a / "cli" / "train" / "base_seed1_trace.csv";
    REQUIRE(fs::exists(ckpt_a));
    REQUIRE(fs::exists(trace_a));
    CHECK(fs::exists(root_a / "cli" / "train" / "resolved.cfg"));

    const std::string trace = slurp(trace_a);
    CHECK(trace.rfind("step,loss\n", 0) == 0);
    CHECK(count_lines(trace) == 33);
    CHECK(split_csv_line(trace, 1)[0] == "1");
    CHECK(split_csv_line(trace, 32)[0] == "32");

    CHECK(run_cli("train --config " + cfg + " --out " + root_b.string()).exit_code == 0);
    CHECK(slurp(ckpt_a) == slurp(root_b / "cli" / "train" / "base_seed1.flnd"));
    CHECK(trace == slurp(root_b / "cli" / "train" / "base_seed1_trace.csv"));

    const CmdResult other_seed =
        run_cli("train --config " + cfg + " --seed 2 --out " + root_a.string());
    CHECK(other_seed.exit_code == 0);
    CHECK(slurp(root_a / "cli" / "train" / "base_seed2.flnd") != slurp(ckpt_a));
}

TEST_CASE("the output root honors flag over environment over config") {
    const std::string cfg = fixture_config().string();
    const fs::path env_root = scratch_root() / "envroot";
    const fs::path flag_root = scratch_root() / "flagroot";

    CHECK(run_cli("train --config " + cfg,
                  "FLATLAND_OUT=" + env_root.string() + " ").exit_code == 0);
    CHECK(fs::exists(env_root / "cli" / "train" / "base_seed1.flnd"));

    CHECK(run_cli("train --config " + cfg + " --out " + flag_root.string(),
                  "FLATLAND_OUT=" + env_root.string() + " ").exit_code == 0);
    CHECK(fs::exists(flag_root / "cli" / "train" / "base_seed1.flnd"));

    CHECK(run_cli("train --config " + cfg).exit_code == 0);
    CHECK(fs::exists(scratch_root() / "cfgroot" / "cli" / "train" / "base_seed1.flnd"));
}

TEST_CASE("landscape writes deterministic surface, contour, and flatness files") {
    const std::string cfg = fixture_config().string();
    const fs::path root = scratch_root() / "land";
    REQUIRE(run_cli("train --config " + cfg + " --out " + root.string()).exit_code == 0);
    const std::string ckpt = (root / "cli" / "train" / "base_seed1.flnd").string();

    const std::string invocation =
        "landscape --checkpoint " + ckpt + " --config " + cfg + " --out " + root.string();
    const CmdResult first = run_cli(invocation);
    CHECK(first.exit_code == 0);
    const fs::path dir = root / "cli" / "landscape";
    const std::string surface = slurp(dir / "base_seed1_surface.csv");
    const std::string contour = slurp(dir / "base_seed1_contour.svg");
    const std::string flat = slurp(dir / "base_seed1_flatness.csv");
    CHECK(surface.rfind("alpha,beta,loss\n", 0) == 0);
    CHECK(count_lines(surface) == 26);
    CHECK(contour.find("<svg") != std::string::npos);
    CHECK(flat.rfind("checkpoint_id,sc,ag,mag,composite,n,h_alpha,h_beta\n", 0) == 0);

    CHECK(run_cli(invocation).exit_code == 0);
    CHECK(slurp(dir / "base_seed1_surface.csv") == surface);
    CHECK(slurp(dir / "base_seed1_contour.svg") == contour);
    CHECK(slurp(dir / "base_seed1_flatness.csv") == flat);

    const std::vector<std::string> row = split_csv_line(flat, 1);
    REQUIRE(row.size() == 8);
    CHECK(row[0] == "base_seed1");
    const double sc = std::strtod(row[1].c_str(), nullptr);
    const double ag = std::strtod(row[2].c_str(), nullptr);
    const double mag = std::strtod(row[3].c_str(), nullptr);
    const double composite = std::strtod(row[4].c_str(), nullptr);
    CHECK(composite == (sc + ag + mag) / 3.0);
    CHECK(row[5] == "5");

    const CmdResult resized = run_cli(invocation + " --grid-n 3 --id coarse");
    CHECK(resized.exit_code == 0);
    CHECK(count_lines(slurp(dir / "coarse_surface.csv")) == 10);
}

TEST_CASE("a corrupted checkpoint is a run failure, not a usage failure") {
    const std::string cfg = fixture_config().string();
    const fs::path root = scratch_root() / "corrupt";
    REQUIRE(run_cli("train --config " + cfg + " --out " + root.string()).exit_code == 0);
    const fs::path ckpt = root / "cli" / "train" / "base_seed1.flnd";

    std::string bytes = slurp(ckpt);
    bytes[bytes.size() / 2] = char(bytes[bytes.size() / 2] ^ 0x20);
    const fs::path broken = root / "broken.flnd";
    spit(broken, bytes);

    const CmdResult result = run_cli("landscape --checkpoint " + broken.string() + " --config " +
                                     cfg + " --out " + root.string());
    CHECK(result.exit_code == 1);
    CHECK(result.err.find("error") != std::string::npos);
}

TEST_CASE("sequence produces per-seed reports and a rerunnable summary") {
    const std::string cfg = fixture_config().string();
    const fs::path root_a = scratch_root() / "seq_a";
    const fs::path root_b = scratch_root() / "seq_b";

    const CmdResult first = run_cli("sequence --config " + cfg + " --out " + root_a.string());
    CHECK(first.exit_code == 0);
    const fs::path dir = root_a / "cli" / "sequence";
    for (const std::string seed : {"1", "2"}) {
        CHECK(fs::exists(dir / ("report_seed" + seed + ".txt")));
        CHECK(fs::exists(dir / ("base_seed" + seed + ".flnd")));
        CHECK(fs::exists(dir / ("final_seed" + seed + ".flnd")));
    }
    const std::string summary = slurp(dir / "summary.csv");
    CHECK(summary.rfind(
              "plan_id,seed,gap,method,forgetting_delta,sc,ag,mag,composite,passes_used\n", 0) ==
          0);
    CHECK(count_lines(summary) == 3);
    CHECK(split_csv_line(summary, 1)[0] == "cli");
    CHECK(split_csv_line(summary, 1)[3] == "adamw");

    const std::string report = slurp(dir / "report_seed1.txt");
    CHECK(report.find("[run]") != std::string::npos);
    CHECK(report.find("[stage base]") != std::string::npos);
    CHECK(report.find("[stage followup]") != std::string::npos);

    CHECK(run_cli("sequence --config " + cfg + " --out " + root_b.string()).exit_code == 0);
    CHECK(slurp(root_b / "cli" / "sequence" / "summary.csv") == summary);

    const fs::path train_root = scratch_root() / "seq_train_match";
    REQUIRE(run_cli("train --config " + cfg + " --out " + train_root.string()).exit_code == 0);
    CHECK(slurp(train_root / "cli" / "train" / "base_seed1.flnd") ==
          slurp(dir / "base_seed1.flnd"));

    const CmdResult one_seed = run_cli("sequence --config " + cfg + " --seed 2 --out " +
                                       (scratch_root() / "seq_c").string());
    CHECK(one_seed.exit_code == 0);
    const std::string small =
        slurp(scratch_root() / "seq_c" / "cli" / "sequence" / "summary.csv");
    CHECK(count_lines(small) == 2);
    CHECK(split_csv_line(small, 1)[1] == "2");
}

TEST_CASE("compare aggregates summaries and flags duplicates") {
    const std::string cfg = fixture_config().string();
    const fs::path root = scratch_root() / "cmp";
    REQUIRE(run_cli("sequence --config " + cfg + " --out " + root.string()).exit_code == 0);
    const std::string summary = (root / "cli" / "sequence" / "summary.csv").string();

    const CmdResult self = run_cli("compare " + summary + " " + summary + " --out " +
                                   (root / "table.csv").string());
    CHECK(self.exit_code == 0);
    CHECK(self.err.find("duplicate run") != std::string::npos);
    CHECK(self.out.find("adamw") != std::string::npos);
    CHECK(self.out.find("spearman(composite, abs_forgetting)") != std::string::npos);

    const std::string table = slurp(root / "table.csv");
    CHECK(table.rfind("method,n,mean_delta,std_delta,mean_abs_delta,mean_composite\n", 0) == 0);
    const std::vector<std::string> row = split_csv_line(table, 1);
    REQUIRE(row.size() == 6);
    CHECK(row[0] == "adamw");
    CHECK(row[1] == "4");

    const CmdResult single = run_cli("compare " + summary);
    CHECK(single.exit_code == 0);
    CHECK(single.out.find("adamw") != std::string::npos);
    CHECK(single.err.find("duplicate run") == std::string::npos);

    CHECK(run_cli("compare").exit_code == 2);
    const fs::path bogus = scratch_root() / "bogus.csv";
    spit(bogus, "not,a,summary\n");
    const CmdResult bad = run_cli("compare " + summary + " " + bogus.string());
    CHECK(bad.exit_code == 2);
    CHECK(bad.err.find("header") != std::string::npos);
}

TEST_CASE("merge endpoints reproduce their inputs exactly") {
    const std::string cfg = fixture_config().string();
    const fs::path root = scratch_root() / "merge";
    REQUIRE(run_cli("sequence --config " + cfg + " --out " + root.string()).exit_code == 0);
    const fs::path dir = root / "cli" / "sequence";
    const std::string a = (dir / "base_seed1.flnd").string();
    const std::string b = (dir / "final_seed1.flnd").string();

    const fs::path at_one = root / "lambda1.flnd";
    CHECK(run_cli("merge --a " + a + " --b " + b + " --lambda 1 --out " + at_one.string())
              .exit_code == 0);
    CHECK(slurp(at_one) == slurp(a));

    const fs::path at_zero = root / "lambda0.flnd";
    CHECK(run_cli("merge --a " + a + " --b " + b + " --lambda 0 --out " + at_zero.string())
              .exit_code == 0);
    CHECK(slurp(at_zero) == slurp(b));

    const fs::path half = root / "half.flnd";
    CHECK(run_cli("merge --a " + a + " --b " + b + " --lambda 0.5 --out " + half.string())
              .exit_code == 0);
    CHECK(slurp(half) != slurp(a));
    CHECK(slurp(half) != slurp(b));

    CHECK(run_cli("merge --a " + a + " --b " + b + " --lambda 1.5 --out " +
                  (root / "oops.flnd").string())
              .exit_code == 2);
}

TEST_CASE("the flatness verb recomputes the landscape's metrics from its surface") {
    const std::string cfg = fixture_config().string();
    const fs::path root = scratch_root() / "flat";
    REQUIRE(run_cli("train --config " + cfg + " --out " + root.string()).exit_code == 0);
    const std::string ckpt = (root / "cli" / "train" / "base_seed1.flnd").string();
    REQUIRE(run_cli("landscape --checkpoint " + ckpt + " --config " + cfg + " --out " +
                    root.string())
                .exit_code == 0);

    const fs::path dir = root / "cli" / "landscape";
    const CmdResult result = run_cli("flatness --surface " +
                                     (dir / "base_seed1_surface.csv").string() +
                                     " --id base_seed1");
    CHECK(result.exit_code == 0);
    CHECK(result.out == slurp(dir / "base_seed1_flatness.csv"));

    const fs::path copy = root / "metrics.csv";
    CHECK(run_cli("flatness --surface " + (dir / "base_seed1_surface.csv").string() +
                  " --id base_seed1 --out " + copy.string())
              .exit_code == 0);
    CHECK(slurp(copy) == slurp(dir / "base_seed1_flatness.csv"));

    const fs::path mangled = root / "mangled.csv";
    spit(mangled, "alpha,beta,loss\n0,0,not_a_number\n");
    CHECK(run_cli("flatness --surface " + mangled.string()).exit_code == 2);
}
