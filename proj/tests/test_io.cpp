#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>

#include "flatland/checkpoint.hpp"
#include "flatland/config.hpp"
#include "flatland/optim.hpp"

using namespace flatland;
using checkpoint::Checkpoint;
using Kind = CheckpointError::Kind;

namespace {

std::filesystem::path scratch_dir() {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("flatland_io_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    return dir;
}

nn::ModelSpec sample_spec() {
    nn::ModelSpec spec;
    spec.layer_widths = {3, 5, 2};
    spec.activation = nn::Activation::Relu;
    spec.loss_kind = nn::LossKind::Mse;
    spec.init_seed = 808;
    return spec;
}

std::string recrc(std::string bytes) {
    const auto* d = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t c = checkpoint::crc32(d + 4, bytes.size() - 8);
    for (int i = 0; i < 4; ++i) bytes[bytes.size() - 4 + i] = char((c >> (8 * i)) & 0xFF);
    return bytes;
}

template <typename F>
Kind thrown_kind(F&& f) {
    try {
        f();
    } catch (const CheckpointError& e) {
        return e.kind;
    }
    FAIL("expected a CheckpointError");
    return Kind::OpenFailed;
}

}  // namespace

TEST_CASE("crc32 matches the reference test vector") {
    const unsigned char probe[] = "123456789";
    CHECK(checkpoint::crc32(probe, 9) == 0xCBF43926u);
    CHECK(checkpoint::crc32(probe, 0) == 0u);
}

TEST_CASE("checkpoints round-trip bitwise through bytes and files") {
    const nn::ModelSpec spec = sample_spec();
    const nn::ParamVector params = nn::init_model(spec);

    const std::string bytes = checkpoint::encode_checkpoint(spec, params);
    const Checkpoint decoded = checkpoint::decode_checkpoint(bytes);
    CHECK(decoded.params == params);
    CHECK(decoded.spec.layer_widths == spec.layer_widths);
    CHECK(decoded.spec.activation == spec.activation);
    CHECK(decoded.spec.loss_kind == spec.loss_kind);

    const std::string path = (scratch_dir() / "roundtrip.flnd").string();
    checkpoint::save_checkpoint(path, spec, params);
    const Checkpoint loaded = checkpoint::load_checkpoint(path);
    CHECK(loaded.params == params);
    CHECK(loaded.spec.layer_widths == spec.layer_widths);

    checkpoint::save_checkpoint(path, spec, params);
    CHECK(checkpoint::load_checkpoint(path).params == params);
}

TEST_CASE("each corruption mode reports its own error kind") {
    const nn::ModelSpec spec = sample_spec();
    const nn::ParamVector params = nn::init_model(spec);
    const std::string good = checkpoint::encode_checkpoint(spec, params);

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    CHECK(thrown_kind([&] { checkpoint::decode_checkpoint(bad_magic); }) == Kind::BadMagic);

    std::string flipped = good;
    flipped[good.size() / 2] = char(flipped[good.size() / 2] ^ 0x40);
    CHECK(thrown_kind([&] { checkpoint::decode_checkpoint(flipped); }) == Kind::BadCrc);

    CHECK(thrown_kind([&] { checkpoint::decode_checkpoint("FL"); }) == Kind::Truncated);
    CHECK(thrown_kind([&] { checkpoint::decode_checkpoint("FLNDxy"); }) == Kind::Truncated);

    std::string new_version = good;
    new_version[4] = 2;
    new_version = recrc(new_version);
    CHECK(thrown_kind([&] { checkpoint::decode_checkpoint(new_version); }) ==
          Kind::UnsupportedVersion);

    std::string bad_activation = good;
    bad_activation[4 + 2 + 2 + 12] = 7;
    bad_activation = recrc(bad_activation);
    CHECK(thrown_kind([&] { checkpoint::decode_checkpoint(bad_activation); }) == Kind::BadField);

    std::string short_params = good;
    short_params.erase(short_params.size() - 12, 8);
    short_params = recrc(short_params);
    CHECK(thrown_kind([&] { checkpoint::decode_checkpoint(short_params); }) == Kind::Truncated);

    CHECK(thrown_kind([&] { checkpoint::load_checkpoint("/nonexistent/nowhere.flnd"); }) ==
          Kind::OpenFailed);
}

TEST_CASE("encoding rejects mismatched or non-finite parameters") {
    const nn::ModelSpec spec = sample_spec();
    nn::ParamVector params = nn::init_model(spec);
    CHECK_THROWS_AS(checkpoint::encode_checkpoint(spec, nn::ParamVector(3, 0.0)),
                    DimensionError);
    params[5] = std::nan("");
    CHECK_THROWS_AS(checkpoint::encode_checkpoint(spec, params), NumericError);
}

TEST_CASE("an empty config yields the built-in experiment") {
    CHECK(config::parse_config("") == config::default_config());
    CHECK(config::parse_config("# just a comment\n\n; another\n") == config::default_config());
}

TEST_CASE("configs round-trip through their serialized form") {
    const config::RunConfig plain = config::default_config();
    CHECK(config::parse_config(config::serialize_config(plain)) == plain);

    config::RunConfig custom = config::default_config();
    custom.plan.plan_id = "sweep-7";
    custom.seeds = {1, 2, 3};
    custom.out_dir = "results";
    custom.plan.model.layer_widths = {16, 24, 3};
    custom.plan.model.activation = nn::Activation::Relu;
    custom.plan.base_task.gap = 0.0;
    custom.plan.followup_task.family = task::TaskFamily::Permutation;
    custom.plan.followup_task.gap = 0.75;
    optim::SamConfig sam;
    sam.rho = 0.5;
    sam.adamw.lr = 2e-3;
    custom.plan.optimizer = sam;
    optim::SgdConfig sgd;
    sgd.lr = 0.05;
    custom.plan.base_optimizer = sgd;
    custom.plan.rehearsal_ratio = 0.25;
    custom.plan.wiseft_lambda = 0.5;
    custom.plan.probe.grid.n_per_axis = 11;
    custom.plan.probe.grid.alpha_min = -0.25;
    custom.plan.probe.grid.alpha_max = 0.75;
    custom.plan.probe.direction_seed = 9;
    custom.plan.probe.n_threads = 2;
    custom.plan.eval_after_each_stage = false;

    const std::string text = config::serialize_config(custom);
    const config::RunConfig back = config::parse_config(text);
    CHECK(back == custom);
    CHECK(config::serialize_config(back) == text);
}

TEST_CASE("the paper-defaults preset resolves sam hyperparameters") {
    const config::RunConfig cfg = config::parse_config("[run]\npreset = paper-defaults\n");
    const auto& sam = std::get<optim::SamConfig>(cfg.plan.optimizer);
    CHECK(sam.rho == 2.0);
    CHECK(sam.base == optim::BaseKind::AdamW);
    CHECK(sam.adamw.lr == 5e-6);
    CHECK(cfg.plan.batch_size == 128);
    CHECK(std::holds_alternative<optim::AdamWConfig>(cfg.plan.base_optimizer));
    CHECK(config::serialize_config(cfg).find("rho = 2\n") != std::string::npos);

    const config::RunConfig tuned = config::parse_config(
        "[run]\npreset = paper-defaults\n[optimizer]\nrho = 0.5\n");
    CHECK(std::get<optim::SamConfig>(tuned.plan.optimizer).rho == 0.5);
    CHECK(std::get<optim::SamConfig>(tuned.plan.optimizer).adamw.lr == 5e-6);

    const config::RunConfig overridden = config::parse_config(
        "[run]\npreset = paper-defaults\n[optimizer]\nkind = adamw\n[train]\nbatch_size = 64\n");
    const auto& adamw = std::get<optim::AdamWConfig>(overridden.plan.optimizer);
    CHECK(adamw.lr == 5e-6);
    CHECK(overridden.plan.batch_size == 64);

    CHECK_THROWS_AS(config::parse_config("[run]\npreset = mystery\n"), ConfigError);
}

TEST_CASE("task keys flow to both stages until followup overrides them") {
    const config::RunConfig one = config::parse_config("[task]\ngap = 0.25\n");
    CHECK(one.plan.base_task.gap == 0.25);
    CHECK(one.plan.followup_task.gap == 0.25);

    const config::RunConfig two =
        config::parse_config("[task]\ngap = 0.25\n[followup]\ngap = 0.75\n");
    CHECK(two.plan.base_task.gap == 0.25);
    CHECK(two.plan.followup_task.gap == 0.75);

    const config::RunConfig dup = config::parse_config("[task]\ngap = 0.5\ngap = 0.125\n");
    CHECK(dup.plan.base_task.gap == 0.125);
}

TEST_CASE("config errors name the offending construct") {
    try {
        config::parse_config("[mystery]\nx = 1\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("mystery") != std::string::npos);
    }
    try {
        config::parse_config("[task]\nbogus = 1\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("task.bogus") != std::string::npos);
    }
    try {
        config::parse_config("[task]\ngap = sideways\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("task.gap") != std::string::npos);
    }
    CHECK_THROWS_AS(config::parse_config("stray = 1\n"), ConfigError);
    CHECK_THROWS_AS(config::parse_config("[run]\nnot a pair\n"), ConfigError);
    CHECK_THROWS_AS(config::parse_config("[run]\nseeds = 1,-3\n"), ConfigError);
    CHECK_THROWS_AS(config::parse_config("[train]\neval_after_each_stage = yes\n"), ConfigError);
    CHECK_THROWS_AS(config::parse_config("[optimizer]\nkind = sgd\nbeta1 = 0.5\n"), ConfigError);
    CHECK_THROWS_AS(config::parse_config("[model]\nwidths = 16,32\n"), ConfigError);
    CHECK_THROWS_AS(config::load_config("/nonexistent/config.cfg"), ConfigError);
}

TEST_CASE("optimizer sections build every optimizer kind") {
    const config::RunConfig sgd_cfg =
        config::parse_config("[optimizer]\nkind = sgd\nlr = 0.05\n");
    CHECK(std::get<optim::SgdConfig>(sgd_cfg.plan.optimizer).lr == 0.05);

    const config::RunConfig sam_sgd_cfg = config::parse_config(
        "[optimizer]\nkind = sam-sgd\nlr = 0.05\nrho = 0.1\n");
    const auto& ss = std::get<optim::SamConfig>(sam_sgd_cfg.plan.optimizer);
    CHECK(ss.base == optim::BaseKind::Sgd);
    CHECK(ss.sgd.lr == 0.05);
    CHECK(ss.rho == 0.1);
    CHECK(optim::optimizer_name(sam_sgd_cfg.plan.optimizer) == "sam-sgd");

    const config::RunConfig defaulted = config::parse_config("[optimizer]\nkind = sgd\n");
    CHECK(std::get<optim::SgdConfig>(defaulted.plan.optimizer).lr == 1e-2);

    const config::RunConfig adamw_cfg = config::parse_config("[optimizer]\nlr = 3e-4\n");
    CHECK(std::get<optim::AdamWConfig>(adamw_cfg.plan.optimizer).lr == 3e-4);
}
