#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flatland/continual.hpp"
#include "flatland/errors.hpp"

namespace flatland::config {

// A full experiment description: the sequence plan plus the seed sweep and
// the output root. Expressed on disk as a line-oriented `key = value` file
// with [section] headers; unknown sections, keys, and values are rejected.
struct RunConfig {
    continual::SequencePlan plan;
    std::vector<std::uint64_t> seeds = {1};
    std::string out_dir = "out";
    std::string preset;

    bool operator==(const RunConfig&) const = default;
};

// The built-in toy experiment: 3 clusters in 16 dimensions, a 16-32-3 tanh
// classifier, AdamW for both stages, and a 21x21 probe grid over
// [-0.5, 0.5]^2 around each checkpoint.
RunConfig default_config();

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

}  // namespace flatland::config
