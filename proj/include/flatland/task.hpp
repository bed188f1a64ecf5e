#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flatland/errors.hpp"
#include "flatland/nn.hpp"

namespace flatland::task {

enum class TaskFamily { Rotation, Permutation };

const char* to_string(TaskFamily f);
TaskFamily task_family_from_string(const std::string& s);

// A synthetic classification task: Gaussian clusters on the unit circle in
// the first two input coordinates, noise in every coordinate. `gap` in [0, 1]
// controls how far a follow-up task drifts from the gap = 0 layout:
// rotation turns the class means by gap * pi/2, permutation shuffles the
// first ceil(gap * input_dim) input coordinates. gap = 0 reproduces the base
// task bit for bit under either family.
struct TaskSpec {
    TaskFamily family = TaskFamily::Rotation;
    double gap = 0.0;
    int input_dim = 16;
    int n_classes = 4;
    int n_train = 2048;
    int n_test = 512;
    std::uint64_t seed = 0;
    double noise_sigma = 0.3;

    void validate() const;

    bool operator==(const TaskSpec&) const = default;
};

struct Task {
    TaskSpec spec;
    nn::Batch train;
    nn::Batch test;
    nn::Matrix class_means;        // n_classes x input_dim
    std::vector<int> permutation;  // applied as input[i] = raw[permutation[i]]
};

Task make_task(const TaskSpec& spec);

}  // namespace flatland::task
