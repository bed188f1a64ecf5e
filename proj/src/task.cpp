#include "flatland/task.hpp"

#include <cmath>
#include <numeric>

#include "flatland/rng.hpp"

namespace flatland::task {

namespace {

constexpr double kPi = 3.14159265358979323846;

constexpr std::uint64_t kPermTag = 0x9E12;
constexpr std::uint64_t kTrainTag = 0x9E13;
constexpr std::uint64_t kTestTag = 0x9E14;

nn::Matrix make_means(const TaskSpec& spec) {
    nn::Matrix means(spec.n_classes, spec.input_dim);
    const double shift = spec.family == TaskFamily::Rotation ? spec.gap * (kPi / 2.0) : 0.0;
    for (int k = 0; k < spec.n_classes; ++k) {
        const double angle = 2.0 * kPi * double(k) / double(spec.n_classes) + shift;
        means.at(k, 0) = std::cos(angle);
        means.at(k, 1) = std::sin(angle);
    }
    return means;
}

std::vector<int> make_permutation(const TaskSpec& spec) {
    std::vector<int> perm(spec.input_dim);
    std::iota(perm.begin(), perm.end(), 0);
    if (spec.family != TaskFamily::Permutation || spec.gap == 0.0) return perm;
    const int m = int(std::ceil(spec.gap * spec.input_dim));
    Rng rng(mix_seed(spec.seed, kPermTag));
    for (int i = m - 1; i > 0; --i)
        std::swap(perm[i], perm[rng.uniform_below(std::uint64_t(i) + 1)]);
    return perm;
}

nn::Batch sample_split(const TaskSpec& spec, const nn::Matrix& means,
                       const std::vector<int>& perm, int n, std::uint64_t stream_tag) {
    Rng rng(mix_seed(spec.seed, stream_tag));
    nn::Batch batch;
    batch.inputs = nn::Matrix(n, spec.input_dim);
    batch.targets = nn::Matrix(n, spec.n_classes);
    std::vector<double> raw(spec.input_dim);
    for (int s = 0; s < n; ++s) {
        const int label = s % spec.n_classes;
        for (int d = 0; d < spec.input_dim; ++d)
            raw[d] = means.at(label, d) + spec.noise_sigma * rng.normal();
        for (int d = 0; d < spec.input_dim; ++d) batch.inputs.at(s, d) = raw[perm[d]];
        batch.targets.at(s, label) = 1.0;
    }
    return batch;
}

}  // namespace

const char* to_string(TaskFamily f) {
    return f == TaskFamily::Rotation ? "rotation" : "permutation";
}

TaskFamily task_family_from_string(const std::string& s) {
    if (s == "rotation") return TaskFamily::Rotation;
    if (s == "permutation") return TaskFamily::Permutation;
    throw ConfigError("unknown task family: " + s);
}

void TaskSpec::validate() const {
    if (gap < 0.0 || gap > 1.0 || !std::isfinite(gap))
        throw ConfigError("task gap must lie in [0, 1]");
    if (input_dim < 2) throw ConfigError("task input_dim must be at least 2");
    if (n_classes < 2) throw ConfigError("task n_classes must be at least 2");
    if (n_train < 1 || n_test < 1) throw ConfigError("task split sizes must be positive");
    if (noise_sigma < 0.0 || !std::isfinite(noise_sigma))
        throw ConfigError("task noise_sigma must be non-negative");
}

Task make_task(const TaskSpec& spec) {
    spec.validate();
    Task t;
    t.spec = spec;
    t.class_means = make_means(spec);
    t.permutation = make_permutation(spec);
    t.train = sample_split(spec, t.class_means, t.permutation, spec.n_train, kTrainTag);
    t.test = sample_split(spec, t.class_means, t.permutation, spec.n_test, kTestTag);
    return t;
}

}  // namespace flatland::task
