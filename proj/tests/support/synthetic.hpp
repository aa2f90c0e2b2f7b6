#pragma once

// Seeded synthetic fixtures shared by unit and acceptance tests.

#include "mnistgen/curation.hpp"
#include "mnistgen/dqn.hpp"
#include "mnistgen/export.hpp"
#include "mnistgen/modes.hpp"
#include "mnistgen/provider.hpp"
#include "mnistgen/transforms.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <random>
#include <vector>

namespace mnistgen::testing {

// States with an analytically known best action:
//   redundancy > 0.8 -> Discard, else confidence > 0.7 -> Keep,
//   confidence < 0.4 -> Discard, otherwise Review.
// The best action earns 0.9, anything else -0.1. Next states are drawn
// independently of the action, so the greedy-in-reward policy is optimal.
class CurationEnv {
public:
    explicit CurationEnv(std::uint64_t seed, int episode_length = 4);

    RLState sample_state();
    static CurationAction optimal_action(const RLState& s);
    // Brute force over the three actions using reward().
    static CurationAction best_by_search(const RLState& s);
    static double reward(const RLState& s, CurationAction a);

    int episode_length() const noexcept { return episode_length_; }

private:
    std::mt19937_64 rng_;
    int episode_length_;
};

struct LearningOutcome {
    double optimal_rate = 0.0;
    int episodes = 0;
    double seconds = 0.0;
};

// Trains a fresh agent for up to `max_episodes` episodes, checking the greedy
// optimal-action rate on `eval_states` held-out states every `check_every`
// episodes; stops early once `target` is reached.
LearningOutcome train_on_env(std::uint64_t seed, const AgentConfig& config, int max_episodes, double target,
                             int eval_states = 1000, int check_every = 100);
double optimal_action_rate(const DqnAgent& agent, const std::vector<RLState>& states);

// Pool for the ablation benchmark: `noise_fraction` of the samples are
// mislabeled and carry low semantic confidence.
struct AblationSample {
    RLState state;
    bool noise = false;
};
std::vector<AblationSample> make_ablation_pool(std::uint64_t seed, std::size_t n, double noise_fraction);

struct AblationRun {
    std::size_t removed = 0;
    std::size_t rl_noise_removed = 0;
    std::size_t random_noise_removed = 0;
};
// Trains the agent on reward-weighted decisions over the pool, removes what
// the greedy policy discards, and removes the same number at random.
AblationRun run_ablation(std::uint64_t seed, std::size_t n = 400, double noise_fraction = 0.2);

// `clusters` tight groups of `per_cluster` unit vectors around random
// centres, shuffled deterministically. `labels[i]` is the group of item i.
struct ClusterFixture {
    std::vector<Embedding> embeddings;
    std::vector<int> labels;
};
ClusterFixture make_cluster_fixture(std::uint64_t seed, int clusters = 10, int per_cluster = 10,
                                    double noise = 0.01);

// Backprop gradient of the TD loss against central finite differences on
// `coords` random parameters of a freshly seeded default agent. Returns the
// largest relative error |a - n| / max(|a|, |n|, 1e-6).
double gradient_check(std::uint64_t seed, int coords = 40, double h = 1e-6);

// Pool entries for a cluster fixture: item i predicts flat label
// labels[i] % K with the given confidence and a small random image.
std::vector<PoolEntry> pool_from_fixture(const ClusterFixture& f, const CategoryHierarchy& h, double confidence,
                                         std::uint64_t seed);

// Writes `n` small PNGs with `.hint` sidecars naming subcategories of the
// tree template (about one in eight hints is off-topic), plus one
// undecodable file. Returns the PNG paths.
std::vector<std::filesystem::path> write_image_folder(const std::filesystem::path& dir, int n, std::uint64_t seed);

// Runs a shell command, capturing stdout and stderr. Returns the exit status.
struct CommandResult {
    int status = -1;
    std::string out;
    std::string err;
};
CommandResult run_command(const std::string& command);

// Valid artifact with random pixels, labels, split and manifest fields.
DatasetArtifact random_artifact(std::mt19937_64& rng);

// Random image with uniformly random bytes.
Image random_image(std::mt19937_64& rng, int width, int height, int channels);

// Random valid pipeline of up to `max_stages` stages for input `in` (sizes
// must be known). `out` receives the resulting shape.
Pipeline random_pipeline(std::mt19937_64& rng, const Shape& in, int max_stages, Shape* out);

}  // namespace mnistgen::testing
