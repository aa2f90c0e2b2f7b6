#pragma once

#include "mnistgen/curation.hpp"

#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <vector>

namespace mnistgen {

// Fully connected ReLU network with an explicit forward/backward pass.
class Mlp {
public:
    struct Layer {
        int in = 0;
        int out = 0;
        std::vector<double> weights;  // row-major out x in
        std::vector<double> bias;
    };

    Mlp() = default;
    // He-uniform initialisation from `seed`; the output layer is linear.
    Mlp(std::vector<int> sizes, std::uint64_t seed);

    // Post-activation outputs of every layer for a batch, row-major per sample.
    struct BatchCache {
        int n = 0;
        std::vector<std::vector<double>> acts;
    };

    std::vector<double> forward(std::span<const double> input) const;
    // `inputs` holds n samples back to back; returns n x output_size().
    std::vector<double> forward_batch(std::span<const double> inputs, int n, BatchCache* cache) const;

    // Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output)
    // for a single input. `grads` must have parameter_count() entries.
    void backward(std::span<const double> input, std::span<const double> grad_output,
                  std::vector<double>& grads) const;
    // Batched form of backward() reusing the activations from forward_batch.
    void backward_batch(const BatchCache& cache, std::span<const double> grad_output,
                        std::vector<double>& grads) const;

    std::size_t parameter_count() const;
    double& parameter(std::size_t i);
    double parameter(std::size_t i) const;
    std::vector<double> parameters() const;
    void set_parameters(std::span<const double> p);

    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }
    int input_size() const { return layers_.empty() ? 0 : layers_.front().in; }
    int output_size() const { return layers_.empty() ? 0 : layers_.back().out; }

private:
    std::vector<Layer> layers_;
};

class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(Mlp& net, const std::vector<double>& grads);

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    std::int64_t t_ = 0;
};

struct Transition {
    RLState state;
    CurationAction action = CurationAction::Keep;
    double reward = 0.0;
    RLState next_state;
    bool terminal = true;
};

// Bounded FIFO; the oldest transition is evicted first.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = 10000);

    void push(Transition t);
    std::size_t size() const noexcept { return items_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    const Transition& operator[](std::size_t i) const { return items_[i]; }
    // Uniform sampling with replacement.
    std::vector<Transition> sample(std::size_t n, std::mt19937_64& rng) const;

private:
    std::size_t capacity_;
    std::deque<Transition> items_;
};

struct AgentConfig {
    std::vector<int> hidden = {256, 128, 64};
    double learning_rate = 0.001;
    double epsilon = 0.1;
    double epsilon_decay = 0.995;
    double epsilon_min = 0.01;
    std::size_t replay_capacity = 10000;
    std::size_t batch_size = 32;
    int target_sync_interval = 100;
    double discount = 0.95;  // 0 gives bandit mode
    std::uint64_t seed = 0;

    void validate() const;
};

enum class ActMode { Explore, Exploit };

class DqnAgent {
public:
    explicit DqnAgent(AgentConfig config = {});

    std::array<double, kActionCount> q_values(const RLState& s) const;
    // Exploit: argmax-Q, ties resolved Keep < Discard < Review.
    // Explore: uniform random action with probability epsilon().
    CurationAction act(const RLState& s, ActMode mode = ActMode::Explore);

    void remember(Transition t) { replay_.push(std::move(t)); }
    // One gradient step on the mean squared TD error of `batch`.
    double train_step(const std::vector<Transition>& batch);
    // Samples a batch from replay and trains; throws when underfull.
    double train_from_replay();

    // max(epsilon_min, epsilon * decay^steps)
    double epsilon() const;
    std::int64_t steps() const noexcept { return steps_; }
    const ReplayBuffer& replay() const noexcept { return replay_; }
    const AgentConfig& config() const noexcept { return config_; }

    Mlp& online() noexcept { return online_; }
    const Mlp& online() const noexcept { return online_; }
    const Mlp& target() const noexcept { return target_; }
    void sync_target() { target_ = online_; }

    // Loss and its gradient w.r.t. the online parameters, target held fixed.
    double td_loss(const std::vector<Transition>& batch, std::vector<double>* grads) const;

private:
    AgentConfig config_;
    Mlp online_;
    Mlp target_;
    AdamOptimizer optimizer_;
    ReplayBuffer replay_;
    std::mt19937_64 rng_;
    std::int64_t steps_ = 0;
};

}  // namespace mnistgen
