#include "mnistgen/dqn.hpp"

#include "mnistgen/error.hpp"

#include <algorithm>
#include <cmath>

namespace mnistgen {

Mlp::Mlp(std::vector<int> sizes, std::uint64_t seed) {
    if (sizes.size() < 2) throw UserError("mlp needs at least input and output sizes");
    std::mt19937_64 rng(seed);
    auto uniform = [&rng] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        Layer layer;
        layer.in = sizes[l];
        layer.out = sizes[l + 1];
        if (layer.in < 1 || layer.out < 1) throw UserError("mlp layer sizes must be positive");
        const double limit = std::sqrt(6.0 / layer.in);
        layer.weights.resize(static_cast<std::size_t>(layer.in) * layer.out);
        for (double& w : layer.weights) w = (2.0 * uniform() - 1.0) * limit;
        layer.bias.assign(static_cast<std::size_t>(layer.out), 0.0);
        layers_.push_back(std::move(layer));
    }
}

namespace {

// Four partial sums keep the FP pipeline busy without reassociation flags.
double dot(const double* a, const double* b, int n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

void axpy(double* y, double a, const double* x, int n) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

std::vector<double> Mlp::forward(std::span<const double> input) const {
    return forward_batch(input, 1, nullptr);
}

std::vector<double> Mlp::forward_batch(std::span<const double> inputs, int n, BatchCache* cache) const {
    if (n < 1 || inputs.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(input_size())) {
        throw UserError("mlp: input size mismatch");
    }
    std::vector<double> cur(inputs.begin(), inputs.end()), next;
    if (cache) {
        cache->n = n;
        cache->acts.assign(1, cur);
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& layer = layers_[l];
        next.assign(static_cast<std::size_t>(n) * layer.out, 0.0);
        for (int o = 0; o < layer.out; ++o) {
            const double* row = &layer.weights[static_cast<std::size_t>(o) * layer.in];
            const double b = layer.bias[static_cast<std::size_t>(o)];
            for (int k = 0; k < n; ++k) {
                next[static_cast<std::size_t>(k) * layer.out + o] =
                    b + dot(row, &cur[static_cast<std::size_t>(k) * layer.in], layer.in);
            }
        }
        if (l + 1 < layers_.size()) {
            for (double& v : next) v = std::max(v, 0.0);
        }
        cur.swap(next);
        if (cache) cache->acts.push_back(cur);
    }
    return cur;
}

void Mlp::backward(std::span<const double> input, std::span<const double> grad_output,
                   std::vector<double>& grads) const {
    BatchCache cache;
    forward_batch(input, 1, &cache);
    backward_batch(cache, grad_output, grads);
}

void Mlp::backward_batch(const BatchCache& cache, std::span<const double> grad_output,
                         std::vector<double>& grads) const {
    if (grads.size() != parameter_count()) throw UserError("mlp: gradient buffer size mismatch");
    const int n = cache.n;
    if (cache.acts.size() != layers_.size() + 1 ||
        grad_output.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(output_size())) {
        throw UserError("mlp: backward called with a mismatched cache");
    }
    std::vector<std::size_t> offsets(layers_.size());
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        offsets[l] = off;
        off += layers_[l].weights.size() + layers_[l].bias.size();
    }

    std::vector<double> delta(grad_output.begin(), grad_output.end());
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const Layer& layer = layers_[li];
        const std::vector<double>& x = cache.acts[li];
        double* gw = &grads[offsets[li]];
        double* gb = gw + layer.weights.size();
        for (int o = 0; o < layer.out; ++o) {
            double* grow = gw + static_cast<std::size_t>(o) * layer.in;
            for (int k = 0; k < n; ++k) {
                const double d = delta[static_cast<std::size_t>(k) * layer.out + o];
                if (d == 0.0) continue;
                axpy(grow, d, &x[static_cast<std::size_t>(k) * layer.in], layer.in);
                gb[o] += d;
            }
        }
        if (li == 0) break;
        std::vector<double> prev(static_cast<std::size_t>(n) * layer.in, 0.0);
        for (int o = 0; o < layer.out; ++o) {
            const double* row = &layer.weights[static_cast<std::size_t>(o) * layer.in];
            for (int k = 0; k < n; ++k) {
                const double d = delta[static_cast<std::size_t>(k) * layer.out + o];
                if (d != 0.0) axpy(&prev[static_cast<std::size_t>(k) * layer.in], d, row, layer.in);
            }
        }
        // ReLU derivative of the previous layer's output.
        for (std::size_t i = 0; i < prev.size(); ++i) {
            if (x[i] <= 0.0) prev[i] = 0.0;
        }
        delta.swap(prev);
    }
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
    return n;
}

double& Mlp::parameter(std::size_t i) {
    for (auto& l : layers_) {
        if (i < l.weights.size()) return l.weights[i];
        i -= l.weights.size();
        if (i < l.bias.size()) return l.bias[i];
        i -= l.bias.size();
    }
    throw UserError("mlp: parameter index out of range");
}

double Mlp::parameter(std::size_t i) const { return const_cast<Mlp*>(this)->parameter(i); }

std::vector<double> Mlp::parameters() const {
    std::vector<double> p;
    p.reserve(parameter_count());
    for (const auto& l : layers_) {
        p.insert(p.end(), l.weights.begin(), l.weights.end());
        p.insert(p.end(), l.bias.begin(), l.bias.end());
    }
    return p;
}

void Mlp::set_parameters(std::span<const double> p) {
    if (p.size() != parameter_count()) throw UserError("mlp: parameter count mismatch");
    std::size_t k = 0;
    for (auto& l : layers_) {
        for (double& w : l.weights) w = p[k++];
        for (double& b : l.bias) b = p[k++];
    }
}

void AdamOptimizer::step(Mlp& net, const std::vector<double>& grads) {
    const std::size_t n = net.parameter_count();
    if (grads.size() != n) throw UserError("adam: gradient size mismatch");
    if (m_.size() != n) {
        m_.assign(n, 0.0);
        v_.assign(n, 0.0);
        t_ = 0;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t k = 0;
    for (auto& l : net.layers()) {
        for (auto* vec : {&l.weights, &l.bias}) {
            for (double& p : *vec) {
                m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * grads[k];
                v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * grads[k] * grads[k];
                p -= lr_ * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
                ++k;
            }
        }
    }
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw UserError("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(t));
}

std::vector<Transition> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
    if (items_.empty()) throw UserError("replay buffer is empty");
    std::vector<Transition> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(items_[rng() % items_.size()]);
    return out;
}

void AgentConfig::validate() const {
    if (hidden.empty()) throw UserError("agent: at least one hidden layer required");
    for (int h : hidden) {
        if (h < 1) throw UserError("agent: hidden sizes must be positive");
    }
    if (!(learning_rate > 0)) throw UserError("agent: learning rate must be positive");
    if (!(epsilon >= 0 && epsilon <= 1)) throw UserError("agent: epsilon must lie in [0,1]");
    if (!(epsilon_decay > 0 && epsilon_decay <= 1)) throw UserError("agent: epsilon decay must lie in (0,1]");
    if (!(epsilon_min >= 0 && epsilon_min <= 1)) throw UserError("agent: epsilon floor must lie in [0,1]");
    if (replay_capacity == 0 || batch_size == 0) throw UserError("agent: replay capacity and batch size must be positive");
    if (target_sync_interval < 1) throw UserError("agent: target sync interval must be positive");
    if (!(discount >= 0 && discount <= 1)) throw UserError("agent: discount must lie in [0,1]");
}

namespace {

std::vector<int> layer_sizes(const AgentConfig& c) {
    std::vector<int> sizes = {static_cast<int>(kStateDim)};
    sizes.insert(sizes.end(), c.hidden.begin(), c.hidden.end());
    sizes.push_back(kActionCount);
    return sizes;
}

}  // namespace

DqnAgent::DqnAgent(AgentConfig config)
    : config_((config.validate(), std::move(config))),
      online_(layer_sizes(config_), config_.seed),
      target_(online_),
      optimizer_(config_.learning_rate),
      replay_(config_.replay_capacity),
      rng_(config_.seed ^ 0x5DEECE66Dull) {}

std::array<double, kActionCount> DqnAgent::q_values(const RLState& s) const {
    auto out = online_.forward(s.features);
    return {out[0], out[1], out[2]};
}

CurationAction DqnAgent::act(const RLState& s, ActMode mode) {
    if (mode == ActMode::Explore) {
        const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
        if (u < epsilon()) return static_cast<CurationAction>(rng_() % kActionCount);
    }
    auto q = q_values(s);
    int best = 0;
    for (int a = 1; a < kActionCount; ++a) {
        if (q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(best)]) best = a;
    }
    return static_cast<CurationAction>(best);
}

double DqnAgent::epsilon() const {
    return std::max(config_.epsilon_min,
                    config_.epsilon * std::pow(config_.epsilon_decay, static_cast<double>(steps_)));
}

double DqnAgent::td_loss(const std::vector<Transition>& batch, std::vector<double>* grads) const {
    if (batch.empty()) throw UserError("td loss: empty batch");
    const int n = static_cast<int>(batch.size());
    std::vector<double> states, nexts;
    states.reserve(batch.size() * kStateDim);
    for (const auto& t : batch) states.insert(states.end(), t.state.features.begin(), t.state.features.end());

    std::vector<double> y(batch.size());
    std::vector<std::size_t> boot;  // transitions that bootstrap from the target network
    for (std::size_t k = 0; k < batch.size(); ++k) {
        y[k] = batch[k].reward;
        if (!batch[k].terminal && config_.discount > 0.0) {
            boot.push_back(k);
            nexts.insert(nexts.end(), batch[k].next_state.features.begin(), batch[k].next_state.features.end());
        }
    }
    if (!boot.empty()) {
        const auto qn = target_.forward_batch(nexts, static_cast<int>(boot.size()), nullptr);
        for (std::size_t j = 0; j < boot.size(); ++j) {
            const double* row = &qn[j * kActionCount];
            y[boot[j]] += config_.discount * *std::max_element(row, row + kActionCount);
        }
    }

    Mlp::BatchCache cache;
    const auto q = online_.forward_batch(states, n, grads ? &cache : nullptr);
    const double scale = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    std::vector<double> g(static_cast<std::size_t>(n) * kActionCount, 0.0);
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const auto a = static_cast<std::size_t>(batch[k].action);
        const double err = q[k * kActionCount + a] - y[k];
        loss += scale * err * err;
        g[k * kActionCount + a] = 2.0 * scale * err;
    }
    if (grads) {
        grads->assign(online_.parameter_count(), 0.0);
        online_.backward_batch(cache, g, *grads);
    }
    return loss;
}

double DqnAgent::train_step(const std::vector<Transition>& batch) {
    std::vector<double> grads;
    const double loss = td_loss(batch, &grads);
    optimizer_.step(online_, grads);
    ++steps_;
    if (steps_ % config_.target_sync_interval == 0) sync_target();
    return loss;
}

double DqnAgent::train_from_replay() {
    if (replay_.size() < config_.batch_size) {
        throw UserError("replay buffer underfull: " + std::to_string(replay_.size()) + " < batch size " +
                        std::to_string(config_.batch_size));
    }
    return train_step(replay_.sample(config_.batch_size, rng_));
}

}  // namespace mnistgen
