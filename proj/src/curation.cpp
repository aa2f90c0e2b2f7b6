#include "mnistgen/curation.hpp"

#include "mnistgen/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace mnistgen {

std::string to_string(CurationAction a) {
    switch (a) {
        case CurationAction::Keep: return "keep";
        case CurationAction::Discard: return "discard";
        case CurationAction::Review: return "review";
    }
    return "?";
}

CurationAction action_from_string(const std::string& s) {
    if (s == "keep") return CurationAction::Keep;
    if (s == "discard") return CurationAction::Discard;
    if (s == "review") return CurationAction::Review;
    throw UserError("unknown action \"" + s + "\"");
}

StateProjector::StateProjector(std::uint64_t seed) : matrix_(kProjectionDim * kEmbeddingDim) {
    std::mt19937_64 rng(seed);
    auto uniform = [&rng] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
    for (std::size_t i = 0; i < matrix_.size(); i += 2) {
        double r = std::sqrt(-2.0 * std::log(uniform()));
        double t = 2.0 * std::numbers::pi * uniform();
        matrix_[i] = 0.25 * r * std::cos(t);
        matrix_[i + 1] = 0.25 * r * std::sin(t);
    }
}

std::array<double, kProjectionDim> StateProjector::project(const Embedding& e) const {
    if (e.values.size() != kEmbeddingDim) throw UserError("projection: embedding must be 512-dim");
    std::array<double, kProjectionDim> out{};
    for (std::size_t r = 0; r < kProjectionDim; ++r) {
        const double* row = &matrix_[r * kEmbeddingDim];
        double acc = 0.0;
        for (std::size_t c = 0; c < kEmbeddingDim; ++c) acc += row[c] * e.values[c];
        out[r] = acc;
    }
    return out;
}

RLState make_state(const StateProjector& projector, const Embedding& embedding,
                   const VisualAttributes& visual, double confidence, double class_fraction,
                   double redundancy_value) {
    RLState s;
    auto p = projector.project(embedding);
    std::copy(p.begin(), p.end(), s.features.begin());
    s.features[16] = visual.brightness;
    s.features[17] = visual.contrast;
    s.features[18] = visual.edge_density;
    s.features[19] = confidence;
    s.features[20] = class_fraction;
    s.features[21] = redundancy_value;
    for (double v : s.features) {
        if (!std::isfinite(v)) throw UserError("state feature is not finite");
    }
    return s;
}

void RewardWeights::validate() const {
    for (double l : {lambda1, lambda2, lambda3, lambda4}) {
        if (!(l >= 0.0) || !std::isfinite(l)) throw UserError("reward weights must be non-negative");
    }
}

std::int64_t ClassDistribution::total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

double class_entropy(const ClassDistribution& d) {
    for (auto c : d.counts) {
        if (c < 0) throw UserError("class counts must be non-negative");
    }
    const auto total = d.total();
    if (d.counts.empty() || total < 1) throw UserError("empty class distribution");
    if (d.counts.size() == 1) return 0.0;
    double h = 0.0;
    for (auto c : d.counts) {
        if (c == 0) continue;
        double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return std::clamp(h / std::log(static_cast<double>(d.counts.size())), 0.0, 1.0);
}

double redundancy(const Embedding& e, const std::vector<Embedding>& kept) {
    double best = 0.0;
    for (const auto& k : kept) best = std::max(best, mapped_cosine(e, k));
    return best;
}

namespace {

void check_unit(double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) {
        throw UserError(std::string("reward input ") + what + " must lie in [0,1]");
    }
}

}  // namespace

double compute_reward_from_entropy(double conf, double entropy, double model_acc, double red,
                                   const RewardWeights& w) {
    check_unit(conf, "conf");
    check_unit(entropy, "entropy");
    check_unit(model_acc, "model_acc");
    check_unit(red, "redundancy");
    w.validate();
    return w.lambda1 * conf + w.lambda2 * entropy + w.lambda3 * model_acc - w.lambda4 * red;
}

double compute_reward(double conf, const ClassDistribution& d, double model_acc, double red,
                      const RewardWeights& w) {
    return compute_reward_from_entropy(conf, class_entropy(d), model_acc, red, w);
}

double action_confidence(CurationAction a, double conf) {
    switch (a) {
        case CurationAction::Keep: return conf;
        case CurationAction::Discard: return 1.0 - conf;
        case CurationAction::Review: return 0.5;
    }
    return conf;
}

std::string to_string(Route r) {
    switch (r) {
        case Route::AutoCategorize: return "auto";
        case Route::HumanReview: return "review";
        case Route::AutoRemove: return "remove";
    }
    return "?";
}

Route route_confidence(double conf, const RoutingThresholds& t) {
    if (conf > t.high) return Route::AutoCategorize;
    if (conf >= t.low) return Route::HumanReview;
    return Route::AutoRemove;
}

std::vector<std::vector<std::size_t>> cluster_embeddings(const std::vector<Embedding>& es,
                                                         double sim_threshold) {
    if (!(sim_threshold >= 0.0 && sim_threshold <= 1.0)) {
        throw UserError("cluster threshold must lie in [0,1]");
    }
    const std::size_t n = es.size();
    std::vector<std::vector<std::size_t>> members(n);
    for (std::size_t i = 0; i < n; ++i) members[i] = {i};
    if (n < 2) return n ? members : std::vector<std::vector<std::size_t>>{};

    std::vector<double> sim(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            sim[i * n + j] = sim[j * n + i] = mapped_cosine(es[i], es[j]);
        }
    }
    std::vector<bool> active(n, true);
    constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> best(n, none);

    // best[i]: most similar active partner of i, smallest index on ties.
    auto refresh = [&](std::size_t i) {
        best[i] = none;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || !active[j]) continue;
            if (best[i] == none || sim[i * n + j] > sim[i * n + best[i]]) best[i] = j;
        }
    };
    for (std::size_t i = 0; i < n; ++i) refresh(i);

    for (;;) {
        std::size_t a = none;
        for (std::size_t i = 0; i < n; ++i) {
            if (!active[i] || best[i] == none) continue;
            if (a == none || sim[i * n + best[i]] > sim[a * n + best[a]]) a = i;
        }
        if (a == none || sim[a * n + best[a]] < sim_threshold) break;
        std::size_t b = best[a];
        if (b < a) std::swap(a, b);

        // Average linkage: size-weighted mean of the two rows.
        const double na = static_cast<double>(members[a].size());
        const double nb = static_cast<double>(members[b].size());
        for (std::size_t k = 0; k < n; ++k) {
            if (!active[k] || k == a || k == b) continue;
            double v = (na * sim[a * n + k] + nb * sim[b * n + k]) / (na + nb);
            sim[a * n + k] = sim[k * n + a] = v;
        }
        members[a].insert(members[a].end(), members[b].begin(), members[b].end());
        members[b].clear();
        active[b] = false;

        refresh(a);
        for (std::size_t k = 0; k < n; ++k) {
            if (!active[k] || k == a) continue;
            if (best[k] == a || best[k] == b) {
                refresh(k);
            } else if (sim[k * n + a] > sim[k * n + best[k]] ||
                       (sim[k * n + a] == sim[k * n + best[k]] && a < best[k])) {
                best[k] = a;
            }
        }
    }

    std::vector<std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < n; ++i) {
        if (!active[i]) continue;
        std::sort(members[i].begin(), members[i].end());
        clusters.push_back(std::move(members[i]));
    }
    std::stable_sort(clusters.begin(), clusters.end(), [](const auto& x, const auto& y) {
        if (x.size() != y.size()) return x.size() > y.size();
        return x.front() < y.front();
    });
    return clusters;
}

}  // namespace mnistgen
