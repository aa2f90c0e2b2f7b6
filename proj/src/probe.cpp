#include "mnistgen/probe.hpp"

#include "mnistgen/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace mnistgen {

ProbeResult train_probe(const std::vector<ProbeSample>& samples, const ProbeConfig& config) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].label].push_back(i);
    if (by_class.size() < 2) return {0.5, false, "probe needs at least two classes; using neutral accuracy 0.5"};
    for (const auto& [label, idx] : by_class) {
        if (static_cast<int>(idx.size()) < config.min_per_class) {
            return {0.5, false,
                    "probe class " + std::to_string(label) + " has only " + std::to_string(idx.size()) +
                        " sample(s); using neutral accuracy 0.5"};
        }
    }
    const std::size_t dim = samples.front().image.pixels.size();
    for (const auto& s : samples) {
        if (s.image.pixels.size() != dim) throw UserError("probe: samples must share one image size");
    }

    // Stratified split.
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> train, test;
    for (auto& [label, idx] : by_class) {
        std::vector<std::size_t> shuffled = idx;
        for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng() % i]);
        auto n_train = static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(shuffled.size())));
        n_train = std::clamp<std::size_t>(n_train, 1, shuffled.size() - 1);
        train.insert(train.end(), shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
        test.insert(test.end(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train), shuffled.end());
    }

    std::vector<int> classes;
    for (const auto& [label, _] : by_class) classes.push_back(label);
    const std::size_t k = classes.size();
    auto class_pos = [&](int label) {
        return static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), label) - classes.begin());
    };

    auto features = [&](std::size_t i) {
        std::vector<double> x(dim);
        for (std::size_t d = 0; d < dim; ++d) x[d] = samples[i].image.pixels[d] / 255.0;
        return x;
    };
    std::vector<std::vector<double>> xtrain;
    for (auto i : train) xtrain.push_back(features(i));

    std::vector<double> w(k * dim, 0.0), b(k, 0.0);
    std::vector<double> gw(k * dim), gb(k), logits(k);
    const double inv_n = 1.0 / static_cast<double>(train.size());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t n = 0; n < train.size(); ++n) {
            const auto& x = xtrain[n];
            double mx = -INFINITY;
            for (std::size_t c = 0; c < k; ++c) {
                double z = b[c];
                for (std::size_t d = 0; d < dim; ++d) z += w[c * dim + d] * x[d];
                logits[c] = z;
                mx = std::max(mx, z);
            }
            double denom = 0.0;
            for (std::size_t c = 0; c < k; ++c) denom += std::exp(logits[c] - mx);
            const std::size_t target = class_pos(samples[train[n]].label);
            for (std::size_t c = 0; c < k; ++c) {
                double g = std::exp(logits[c] - mx) / denom - (c == target ? 1.0 : 0.0);
                gb[c] += g * inv_n;
                for (std::size_t d = 0; d < dim; ++d) gw[c * dim + d] += g * x[d] * inv_n;
            }
        }
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= config.learning_rate * (gw[i] + config.l2 * w[i]);
        for (std::size_t c = 0; c < k; ++c) b[c] -= config.learning_rate * gb[c];
    }

    std::size_t correct = 0;
    for (auto i : test) {
        auto x = features(i);
        std::size_t best = 0;
        double best_z = -INFINITY;
        for (std::size_t c = 0; c < k; ++c) {
            double z = b[c];
            for (std::size_t d = 0; d < dim; ++d) z += w[c * dim + d] * x[d];
            if (z > best_z) {
                best_z = z;
                best = c;
            }
        }
        if (classes[best] == samples[i].label) ++correct;
    }
    return {static_cast<double>(correct) / static_cast<double>(test.size()), true, {}};
}

}  // namespace mnistgen
