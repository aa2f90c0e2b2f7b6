#pragma once

#include "mnistgen/image.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mnistgen {

struct ProbeSample {
    Image image;  // single channel, any fixed size (28x28 in practice)
    int label = 0;
};

struct ProbeResult {
    double accuracy = 0.5;
    bool trained = false;
    std::string warning;
};

struct ProbeConfig {
    double train_fraction = 0.8;
    int epochs = 200;
    double learning_rate = 0.5;
    double l2 = 1e-4;
    std::uint64_t seed = 0;
    int min_per_class = 5;
};

// Multinomial logistic regression on flattened pixels scaled to [0,1],
// trained by full-batch gradient descent on a stratified split; returns the
// held-out accuracy. With fewer than two classes or fewer than
// `min_per_class` samples in some class the neutral 0.5 is returned with a
// warning.
ProbeResult train_probe(const std::vector<ProbeSample>& samples, const ProbeConfig& config = {});

inline constexpr int kDefaultProbeCadence = 50;

}  // namespace mnistgen
