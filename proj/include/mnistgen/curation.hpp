#pragma once

#include "mnistgen/provider.hpp"
#include "mnistgen/semantics.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mnistgen {

enum class CurationAction { Keep = 0, Discard = 1, Review = 2 };
inline constexpr int kActionCount = 3;

std::string to_string(CurationAction a);
CurationAction action_from_string(const std::string& s);

// Feature vector seen by the agent:
//   [0,16)  seeded random projection of the image embedding
//   16..18  brightness, contrast, edge density
//   19      semantic confidence
//   20      fraction of kept samples sharing the predicted main class
//   21      max mapped cosine to already-kept samples
inline constexpr std::size_t kProjectionDim = 16;
inline constexpr std::size_t kStateDim = 22;

struct RLState {
    std::array<double, kStateDim> features{};

    double confidence() const { return features[19]; }
    double class_fraction() const { return features[20]; }
    double redundancy() const { return features[21]; }

    friend bool operator==(const RLState&, const RLState&) = default;
};

// Fixed seeded 16x512 Gaussian projection (entries N(0, 1/16)).
class StateProjector {
public:
    explicit StateProjector(std::uint64_t seed = 7);
    std::array<double, kProjectionDim> project(const Embedding& e) const;

private:
    std::vector<double> matrix_;  // row-major kProjectionDim x kEmbeddingDim
};

RLState make_state(const StateProjector& projector, const Embedding& embedding,
                   const VisualAttributes& visual, double confidence, double class_fraction,
                   double redundancy);

struct RewardWeights {
    double lambda1 = 0.4;  // semantic confidence
    double lambda2 = 0.3;  // class-distribution entropy
    double lambda3 = 0.2;  // probe accuracy
    double lambda4 = 0.1;  // redundancy penalty

    void validate() const;
    double min_reward() const { return -lambda4; }
    double max_reward() const { return lambda1 + lambda2 + lambda3; }
};

struct ClassDistribution {
    std::vector<std::int64_t> counts;  // one per main class

    std::int64_t total() const;
};

// Shannon entropy normalized by ln(K); 0 when K == 1. Throws on an empty
// distribution.
double class_entropy(const ClassDistribution& d);

// Max mapped cosine against `kept`, 0 when empty.
double redundancy(const Embedding& e, const std::vector<Embedding>& kept);

// lambda1*conf + lambda2*entropy(d) + lambda3*model_acc - lambda4*red.
double compute_reward(double conf, const ClassDistribution& d, double model_acc, double red,
                      const RewardWeights& w = {});
double compute_reward_from_entropy(double conf, double entropy, double model_acc, double red,
                                   const RewardWeights& w = {});

// Confidence credited to an action: Keep trusts the score, Discard its
// complement, Review is neutral until the human verdict arrives.
double action_confidence(CurationAction a, double conf);

enum class Route { AutoCategorize, HumanReview, AutoRemove };
std::string to_string(Route r);

struct RoutingThresholds {
    double high = 0.85;  // strictly above -> auto categorize
    double low = 0.4;    // strictly below -> auto remove
};

Route route_confidence(double conf, const RoutingThresholds& t = {});

// Greedy average-link agglomeration on mapped cosine. Merging stops once no
// pair of clusters has average similarity >= threshold. Clusters are sorted
// by size descending (ties: smallest member first); members ascending.
std::vector<std::vector<std::size_t>> cluster_embeddings(const std::vector<Embedding>& es,
                                                         double sim_threshold);
inline constexpr double kDefaultClusterThreshold = 0.92;

}  // namespace mnistgen
