#pragma once

#include "mnistgen/acquisition.hpp"
#include "mnistgen/hierarchy.hpp"
#include "mnistgen/provider.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mnistgen {

// Sobel gradient magnitude threshold on luminance in [0,1].
inline constexpr double kEdgeThreshold = 0.25;
// Side of the square copy that visual attributes are measured on.
inline constexpr int kAnalysisSize = 224;
// Images below this side length are rejected.
inline constexpr int kMinImageSide = 8;
// Minimum template similarity for an image to be eligible.
inline constexpr double kPrefilterThreshold = 0.3;
// visual_sim when a subcategory declares no expected attributes.
inline constexpr double kNeutralVisualSim = 0.5;

struct VisualAttributes {
    double brightness = 0.0;    // mean luminance
    double contrast = 0.0;      // luminance standard deviation
    double edge_density = 0.0;  // fraction of pixels with Sobel magnitude > kEdgeThreshold

    friend bool operator==(const VisualAttributes&, const VisualAttributes&) = default;
};

// Measured directly on `img` (no resizing).
VisualAttributes measure_visual_attributes(const Image& img);

struct FeatureBundle {
    Embedding embedding;
    VisualAttributes visual;
    std::map<std::string, double> objects;  // prompt -> mapped cosine
};

class ScoringWeights {
public:
    ScoringWeights() = default;  // 0.5 / 0.3 / 0.2
    ScoringWeights(double alpha, double beta, double gamma);
    // Scales non-negative raw weights so they sum to 1.
    static ScoringWeights normalized(double alpha, double beta, double gamma);

    double alpha() const noexcept { return alpha_; }
    double beta() const noexcept { return beta_; }
    double gamma() const noexcept { return gamma_; }

private:
    double alpha_ = 0.5;
    double beta_ = 0.3;
    double gamma_ = 0.2;
};

struct ScoreEntry {
    int flat_index = 0;
    int main_index = 0;
    int sub_index = 0;
    double text_sim = 0.0;
    double char_sim = 0.0;
    double visual_sim = 0.0;
    double total = 0.0;

    friend bool operator==(const ScoreEntry&, const ScoreEntry&) = default;
};

struct CategorizationResult {
    int best_main = 0;
    int best_sub = 0;
    int best_flat = 0;
    double confidence = 0.0;
    bool eligible = true;  // max text_sim >= kPrefilterThreshold
    std::vector<ScoreEntry> breakdown;  // one per flattened label, in label order

    // Entries ordered by total descending (ties by flat index), first `k`.
    std::vector<ScoreEntry> top(std::size_t k) const;

    friend bool operator==(const CategorizationResult&, const CategorizationResult&) = default;
};

// Prompt embeddings for one hierarchy, computed once per run.
class PromptBank {
public:
    PromptBank(const CategoryHierarchy& h, EmbeddingProvider& provider);

    const CategoryHierarchy& hierarchy() const noexcept { return *hierarchy_; }
    const std::vector<std::string>& prompts() const noexcept { return prompts_; }
    const Embedding& embedding(const std::string& prompt) const;
    // Prompts for a flattened label, templates first.
    const std::vector<std::string>& prompts_for(int flat_index) const;

private:
    const CategoryHierarchy* hierarchy_;
    std::vector<std::string> prompts_;  // unique, first-seen order
    std::map<std::string, Embedding> embeddings_;
    std::vector<std::vector<std::string>> per_label_;
};

FeatureBundle extract_features(const ImageRecord& img, const PromptBank& bank,
                               EmbeddingProvider& provider);

double visual_similarity(const VisualAttributes& v, const std::optional<VisualProfile>& expected);

// text_sim: mean over the two template prompts; char_sim: mean over the
// characteristic prompts; total = alpha*text + beta*char + gamma*visual.
ScoreEntry score_subcategory(const FeatureBundle& f, const PromptBank& bank, int flat_index,
                             const ScoringWeights& w);

CategorizationResult categorize_features(const FeatureBundle& f, const PromptBank& bank,
                                         const ScoringWeights& w);
CategorizationResult categorize(const ImageRecord& img, const PromptBank& bank,
                                const ScoringWeights& w, EmbeddingProvider& provider);

}  // namespace mnistgen
