#include "mnistgen/semantics.hpp"

#include "mnistgen/error.hpp"
#include "mnistgen/imgops.hpp"

#include <algorithm>
#include <cmath>

namespace mnistgen {

VisualAttributes measure_visual_attributes(const Image& img) {
    const int w = img.width, h = img.height;
    auto lum = imgops::luminance(img);
    const double n = static_cast<double>(lum.size());

    double sum = 0.0;
    for (double v : lum) sum += v;
    const double mean = sum / n;
    double var = 0.0;
    for (double v : lum) var += (v - mean) * (v - mean);
    var /= n;

    // Sobel with clamp-to-edge borders.
    auto L = [&](int x, int y) {
        x = std::clamp(x, 0, w - 1);
        y = std::clamp(y, 0, h - 1);
        return lum[static_cast<std::size_t>(y) * w + x];
    };
    std::size_t edges = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double gx = (L(x + 1, y - 1) + 2 * L(x + 1, y) + L(x + 1, y + 1)) -
                        (L(x - 1, y - 1) + 2 * L(x - 1, y) + L(x - 1, y + 1));
            double gy = (L(x - 1, y + 1) + 2 * L(x, y + 1) + L(x + 1, y + 1)) -
                        (L(x - 1, y - 1) + 2 * L(x, y - 1) + L(x + 1, y - 1));
            if (std::sqrt(gx * gx + gy * gy) > kEdgeThreshold) ++edges;
        }
    }
    return {std::clamp(mean, 0.0, 1.0), std::clamp(std::sqrt(var), 0.0, 1.0),
            static_cast<double>(edges) / n};
}

ScoringWeights::ScoringWeights(double alpha, double beta, double gamma)
    : alpha_(alpha), beta_(beta), gamma_(gamma) {
    if (alpha < 0 || beta < 0 || gamma < 0) throw UserError("scoring weights must be non-negative");
    if (std::abs(alpha + beta + gamma - 1.0) > 1e-9) {
        throw UserError("scoring weights must sum to 1");
    }
}

ScoringWeights ScoringWeights::normalized(double alpha, double beta, double gamma) {
    double s = alpha + beta + gamma;
    if (!(s > 0.0)) throw UserError("scoring weights must have a positive sum");
    return ScoringWeights(alpha / s, beta / s, 1.0 - alpha / s - beta / s);
}

std::vector<ScoreEntry> CategorizationResult::top(std::size_t k) const {
    std::vector<ScoreEntry> sorted = breakdown;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ScoreEntry& a, const ScoreEntry& b) { return a.total > b.total; });
    if (sorted.size() > k) sorted.resize(k);
    return sorted;
}

PromptBank::PromptBank(const CategoryHierarchy& h, EmbeddingProvider& provider) : hierarchy_(&h) {
    for (const auto& main : h.categories()) {
        for (const auto& sub : main.subcategories) {
            auto prompts = build_prompts(sub, main);
            for (const auto& p : prompts) {
                if (std::find(prompts_.begin(), prompts_.end(), p) == prompts_.end()) prompts_.push_back(p);
            }
            per_label_.push_back(std::move(prompts));
        }
    }
    auto embs = provider.embed_texts(prompts_);
    for (std::size_t i = 0; i < prompts_.size(); ++i) embeddings_.emplace(prompts_[i], std::move(embs[i]));
}

const Embedding& PromptBank::embedding(const std::string& prompt) const {
    auto it = embeddings_.find(prompt);
    if (it == embeddings_.end()) throw UserError("unknown prompt: " + prompt);
    return it->second;
}

const std::vector<std::string>& PromptBank::prompts_for(int flat_index) const {
    return per_label_.at(static_cast<std::size_t>(flat_index));
}

FeatureBundle extract_features(const ImageRecord& img, const PromptBank& bank,
                               EmbeddingProvider& provider) {
    const Image& px = img.pixels;
    if (px.width < kMinImageSide || px.height < kMinImageSide) {
        throw UserError("image " + img.id.substr(0, 12) + " too small (" + std::to_string(px.width) +
                        "x" + std::to_string(px.height) + "); minimum is 8x8");
    }
    FeatureBundle f;
    f.embedding = provider.embed_image(img);
    f.visual = measure_visual_attributes(imgops::resize_bilinear(px, kAnalysisSize, kAnalysisSize));
    for (const auto& p : bank.prompts()) f.objects[p] = mapped_cosine(f.embedding, bank.embedding(p));
    return f;
}

double visual_similarity(const VisualAttributes& v, const std::optional<VisualProfile>& expected) {
    if (!expected) return kNeutralVisualSim;
    double mad = (std::abs(v.brightness - expected->brightness) +
                  std::abs(v.contrast - expected->contrast) +
                  std::abs(v.edge_density - expected->edge_density)) / 3.0;
    return std::clamp(1.0 - mad, 0.0, 1.0);
}

ScoreEntry score_subcategory(const FeatureBundle& f, const PromptBank& bank, int flat_index,
                             const ScoringWeights& w) {
    const auto& label = bank.hierarchy().labels().at(static_cast<std::size_t>(flat_index));
    const auto& sub = bank.hierarchy()
                          .categories()[static_cast<std::size_t>(label.main_index)]
                          .subcategories[static_cast<std::size_t>(label.sub_index)];
    const auto& prompts = bank.prompts_for(flat_index);
    auto sim = [&](const std::string& p) {
        auto it = f.objects.find(p);
        return it != f.objects.end() ? it->second : mapped_cosine(f.embedding, bank.embedding(p));
    };

    ScoreEntry e;
    e.flat_index = flat_index;
    e.main_index = label.main_index;
    e.sub_index = label.sub_index;
    double text = 0.0;
    for (std::size_t i = 0; i < kTemplatePromptCount; ++i) text += sim(prompts[i]);
    e.text_sim = text / static_cast<double>(kTemplatePromptCount);
    double chars = 0.0;
    for (std::size_t i = kTemplatePromptCount; i < prompts.size(); ++i) chars += sim(prompts[i]);
    e.char_sim = chars / static_cast<double>(prompts.size() - kTemplatePromptCount);
    e.visual_sim = visual_similarity(f.visual, sub.expected_visual);
    e.total = w.alpha() * e.text_sim + w.beta() * e.char_sim + w.gamma() * e.visual_sim;
    return e;
}

CategorizationResult categorize_features(const FeatureBundle& f, const PromptBank& bank,
                                         const ScoringWeights& w) {
    CategorizationResult r;
    const auto n = static_cast<int>(bank.hierarchy().subcategory_count());
    double best_text = 0.0;
    for (int i = 0; i < n; ++i) {
        r.breakdown.push_back(score_subcategory(f, bank, i, w));
        const auto& e = r.breakdown.back();
        best_text = std::max(best_text, e.text_sim);
        // Strict > keeps the lowest flattened index on ties.
        if (i == 0 || e.total > r.confidence) {
            r.confidence = e.total;
            r.best_flat = i;
            r.best_main = e.main_index;
            r.best_sub = e.sub_index;
        }
    }
    r.confidence = std::clamp(r.confidence, 0.0, 1.0);
    r.eligible = best_text >= kPrefilterThreshold;
    return r;
}

CategorizationResult categorize(const ImageRecord& img, const PromptBank& bank,
                                const ScoringWeights& w, EmbeddingProvider& provider) {
    return categorize_features(extract_features(img, bank, provider), bank, w);
}

}  // namespace mnistgen
