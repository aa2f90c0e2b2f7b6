#pragma once

#include "mnistgen/image.hpp"
#include "mnistgen/semantics.hpp"

#include <json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mnistgen {

struct AnnotatedImage {
    Image image;
    std::optional<CategorizationResult> semantic;
    // Real-valued plane emitted by Normalize; cleared by any later pixel stage.
    std::optional<std::vector<float>> normalized;

    friend bool operator==(const AnnotatedImage&, const AnnotatedImage&) = default;
};

using Tagger = std::function<CategorizationResult(const Image&)>;
using Matting = std::function<Image(const Image&)>;

namespace stage {

// Attaches a categorization; never touches pixels. Without a tagger the
// existing annotation is kept.
struct SemanticTag {
    std::shared_ptr<const Tagger> tagger;
};
// Extension point for a matting model; identity when no backend is set.
struct BackgroundRemoval {
    std::shared_ptr<const Matting> backend;
};
struct Resize {
    int width = 0;
    int height = 0;
};
struct CenterCrop {
    int width = 0;
    int height = 0;
};
enum class GrayMode { Mean, Weighted };
struct Grayscale {
    GrayMode mode = GrayMode::Weighted;
};
enum class ThresholdMode { Fixed, Otsu };
struct Binarize {
    ThresholdMode mode = ThresholdMode::Otsu;
    int theta = 128;  // used when mode == Fixed
};
struct Normalize {
    double mu = 0.5;
    double sigma = 0.5;
};
// Bilinear rotation about the image centre; uncovered pixels become 0.
struct Rotate {
    double degrees = 0.0;
};
// Linear stretch of [min,max] over all channels to [0,255].
struct ContrastStretch {};

}  // namespace stage

using Stage = std::variant<stage::SemanticTag, stage::BackgroundRemoval, stage::Resize,
                           stage::CenterCrop, stage::Grayscale, stage::Binarize,
                           stage::Normalize, stage::Rotate, stage::ContrastStretch>;

std::string stage_name(const Stage& s);
// True for stages that leave pixels untouched by construction.
bool is_pixel_identity(const Stage& s);

nlohmann::json stage_to_json(const Stage& s);
Stage stage_from_json(const nlohmann::json& j);

// Statically known properties of an image flowing through a pipeline.
struct Shape {
    std::optional<int> channels;
    std::optional<int> width;
    std::optional<int> height;
};

AnnotatedImage apply_stage(const Stage& s, const AnnotatedImage& x);

// Ordered stage list, validated at construction against `input`.
class Pipeline {
public:
    Pipeline() = default;
    explicit Pipeline(std::vector<Stage> stages, Shape input = {});

    const std::vector<Stage>& stages() const noexcept { return stages_; }
    const Shape& input_shape() const noexcept { return input_; }
    const Shape& output_shape() const noexcept { return output_; }

    AnnotatedImage apply(const AnnotatedImage& x) const;
    // Output after each stage; element i is the result of stage i.
    std::vector<AnnotatedImage> trace(const AnnotatedImage& x) const;

    nlohmann::json to_json() const;
    static Pipeline from_json(const nlohmann::json& j, Shape input = {});

private:
    std::vector<Stage> stages_;
    Shape input_;
    Shape output_;
};

Pipeline identity_pipeline();
// Runs p, then q. Throws UserError when q cannot accept p's output.
Pipeline compose(const Pipeline& p, const Pipeline& q);

// SemanticTag -> Resize(64) -> CenterCrop(side) -> Grayscale(weighted) ->
// Binarize(otsu) or Normalize(0.5, 0.5).
Pipeline default_pipeline(int side = 28, bool binarize = true);

// Threshold maximizing between-class variance over the 256-bin histogram,
// classes {<= t} and {> t}; the smallest maximizer wins.
int otsu_threshold(const Image& gray);

struct StageDelta {
    std::string first;   // stage name in pipeline 1
    std::string second;  // stage name in pipeline 2
    std::optional<int> max_delta;  // nullopt when output shapes differ
};

struct DivergenceReport {
    std::vector<StageDelta> stages;
    std::vector<std::optional<int>> image_deltas;  // final outputs, per input
    std::optional<int> max_delta;

    nlohmann::json to_json() const;
};

// Runs both pipelines on every input and compares them stage by stage.
// Stages that cannot change pixels are skipped when aligning positions.
DivergenceReport compare_pipelines(const Pipeline& p1, const Pipeline& p2,
                                   const std::vector<AnnotatedImage>& inputs);

}  // namespace mnistgen
