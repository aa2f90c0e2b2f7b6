#include "mnistgen/transforms.hpp"

#include "mnistgen/error.hpp"
#include "mnistgen/imgops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace mnistgen {

using nlohmann::json;

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

std::string stage_name(const Stage& s) {
    return std::visit(
        overloaded{
            [](const stage::SemanticTag&) -> std::string { return "semantic_tag"; },
            [](const stage::BackgroundRemoval&) -> std::string { return "background_removal"; },
            [](const stage::Resize& r) -> std::string {
                return "resize(" + std::to_string(r.width) + "x" + std::to_string(r.height) + ")";
            },
            [](const stage::CenterCrop& c) -> std::string {
                return "center_crop(" + std::to_string(c.width) + "x" + std::to_string(c.height) + ")";
            },
            [](const stage::Grayscale& g) -> std::string {
                return g.mode == stage::GrayMode::Mean ? "grayscale(mean)" : "grayscale(weighted)";
            },
            [](const stage::Binarize& b) -> std::string {
                return b.mode == stage::ThresholdMode::Otsu ? "binarize(otsu)"
                                                            : "binarize(" + std::to_string(b.theta) + ")";
            },
            [](const stage::Normalize& n) -> std::string {
                return "normalize(" + json(n.mu).dump() + "," + json(n.sigma).dump() + ")";
            },
            [](const stage::Rotate& r) -> std::string { return "rotate(" + json(r.degrees).dump() + ")"; },
            [](const stage::ContrastStretch&) -> std::string { return "contrast_stretch"; },
        },
        s);
}

bool is_pixel_identity(const Stage& s) {
    if (std::holds_alternative<stage::SemanticTag>(s)) return true;
    if (auto* b = std::get_if<stage::BackgroundRemoval>(&s)) return !b->backend;
    if (auto* r = std::get_if<stage::Rotate>(&s)) return std::fmod(r->degrees, 360.0) == 0.0;
    return false;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

void check_stage_keys(const json& j, std::initializer_list<const char*> allowed) {
    for (const auto& [key, _] : j.items()) {
        if (key == "kind") continue;
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw UserError("pipeline stage \"" + j["kind"].get<std::string>() + "\": unknown key \"" + key + "\"");
    }
}

int int_field(const json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_number_integer()) {
        throw UserError(std::string("pipeline stage: missing integer \"") + key + "\"");
    }
    return j[key].get<int>();
}

double num_field(const json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) throw UserError(std::string("pipeline stage: \"") + key + "\" must be a number");
    return j[key].get<double>();
}

}  // namespace

json stage_to_json(const Stage& s) {
    return std::visit(
        overloaded{
            [](const stage::SemanticTag&) { return json{{"kind", "semantic_tag"}}; },
            [](const stage::BackgroundRemoval&) { return json{{"kind", "background_removal"}}; },
            [](const stage::Resize& r) { return json{{"kind", "resize"}, {"width", r.width}, {"height", r.height}}; },
            [](const stage::CenterCrop& c) {
                return json{{"kind", "center_crop"}, {"width", c.width}, {"height", c.height}};
            },
            [](const stage::Grayscale& g) {
                return json{{"kind", "grayscale"}, {"mode", g.mode == stage::GrayMode::Mean ? "mean" : "weighted"}};
            },
            [](const stage::Binarize& b) {
                if (b.mode == stage::ThresholdMode::Otsu) return json{{"kind", "binarize"}, {"mode", "otsu"}};
                return json{{"kind", "binarize"}, {"mode", "fixed"}, {"theta", b.theta}};
            },
            [](const stage::Normalize& n) { return json{{"kind", "normalize"}, {"mu", n.mu}, {"sigma", n.sigma}}; },
            [](const stage::Rotate& r) { return json{{"kind", "rotate"}, {"degrees", r.degrees}}; },
            [](const stage::ContrastStretch&) { return json{{"kind", "contrast_stretch"}}; },
        },
        s);
}

Stage stage_from_json(const json& j) {
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
        throw UserError("pipeline stage must be an object with a string \"kind\"");
    }
    const std::string kind = j["kind"].get<std::string>();
    if (kind == "semantic_tag") {
        check_stage_keys(j, {});
        return stage::SemanticTag{};
    }
    if (kind == "background_removal") {
        check_stage_keys(j, {});
        return stage::BackgroundRemoval{};
    }
    if (kind == "resize") {
        check_stage_keys(j, {"width", "height"});
        return stage::Resize{int_field(j, "width"), int_field(j, "height")};
    }
    if (kind == "center_crop") {
        check_stage_keys(j, {"width", "height"});
        return stage::CenterCrop{int_field(j, "width"), int_field(j, "height")};
    }
    if (kind == "grayscale") {
        check_stage_keys(j, {"mode"});
        std::string mode = j.value("mode", "weighted");
        if (mode == "weighted") return stage::Grayscale{stage::GrayMode::Weighted};
        if (mode == "mean") return stage::Grayscale{stage::GrayMode::Mean};
        throw UserError("grayscale: unknown mode \"" + mode + "\"");
    }
    if (kind == "binarize") {
        check_stage_keys(j, {"mode", "theta"});
        std::string mode = j.value("mode", "otsu");
        if (mode == "otsu") return stage::Binarize{stage::ThresholdMode::Otsu, 0};
        if (mode == "fixed") return stage::Binarize{stage::ThresholdMode::Fixed, int_field(j, "theta")};
        throw UserError("binarize: unknown mode \"" + mode + "\"");
    }
    if (kind == "normalize") {
        check_stage_keys(j, {"mu", "sigma"});
        return stage::Normalize{num_field(j, "mu", 0.5), num_field(j, "sigma", 0.5)};
    }
    if (kind == "rotate") {
        check_stage_keys(j, {"degrees"});
        return stage::Rotate{num_field(j, "degrees", 0.0)};
    }
    if (kind == "contrast_stretch") {
        check_stage_keys(j, {});
        return stage::ContrastStretch{};
    }
    throw UserError("unknown pipeline stage kind \"" + kind + "\"");
}

// ---------------------------------------------------------------------------
// Stage semantics
// ---------------------------------------------------------------------------

int otsu_threshold(const Image& gray) {
    if (gray.channels != 1) throw UserError("otsu: expected single-channel input");
    if (gray.pixels.empty()) throw UserError("otsu: empty image");
    std::array<std::int64_t, 256> hist{};
    for (auto v : gray.pixels) ++hist[v];

    int occupied = 0, only = 0;
    for (int i = 0; i < 256; ++i) {
        if (hist[i]) {
            ++occupied;
            only = i;
        }
    }
    if (occupied == 1) return only;

    const auto total = static_cast<std::int64_t>(gray.pixels.size());
    std::int64_t sum_all = 0;
    for (int i = 0; i < 256; ++i) sum_all += hist[i] * i;

    // sigma_B^2(t) * N^2 = (N*S0 - n0*S)^2 / (n0*n1); numerator kept exact.
    std::int64_t n0 = 0, s0 = 0;
    long double best = -1.0L;
    int best_t = 0;
    for (int t = 0; t < 256; ++t) {
        n0 += hist[t];
        s0 += hist[t] * t;
        const std::int64_t n1 = total - n0;
        long double value = 0.0L;
        if (n0 > 0 && n1 > 0) {
            __int128 diff = static_cast<__int128>(total) * s0 - static_cast<__int128>(n0) * sum_all;
            value = static_cast<long double>(diff * diff) /
                    (static_cast<long double>(n0) * static_cast<long double>(n1));
        }
        if (value > best) {
            best = value;
            best_t = t;
        }
    }
    return best_t;
}

namespace {

void require_channels(const Image& img, int channels, const std::string& what) {
    if (img.channels != channels) {
        throw UserError(what + ": expected " + std::to_string(channels) + "-channel input, got " +
                        std::to_string(img.channels));
    }
}

Image binarize(const Image& gray, int theta) {
    Image out(gray.width, gray.height, 1);
    for (std::size_t i = 0; i < gray.pixels.size(); ++i) out.pixels[i] = gray.pixels[i] > theta ? 255 : 0;
    return out;
}

Image rotate(const Image& src, double degrees) {
    double rad = degrees * std::numbers::pi / 180.0;
    double c = std::cos(rad), s = std::sin(rad);
    // Snap right angles so quarter turns are exact.
    double q = degrees / 90.0;
    if (q == std::round(q)) {
        static constexpr double cs[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
        int k = static_cast<int>(((static_cast<long long>(std::round(q)) % 4) + 4) % 4);
        c = cs[k][0];
        s = cs[k][1];
    }
    const double cx = (src.width - 1) / 2.0, cy = (src.height - 1) / 2.0;
    Image dst(src.width, src.height, src.channels, 0);
    constexpr double eps = 1e-9;
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            double dx = x - cx, dy = y - cy;
            double sx = c * dx + s * dy + cx;
            double sy = -s * dx + c * dy + cy;
            if (sx < -eps || sy < -eps || sx > src.width - 1 + eps || sy > src.height - 1 + eps) continue;
            sx = std::clamp(sx, 0.0, static_cast<double>(src.width - 1));
            sy = std::clamp(sy, 0.0, static_cast<double>(src.height - 1));
            int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
            int x1 = std::min(x0 + 1, src.width - 1), y1 = std::min(y0 + 1, src.height - 1);
            double fx = sx - x0, fy = sy - y0;
            for (int ch = 0; ch < src.channels; ++ch) {
                double top = src.at(x0, y0, ch) * (1 - fx) + src.at(x1, y0, ch) * fx;
                double bot = src.at(x0, y1, ch) * (1 - fx) + src.at(x1, y1, ch) * fx;
                dst.at(x, y, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(top * (1 - fy) + bot * fy), 0L, 255L));
            }
        }
    }
    return dst;
}

Image contrast_stretch(const Image& src) {
    if (src.pixels.empty()) return src;
    auto [lo_it, hi_it] = std::minmax_element(src.pixels.begin(), src.pixels.end());
    const int lo = *lo_it, hi = *hi_it;
    if (hi == lo) return src;
    Image out = src;
    for (auto& v : out.pixels) {
        // round((v - lo) * 255 / (hi - lo)) in integers.
        v = static_cast<std::uint8_t>(((v - lo) * 510 + (hi - lo)) / (2 * (hi - lo)));
    }
    return out;
}

AnnotatedImage with_pixels(const AnnotatedImage& x, Image img) {
    return AnnotatedImage{std::move(img), x.semantic, std::nullopt};
}

}  // namespace

AnnotatedImage apply_stage(const Stage& s, const AnnotatedImage& x) {
    return std::visit(
        overloaded{
            [&](const stage::SemanticTag& t) {
                AnnotatedImage out = x;
                if (t.tagger) out.semantic = (*t.tagger)(x.image);
                return out;
            },
            [&](const stage::BackgroundRemoval& b) {
                if (!b.backend) return x;
                return with_pixels(x, (*b.backend)(x.image));
            },
            [&](const stage::Resize& r) { return with_pixels(x, imgops::resize_bilinear(x.image, r.width, r.height)); },
            [&](const stage::CenterCrop& c) { return with_pixels(x, imgops::center_crop(x.image, c.width, c.height)); },
            [&](const stage::Grayscale& g) {
                return with_pixels(x, g.mode == stage::GrayMode::Mean ? imgops::gray_mean(x.image)
                                                                      : imgops::gray_weighted(x.image));
            },
            [&](const stage::Binarize& b) {
                require_channels(x.image, 1, "binarize");
                int theta = b.mode == stage::ThresholdMode::Otsu ? otsu_threshold(x.image) : b.theta;
                return with_pixels(x, binarize(x.image, theta));
            },
            [&](const stage::Normalize& n) {
                require_channels(x.image, 1, "normalize");
                AnnotatedImage out = x;
                std::vector<float> plane(x.image.pixels.size());
                for (std::size_t i = 0; i < plane.size(); ++i) {
                    plane[i] = static_cast<float>((x.image.pixels[i] / 255.0 - n.mu) / n.sigma);
                }
                out.normalized = std::move(plane);
                return out;
            },
            [&](const stage::Rotate& r) {
                if (is_pixel_identity(r)) return x;
                return with_pixels(x, rotate(x.image, r.degrees));
            },
            [&](const stage::ContrastStretch&) { return with_pixels(x, contrast_stretch(x.image)); },
        },
        s);
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

namespace {

std::string at_stage(std::size_t i, const Stage& s) {
    return "stage " + std::to_string(i) + " (" + stage_name(s) + ")";
}

Shape propagate(const Stage& s, Shape in, std::size_t index) {
    auto need_gray = [&](const char* what) {
        if (in.channels && *in.channels != 1) {
            throw UserError(at_stage(index, s) + ": " + what + " requires grayscale input, got " +
                            std::to_string(*in.channels) + " channels");
        }
        in.channels = 1;
    };
    std::visit(overloaded{
                   [&](const stage::SemanticTag&) {},
                   [&](const stage::BackgroundRemoval&) {},
                   [&](const stage::Resize& r) {
                       if (r.width < 1 || r.height < 1) throw UserError(at_stage(index, s) + ": dimensions must be >= 1");
                       in.width = r.width;
                       in.height = r.height;
                   },
                   [&](const stage::CenterCrop& c) {
                       if (c.width < 1 || c.height < 1) throw UserError(at_stage(index, s) + ": dimensions must be >= 1");
                       if ((in.width && c.width > *in.width) || (in.height && c.height > *in.height)) {
                           throw UserError(at_stage(index, s) + ": crop larger than image");
                       }
                       in.width = c.width;
                       in.height = c.height;
                   },
                   [&](const stage::Grayscale&) {
                       if (in.channels && *in.channels != 3) {
                           throw UserError(at_stage(index, s) + ": grayscale requires RGB input");
                       }
                       in.channels = 1;
                   },
                   [&](const stage::Binarize& b) {
                       if (b.mode == stage::ThresholdMode::Fixed && (b.theta < 0 || b.theta > 255)) {
                           throw UserError(at_stage(index, s) + ": theta must lie in [0,255]");
                       }
                       need_gray("binarize");
                   },
                   [&](const stage::Normalize& n) {
                       if (!(n.sigma > 0.0)) throw UserError(at_stage(index, s) + ": sigma must be positive");
                       need_gray("normalize");
                   },
                   [&](const stage::Rotate&) {},
                   [&](const stage::ContrastStretch&) {},
               },
               s);
    return in;
}

}  // namespace

Pipeline::Pipeline(std::vector<Stage> stages, Shape input)
    : stages_(std::move(stages)), input_(input), output_(input) {
    for (std::size_t i = 0; i < stages_.size(); ++i) output_ = propagate(stages_[i], output_, i);
}

AnnotatedImage Pipeline::apply(const AnnotatedImage& x) const {
    AnnotatedImage cur = x;
    for (const auto& s : stages_) cur = apply_stage(s, cur);
    return cur;
}

std::vector<AnnotatedImage> Pipeline::trace(const AnnotatedImage& x) const {
    std::vector<AnnotatedImage> out;
    out.reserve(stages_.size());
    const AnnotatedImage* cur = &x;
    for (const auto& s : stages_) {
        out.push_back(apply_stage(s, *cur));
        cur = &out.back();
    }
    return out;
}

json Pipeline::to_json() const {
    json arr = json::array();
    for (const auto& s : stages_) arr.push_back(stage_to_json(s));
    return arr;
}

Pipeline Pipeline::from_json(const json& j, Shape input) {
    if (!j.is_array()) throw UserError("pipeline must be a JSON array of stage objects");
    std::vector<Stage> stages;
    for (const auto& sj : j) stages.push_back(stage_from_json(sj));
    return Pipeline(std::move(stages), input);
}

Pipeline identity_pipeline() { return Pipeline{}; }

Pipeline compose(const Pipeline& p, const Pipeline& q) {
    std::vector<Stage> stages = p.stages();
    stages.insert(stages.end(), q.stages().begin(), q.stages().end());
    try {
        return Pipeline(std::move(stages), p.input_shape());
    } catch (const UserError& e) {
        throw UserError(std::string("incompatible pipelines at the seam: ") + e.what());
    }
}

Pipeline default_pipeline(int side, bool binarize_output) {
    std::vector<Stage> stages = {stage::SemanticTag{}, stage::Resize{64, 64}, stage::CenterCrop{side, side},
                                 stage::Grayscale{stage::GrayMode::Weighted}};
    if (binarize_output) {
        stages.push_back(stage::Binarize{stage::ThresholdMode::Otsu, 0});
    } else {
        stages.push_back(stage::Normalize{0.5, 0.5});
    }
    return Pipeline(std::move(stages), Shape{3, std::nullopt, std::nullopt});
}

// ---------------------------------------------------------------------------
// Pipeline comparison
// ---------------------------------------------------------------------------

namespace {

std::optional<int> pixel_delta(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels) return std::nullopt;
    int m = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
    return m;
}

void fold_max(std::optional<int>& acc, const std::optional<int>& v, bool& mismatch) {
    if (!v) {
        mismatch = true;
        return;
    }
    acc = std::max(acc.value_or(0), *v);
}

}  // namespace

json DivergenceReport::to_json() const {
    json stages_j = json::array();
    for (const auto& s : stages) {
        stages_j.push_back({{"first", s.first},
                            {"second", s.second},
                            {"max_delta", s.max_delta ? json(*s.max_delta) : json(nullptr)}});
    }
    json images_j = json::array();
    for (const auto& d : image_deltas) images_j.push_back(d ? json(*d) : json(nullptr));
    return {{"stages", stages_j},
            {"image_deltas", images_j},
            {"max_delta", max_delta ? json(*max_delta) : json(nullptr)}};
}

DivergenceReport compare_pipelines(const Pipeline& p1, const Pipeline& p2,
                                   const std::vector<AnnotatedImage>& inputs) {
    auto effective = [](const Pipeline& p) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < p.stages().size(); ++i) {
            if (!is_pixel_identity(p.stages()[i])) idx.push_back(i);
        }
        return idx;
    };
    const auto e1 = effective(p1), e2 = effective(p2);
    const std::size_t positions = std::max(e1.size(), e2.size());

    DivergenceReport report;
    for (std::size_t k = 0; k < positions; ++k) {
        report.stages.push_back({k < e1.size() ? stage_name(p1.stages()[e1[k]]) : "(end)",
                                 k < e2.size() ? stage_name(p2.stages()[e2[k]]) : "(end)",
                                 std::nullopt});
    }
    std::vector<bool> mismatch(positions, false);
    bool final_mismatch = false;

    for (const auto& x : inputs) {
        const auto t1 = p1.trace(x), t2 = p2.trace(x);
        // Past the end of a shorter pipeline, its final output stands in.
        auto snapshot = [&x](const std::vector<AnnotatedImage>& t, const std::vector<std::size_t>& e,
                             std::size_t k) -> const Image& {
            if (e.empty()) return t.empty() ? x.image : t.back().image;
            return t[e[std::min(k, e.size() - 1)]].image;
        };
        for (std::size_t k = 0; k < positions; ++k) {
            bool mm = mismatch[k];
            fold_max(report.stages[k].max_delta, pixel_delta(snapshot(t1, e1, k), snapshot(t2, e2, k)), mm);
            mismatch[k] = mm;
        }
        const Image& out1 = t1.empty() ? x.image : t1.back().image;
        const Image& out2 = t2.empty() ? x.image : t2.back().image;
        auto d = pixel_delta(out1, out2);
        report.image_deltas.push_back(d);
        fold_max(report.max_delta, d, final_mismatch);
    }
    for (std::size_t k = 0; k < positions; ++k) {
        if (mismatch[k]) report.stages[k].max_delta.reset();
    }
    if (final_mismatch) report.max_delta.reset();
    return report;
}

}  // namespace mnistgen
