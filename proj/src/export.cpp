#include "mnistgen/export.hpp"

#include "mnistgen/error.hpp"
#include "mnistgen/image.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace mnistgen {

namespace fs = std::filesystem;
using nlohmann::json;

SplitIndices split_dataset(const std::vector<int>& labels, double ratio, std::uint64_t seed,
                           std::vector<std::string>* warnings) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw UserError("split ratio must lie in (0,1)");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    std::mt19937_64 rng(seed);
    SplitIndices out;
    for (auto& [label, idx] : by_class) {
        if (idx.size() < 2) {
            if (warnings) warnings->push_back("class " + std::to_string(label) + " has fewer than 2 samples; kept in train");
            out.train.insert(out.train.end(), idx.begin(), idx.end());
            continue;
        }
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
        auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size())));
        n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
        out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

json Manifest::to_json(const SplitIndices& split, int width, int height) const {
    json j = {{"hierarchy", hierarchy},
              {"label_map", label_map},
              {"config_hash", config_hash},
              {"counts", {{"main", main_counts}, {"sub", sub_counts}}},
              {"split", {{"ratio", split_ratio}, {"seed", split_seed}, {"train", split.train}, {"test", split.test}}},
              {"image", {{"width", width}, {"height", height}}},
              {"created_at", created_at},
              {"tool_version", tool_version}};
    j["normalization"] = normalization ? json{{"mu", normalization->mu}, {"sigma", normalization->sigma}} : json(nullptr);
    return j;
}

void DatasetArtifact::validate() const {
    const std::size_t n = count();
    if (n == 0) throw UserError("dataset is empty (N = 0)");
    if (width < 1 || height < 1) throw UserError("dataset image size must be positive");
    if (images.size() != n * static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw UserError("image payload size does not match N x H x W");
    }
    if (sub_labels.size() != n) throw UserError("sub-label count does not match image count");
    const auto main_k = manifest.main_counts.size();
    const auto sub_k = manifest.sub_counts.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (main_labels[i] >= main_k) throw UserError("main label " + std::to_string(main_labels[i]) + " out of range");
        if (sub_labels[i] >= sub_k) throw UserError("sub label " + std::to_string(sub_labels[i]) + " out of range");
    }
    std::vector<int> seen(n, 0);
    for (auto* part : {&split.train, &split.test}) {
        for (auto i : *part) {
            if (i >= n || seen[i]++) throw UserError("split indices must partition the dataset");
        }
    }
    if (split.train.size() + split.test.size() != n) throw UserError("split indices must cover the dataset");
    std::vector<std::int64_t> mc(main_k, 0), sc(sub_k, 0);
    for (std::size_t i = 0; i < n; ++i) {
        ++mc[main_labels[i]];
        ++sc[sub_labels[i]];
    }
    if (mc != manifest.main_counts || sc != manifest.sub_counts) {
        throw UserError("manifest/count mismatch: per-class counts disagree with labels");
    }
}

std::string canonical_config_hash(const json& run_config) { return sha256_hex(run_config.dump()); }

void fill_counts(DatasetArtifact& a, std::size_t main_classes, std::size_t sub_classes) {
    a.manifest.main_counts.assign(main_classes, 0);
    a.manifest.sub_counts.assign(sub_classes, 0);
    for (std::size_t i = 0; i < a.count(); ++i) {
        if (a.main_labels[i] >= main_classes || a.sub_labels[i] >= sub_classes) {
            throw UserError("label out of range while counting");
        }
        ++a.manifest.main_counts[a.main_labels[i]];
        ++a.manifest.sub_counts[a.sub_labels[i]];
    }
}

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_be32(const std::vector<std::uint8_t>& in, std::size_t off) {
    return (std::uint32_t{in[off]} << 24) | (std::uint32_t{in[off + 1]} << 16) |
           (std::uint32_t{in[off + 2]} << 8) | std::uint32_t{in[off + 3]};
}

std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", v);
    return buf;
}

}  // namespace

std::vector<std::uint8_t> encode_idx_images(const std::vector<std::uint8_t>& payload, std::uint32_t count,
                                            std::uint32_t height, std::uint32_t width) {
    if (payload.size() != static_cast<std::size_t>(count) * height * width) {
        throw UserError("idx images: payload size does not match header dimensions");
    }
    std::vector<std::uint8_t> out;
    out.reserve(16 + payload.size());
    put_be32(out, kIdxImageMagic);
    put_be32(out, count);
    put_be32(out, height);
    put_be32(out, width);
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

std::vector<std::uint8_t> encode_idx_labels(const std::vector<std::uint8_t>& labels) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + labels.size());
    put_be32(out, kIdxLabelMagic);
    put_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

IdxImages decode_idx_images(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    if (bytes.size() < 16) throw UserError(name + ": truncated header (" + std::to_string(bytes.size()) + " bytes)");
    const auto magic = get_be32(bytes, 0);
    if (magic != kIdxImageMagic) throw UserError(name + ": bad magic " + hex32(magic) + ", expected " + hex32(kIdxImageMagic));
    IdxImages out{get_be32(bytes, 4), get_be32(bytes, 8), get_be32(bytes, 12), {}};
    const std::size_t expected = 16 + static_cast<std::size_t>(out.count) * out.height * out.width;
    if (bytes.size() != expected) {
        throw UserError(name + ": truncated payload: expected " + std::to_string(expected) + " bytes, got " +
                        std::to_string(bytes.size()));
    }
    out.payload.assign(bytes.begin() + 16, bytes.end());
    return out;
}

std::vector<std::uint8_t> decode_idx_labels(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    if (bytes.size() < 8) throw UserError(name + ": truncated header (" + std::to_string(bytes.size()) + " bytes)");
    const auto magic = get_be32(bytes, 0);
    if (magic != kIdxLabelMagic) throw UserError(name + ": bad magic " + hex32(magic) + ", expected " + hex32(kIdxLabelMagic));
    const std::size_t expected = 8 + static_cast<std::size_t>(get_be32(bytes, 4));
    if (bytes.size() != expected) {
        throw UserError(name + ": truncated payload: expected " + std::to_string(expected) + " bytes, got " +
                        std::to_string(bytes.size()));
    }
    return {bytes.begin() + 8, bytes.end()};
}

std::vector<std::uint8_t> read_idx_labels(const fs::path& path) {
    return decode_idx_labels(read_file(path), path.filename().string());
}

std::vector<fs::path> write_idx(const DatasetArtifact& a, const fs::path& dir) {
    a.validate();
    fs::create_directories(dir);
    const std::size_t plane = static_cast<std::size_t>(a.width) * a.height;
    std::vector<fs::path> written;
    for (const auto& [prefix, idx] : {std::pair{"train", &a.split.train}, std::pair{"test", &a.split.test}}) {
        std::vector<std::uint8_t> payload, mains, subs;
        payload.reserve(idx->size() * plane);
        for (auto i : *idx) {
            payload.insert(payload.end(), a.images.begin() + static_cast<std::ptrdiff_t>(i * plane),
                           a.images.begin() + static_cast<std::ptrdiff_t>((i + 1) * plane));
            mains.push_back(a.main_labels[i]);
            subs.push_back(a.sub_labels[i]);
        }
        const std::string p = prefix;
        written.push_back(dir / (p + "-images.idx3-ubyte"));
        write_file(written.back(), encode_idx_images(payload, static_cast<std::uint32_t>(idx->size()),
                                                     static_cast<std::uint32_t>(a.height),
                                                     static_cast<std::uint32_t>(a.width)));
        written.push_back(dir / (p + "-labels.idx1-ubyte"));
        write_file(written.back(), encode_idx_labels(mains));
        written.push_back(dir / (p + "-sublabels.idx1-ubyte"));
        write_file(written.back(), encode_idx_labels(subs));
    }
    written.push_back(dir / "manifest.json");
    write_text_file(written.back(), a.manifest.to_json(a.split, a.width, a.height).dump(2) + "\n");
    return written;
}

DatasetArtifact read_idx(const fs::path& dir) {
    json mj;
    try {
        mj = json::parse(read_text_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw UserError("manifest.json: " + std::string(e.what()));
    }
    DatasetArtifact a;
    try {
        a.manifest.hierarchy = mj.at("hierarchy");
        a.manifest.label_map = mj.at("label_map");
        a.manifest.config_hash = mj.at("config_hash").get<std::string>();
        a.manifest.main_counts = mj.at("counts").at("main").get<std::vector<std::int64_t>>();
        a.manifest.sub_counts = mj.at("counts").at("sub").get<std::vector<std::int64_t>>();
        a.manifest.split_ratio = mj.at("split").at("ratio").get<double>();
        a.manifest.split_seed = mj.at("split").at("seed").get<std::uint64_t>();
        a.split.train = mj.at("split").at("train").get<std::vector<std::size_t>>();
        a.split.test = mj.at("split").at("test").get<std::vector<std::size_t>>();
        a.manifest.created_at = mj.at("created_at").get<std::string>();
        a.manifest.tool_version = mj.at("tool_version").get<std::string>();
        if (!mj.at("normalization").is_null()) {
            a.manifest.normalization = Normalization{mj["normalization"].at("mu").get<double>(),
                                                     mj["normalization"].at("sigma").get<double>()};
        }
        a.width = mj.at("image").at("width").get<int>();
        a.height = mj.at("image").at("height").get<int>();
    } catch (const json::exception& e) {
        throw UserError("manifest.json: " + std::string(e.what()));
    }

    const std::size_t n = a.split.train.size() + a.split.test.size();
    const std::size_t plane = static_cast<std::size_t>(a.width) * static_cast<std::size_t>(a.height);
    a.images.assign(n * plane, 0);
    a.main_labels.assign(n, 0);
    a.sub_labels.assign(n, 0);
    for (const auto& [prefix, idx] : {std::pair{"train", &a.split.train}, std::pair{"test", &a.split.test}}) {
        const std::string p = prefix;
        auto imgs = decode_idx_images(read_file(dir / (p + "-images.idx3-ubyte")), p + "-images.idx3-ubyte");
        auto mains = read_idx_labels(dir / (p + "-labels.idx1-ubyte"));
        auto subs = read_idx_labels(dir / (p + "-sublabels.idx1-ubyte"));
        if (imgs.count != idx->size() || mains.size() != idx->size() || subs.size() != idx->size()) {
            throw UserError("manifest/count mismatch: manifest lists " + std::to_string(idx->size()) + " " + p +
                            " samples, files hold " + std::to_string(imgs.count) + " images, " +
                            std::to_string(mains.size()) + " labels, " + std::to_string(subs.size()) + " sub-labels");
        }
        if (imgs.width != static_cast<std::uint32_t>(a.width) || imgs.height != static_cast<std::uint32_t>(a.height)) {
            throw UserError("manifest/count mismatch: image dimensions differ from manifest");
        }
        for (std::size_t k = 0; k < idx->size(); ++k) {
            const std::size_t i = (*idx)[k];
            if (i >= n) throw UserError("manifest split index out of range");
            std::copy_n(imgs.payload.begin() + static_cast<std::ptrdiff_t>(k * plane), plane,
                        a.images.begin() + static_cast<std::ptrdiff_t>(i * plane));
            a.main_labels[i] = mains[k];
            a.sub_labels[i] = subs[k];
        }
    }
    a.validate();
    return a;
}

}  // namespace mnistgen
