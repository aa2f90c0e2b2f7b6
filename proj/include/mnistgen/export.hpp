#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mnistgen {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr const char* kToolVersion = "0.3.0";

struct SplitIndices {
    std::vector<std::size_t> train;  // ascending
    std::vector<std::size_t> test;   // ascending
    friend bool operator==(const SplitIndices&, const SplitIndices&) = default;
};

// Stratified by label, deterministic for a seed. Classes with fewer than two
// samples go entirely to train (with a warning).
SplitIndices split_dataset(const std::vector<int>& labels, double ratio, std::uint64_t seed,
                           std::vector<std::string>* warnings = nullptr);

struct Normalization {
    double mu = 0.5;
    double sigma = 0.5;
    friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct Manifest {
    nlohmann::json hierarchy;   // snapshot of the hierarchy config
    nlohmann::json label_map;   // flattened labels
    std::string config_hash;    // SHA-256 of the canonical run config
    std::vector<std::int64_t> main_counts;
    std::vector<std::int64_t> sub_counts;
    double split_ratio = 0.8;
    std::uint64_t split_seed = 0;
    std::string created_at;
    std::string tool_version = kToolVersion;
    std::optional<Normalization> normalization;

    nlohmann::json to_json(const SplitIndices& split, int width, int height) const;
    friend bool operator==(const Manifest&, const Manifest&) = default;
};

struct DatasetArtifact {
    int width = 28;
    int height = 28;
    std::vector<std::uint8_t> images;  // N x H x W, row-major
    std::vector<std::uint8_t> main_labels;
    std::vector<std::uint8_t> sub_labels;  // flattened subcategory index
    SplitIndices split;
    Manifest manifest;

    std::size_t count() const noexcept { return main_labels.size(); }
    // Throws UserError when sizes, labels, splits or counts disagree.
    void validate() const;
    friend bool operator==(const DatasetArtifact&, const DatasetArtifact&) = default;
};

std::string canonical_config_hash(const nlohmann::json& run_config);

// Recomputes per-class counts from the labels.
void fill_counts(DatasetArtifact& a, std::size_t main_classes, std::size_t sub_classes);

// Writes {train,test}-images.idx3-ubyte, {train,test}-labels.idx1-ubyte,
// {train,test}-sublabels.idx1-ubyte and manifest.json into `dir`.
std::vector<std::filesystem::path> write_idx(const DatasetArtifact& artifact, const std::filesystem::path& dir);
DatasetArtifact read_idx(const std::filesystem::path& dir);

// Single IDX files.
std::vector<std::uint8_t> encode_idx_images(const std::vector<std::uint8_t>& payload, std::uint32_t count,
                                            std::uint32_t height, std::uint32_t width);
std::vector<std::uint8_t> encode_idx_labels(const std::vector<std::uint8_t>& labels);

struct IdxImages {
    std::uint32_t count = 0;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<std::uint8_t> payload;
};
IdxImages decode_idx_images(const std::vector<std::uint8_t>& bytes, const std::string& name = "images");
std::vector<std::uint8_t> decode_idx_labels(const std::vector<std::uint8_t>& bytes, const std::string& name = "labels");
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

}  // namespace mnistgen
