#include "mnistgen/error.hpp"
#include "mnistgen/export.hpp"
#include "mnistgen/image.hpp"

#include "oracles.hpp"
#include "synthetic.hpp"

#include <doctest.h>

#include <filesystem>
#include <map>
#include <numeric>

#include <unistd.h>

using namespace mnistgen;
namespace fs = std::filesystem;

namespace {

const fs::path kGolden = MNISTGEN_GOLDEN_DIR;

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("mnistgen_export_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("idx encoders match the golden bytes") {
    std::vector<std::uint8_t> payload(24);
    for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<std::uint8_t>(i * 10);
    const auto images = encode_idx_images(payload, 2, 3, 4);
    CHECK(images == oracle::file_bytes(kGolden / "tiny-images.idx3-ubyte"));
    CHECK(images == oracle::idx3(2, 3, 4, payload));
    CHECK(std::vector<std::uint8_t>(images.begin(), images.begin() + 4) == std::vector<std::uint8_t>{0, 0, 8, 3});
    const auto labels = encode_idx_labels({7, 255});
    CHECK(labels == oracle::file_bytes(kGolden / "tiny-labels.idx1-ubyte"));
    CHECK(labels == std::vector<std::uint8_t>{0, 0, 8, 1, 0, 0, 0, 2, 7, 255});
}

TEST_CASE("idx decoders read the golden files") {
    const auto imgs = decode_idx_images(oracle::file_bytes(kGolden / "tiny-images.idx3-ubyte"));
    CHECK(imgs.count == 2);
    CHECK(imgs.height == 3);
    CHECK(imgs.width == 4);
    CHECK(imgs.payload[23] == 230);
    CHECK(read_idx_labels(kGolden / "tiny-labels.idx1-ubyte") == std::vector<std::uint8_t>{7, 255});
}

TEST_CASE("decoder errors name the problem") {
    auto bytes = oracle::file_bytes(kGolden / "tiny-images.idx3-ubyte");
    SUBCASE("bad magic") {
        bytes[3] = 0x01;
        CHECK_THROWS_WITH_AS(decode_idx_images(bytes), doctest::Contains("bad magic"), UserError);
    }
    SUBCASE("truncated payload") {
        bytes.pop_back();
        CHECK_THROWS_WITH_AS(decode_idx_images(bytes), doctest::Contains("truncated payload"), UserError);
    }
    SUBCASE("truncated header") {
        bytes.resize(10);
        CHECK_THROWS_AS(decode_idx_images(bytes), UserError);
    }
    SUBCASE("labels fed to the image decoder") {
        CHECK_THROWS_AS(decode_idx_images(oracle::file_bytes(kGolden / "tiny-labels.idx1-ubyte")), UserError);
    }
}

TEST_CASE("write then read reproduces the artifact") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = testing::random_artifact(rng);
        const auto dir = scratch("rt");
        const auto files = write_idx(a, dir);
        CHECK(files.size() == 7);
        CHECK(read_idx(dir) == a);
        fs::remove_all(dir);
    }
}

TEST_CASE("split files follow the manifest") {
    std::mt19937_64 rng(3);
    const auto a = testing::random_artifact(rng);
    const auto dir = scratch("layout");
    write_idx(a, dir);
    const auto train = decode_idx_images(read_file(dir / "train-images.idx3-ubyte"));
    CHECK(train.count == a.split.train.size());
    const auto labels = read_idx_labels(dir / "test-labels.idx1-ubyte");
    REQUIRE(labels.size() == a.split.test.size());
    for (std::size_t k = 0; k < labels.size(); ++k) CHECK(labels[k] == a.main_labels[a.split.test[k]]);
    const auto m = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    CHECK(m["tool_version"] == kToolVersion);
    CHECK(m["counts"]["main"].get<std::vector<std::int64_t>>() == a.manifest.main_counts);
    fs::remove_all(dir);
}

TEST_CASE("invalid artifacts are refused") {
    std::mt19937_64 rng(8);
    auto a = testing::random_artifact(rng);
    SUBCASE("empty") {
        DatasetArtifact e;
        CHECK_THROWS_AS(e.validate(), UserError);
    }
    SUBCASE("count mismatch") {
        a.manifest.main_counts[0] += 1;
        CHECK_THROWS_WITH_AS(a.validate(), doctest::Contains("manifest/count mismatch"), UserError);
    }
    SUBCASE("split overlap") {
        a.split.test.push_back(a.split.train.front());
        CHECK_THROWS_AS(a.validate(), UserError);
    }
    SUBCASE("payload size") {
        a.images.pop_back();
        CHECK_THROWS_AS(write_idx(a, scratch("bad")), UserError);
    }
}

TEST_CASE("read detects a manifest that disagrees with the files") {
    std::mt19937_64 rng(12);
    auto a = testing::random_artifact(rng);
    while (a.count() < 4) a = testing::random_artifact(rng);
    const auto dir = scratch("tamper");
    write_idx(a, dir);
    write_file(dir / "train-labels.idx1-ubyte", encode_idx_labels({0}));
    CHECK_THROWS_WITH_AS(read_idx(dir), doctest::Contains("manifest/count mismatch"), UserError);
    fs::remove_all(dir);
}

TEST_CASE("stratified split") {
    std::vector<int> labels;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 10 * (c + 1); ++i) labels.push_back(c);
    const auto s = split_dataset(labels, 0.8, 5);
    CHECK(std::is_sorted(s.train.begin(), s.train.end()));
    CHECK(s.train.size() + s.test.size() == labels.size());
    std::map<int, int> train_per;
    for (auto i : s.train) ++train_per[labels[i]];
    CHECK(train_per[0] == 8);
    CHECK(train_per[1] == 16);
    CHECK(train_per[2] == 24);
    const auto again = split_dataset(labels, 0.8, 5);
    CHECK(again.train == s.train);
    CHECK(split_dataset(labels, 0.8, 6).train != s.train);
}

TEST_CASE("singleton classes go to train with a warning") {
    std::vector<std::string> warnings;
    const auto s = split_dataset({0, 0, 0, 1}, 0.5, 1, &warnings);
    CHECK(std::find(s.train.begin(), s.train.end(), 3u) != s.train.end());
    CHECK(warnings.size() == 1);
    CHECK_THROWS_AS(split_dataset({0, 1}, 1.0, 1), UserError);
}
