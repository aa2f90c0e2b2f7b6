#pragma once

#include "mnistgen/image.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mnistgen {

enum class ImageSource { WebApi, LocalFolder };

std::string to_string(ImageSource s);

struct ImageRecord {
    std::string id;  // SHA-256 of the decoded RGB byte stream
    ImageSource source = ImageSource::LocalFolder;
    std::string keyword;
    Image pixels;    // always 3 channels
    std::optional<std::string> concept_hint;
    std::string origin;  // file path or URL
    std::chrono::system_clock::time_point fetched_at{};
};

// Id over width, height and the canonical RGB bytes, so re-encoded copies
// of the same picture collapse.
std::string content_id(const Image& rgb);

ImageRecord make_record(Image rgb, ImageSource source, std::string keyword,
                        std::string origin = {});

using WarningSink = std::function<void(const std::string&)>;

// Every decodable PNG/JPEG directly inside `dir`, in lexicographic filename
// order. A sidecar "<file>.hint" text file, when present, sets concept_hint.
std::vector<ImageRecord> ingest_folder(const std::filesystem::path& dir, const std::string& keyword,
                                       const WarningSink& warn = {});

// Keeps the first occurrence of each id; preserves input order.
std::vector<ImageRecord> dedupe(std::vector<ImageRecord> records);

struct WebFetchConfig {
    std::string base_url = "https://api.unsplash.com";
    std::string search_path = "/search/photos";
    int per_page = 30;
    int max_pages = 20;
    int max_retries = 4;
    std::chrono::milliseconds initial_backoff{500};
    std::filesystem::path cache_dir = "cache";
    std::chrono::seconds timeout{30};
};

// Counts outgoing HTTP requests; used by tests and progress output.
struct FetchStats {
    int network_requests = 0;
    int cache_hits = 0;
    int skipped_undecodable = 0;
    bool rate_limited = false;
};

// Keyword search against an Unsplash-compatible endpoint. Search pages and
// image bytes are cached under cache_dir keyed by URL:
//   cache/<first 2 hash chars>/<hash>.png  +  cache/index.jsonl
// The index has a single-writer contract.
std::vector<ImageRecord> fetch_keyword(const std::string& keyword, int count,
                                       const std::string& api_key, const WebFetchConfig& config,
                                       FetchStats* stats = nullptr, const WarningSink& warn = {});

inline constexpr const char* kApiKeyEnv = "MNISTGEN_API_KEY";

}  // namespace mnistgen
