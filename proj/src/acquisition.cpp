#include "mnistgen/acquisition.hpp"

#include "mnistgen/error.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <thread>
#include <unordered_set>

namespace mnistgen {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ImageSource s) {
    return s == ImageSource::WebApi ? "web_api" : "local_folder";
}

std::string content_id(const Image& rgb) {
    std::vector<std::uint8_t> canon;
    canon.reserve(8 + rgb.pixels.size());
    auto put32 = [&](std::uint32_t v) {
        for (int shift = 24; shift >= 0; shift -= 8) canon.push_back(static_cast<std::uint8_t>(v >> shift));
    };
    put32(static_cast<std::uint32_t>(rgb.width));
    put32(static_cast<std::uint32_t>(rgb.height));
    canon.insert(canon.end(), rgb.pixels.begin(), rgb.pixels.end());
    return sha256_hex(canon);
}

ImageRecord make_record(Image rgb, ImageSource source, std::string keyword, std::string origin) {
    if (rgb.channels != 3) throw UserError("image records hold RGB pixels");
    if (rgb.width < 1 || rgb.height < 1) throw UserError("image has zero extent");
    ImageRecord r;
    r.id = content_id(rgb);
    r.source = source;
    r.keyword = std::move(keyword);
    r.pixels = std::move(rgb);
    r.origin = std::move(origin);
    r.fetched_at = std::chrono::system_clock::now();
    return r;
}

namespace {

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

std::vector<ImageRecord> ingest_folder(const fs::path& dir, const std::string& keyword,
                                       const WarningSink& warn) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) {
        throw EnvironmentError("unreadable directory: " + dir.string());
    }
    std::vector<fs::path> files;
    for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
        if (it->is_regular_file() && has_image_extension(it->path())) files.push_back(it->path());
    }
    if (ec) throw EnvironmentError("unreadable directory: " + dir.string() + ": " + ec.message());
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

    std::vector<ImageRecord> out;
    out.reserve(files.size());
    for (const auto& f : files) {
        try {
            auto rec = make_record(load_image(f), ImageSource::LocalFolder, keyword, f.string());
            fs::path hint = f;
            hint += ".hint";
            if (fs::exists(hint)) {
                std::string text = read_text_file(hint);
                while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
                rec.concept_hint = text;
            }
            out.push_back(std::move(rec));
        } catch (const Error& e) {
            if (warn) warn("skipping " + f.string() + ": " + e.what());
        }
    }
    if (out.empty() && warn) warn("no decodable images in " + dir.string());
    return out;
}

std::vector<ImageRecord> dedupe(std::vector<ImageRecord> records) {
    std::unordered_set<std::string> seen;
    std::vector<ImageRecord> out;
    out.reserve(records.size());
    for (auto& r : records) {
        if (seen.insert(r.id).second) out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Web fetch with on-disk cache
// ---------------------------------------------------------------------------

namespace {

std::string percent_encode(std::string_view s) {
    static constexpr char hex[] = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 0xF]);
        }
    }
    return out;
}

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // /path?query
};

SplitUrl split_url(const std::string& url) {
    auto scheme = url.find("://");
    if (scheme == std::string::npos) throw UserError("not an absolute URL: " + url);
    auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

class UrlCache {
public:
    explicit UrlCache(fs::path root) : root_(std::move(root)) {
        fs::create_directories(root_);
        std::ifstream in(root_ / "index.jsonl");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                auto j = json::parse(line);
                entries_[j.at("url").get<std::string>()] = j;
            } catch (const json::exception&) {
                // A torn trailing line from an interrupted writer; ignore it.
            }
        }
    }

    const json* lookup(const std::string& url) const {
        auto it = entries_.find(url);
        return it == entries_.end() ? nullptr : &it->second;
    }

    std::optional<std::string> load_search(const std::string& url) const {
        const json* e = lookup(url);
        if (!e || e->value("kind", "") != "search") return std::nullopt;
        fs::path p = root_ / e->at("file").get<std::string>();
        if (!fs::exists(p)) return std::nullopt;
        return read_text_file(p);
    }

    void store_search(const std::string& url, const std::string& body) {
        std::string h = sha256_hex(url);
        std::string rel = "search/" + h.substr(0, 2) + "/" + h + ".json";
        write_text_file(root_ / rel, body);
        append({{"url", url}, {"kind", "search"}, {"file", rel}});
    }

    std::optional<Image> load_image_for(const std::string& url) const {
        const json* e = lookup(url);
        if (!e || e->value("kind", "") != "image") return std::nullopt;
        fs::path p = root_ / e->at("file").get<std::string>();
        if (!fs::exists(p)) return std::nullopt;
        return load_image(p);
    }

    bool known_bad(const std::string& url) const {
        const json* e = lookup(url);
        return e && e->value("kind", "") == "undecodable";
    }

    void store_image(const std::string& url, const Image& img, const std::string& id) {
        std::string rel = id.substr(0, 2) + "/" + id + ".png";
        if (!fs::exists(root_ / rel)) save_png(img, root_ / rel);
        append({{"url", url}, {"kind", "image"}, {"file", rel}, {"id", id}});
    }

    void store_bad(const std::string& url) { append({{"url", url}, {"kind", "undecodable"}}); }

private:
    void append(json entry) {
        std::ofstream out(root_ / "index.jsonl", std::ios::app);
        if (!out) throw EnvironmentError("cannot append to cache index in " + root_.string());
        out << entry.dump() << '\n';
        auto url = entry.at("url").get<std::string>();
        entries_[url] = std::move(entry);
    }

    fs::path root_;
    std::map<std::string, json> entries_;
};

struct HttpResult {
    int status = 0;
    std::string body;
};

class HttpFetcher {
public:
    HttpFetcher(const WebFetchConfig& cfg, FetchStats& stats) : cfg_(cfg), stats_(stats) {}

    HttpResult get(const std::string& url, const httplib::Headers& headers) {
        auto [origin, path] = split_url(url);
        auto& cli = client(origin);
        ++stats_.network_requests;
        auto res = cli.Get(path, headers);
        if (!res) {
            throw EnvironmentError("request to " + origin + " failed: " + httplib::to_string(res.error()));
        }
        return {res->status, res->body};
    }

    // Retries 429 responses with exponential backoff; returns the final response.
    HttpResult get_with_backoff(const std::string& url, const httplib::Headers& headers) {
        auto delay = cfg_.initial_backoff;
        for (int attempt = 0;; ++attempt) {
            HttpResult r = get(url, headers);
            if (r.status != 429 || attempt >= cfg_.max_retries) return r;
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
    }

private:
    httplib::Client& client(const std::string& origin) {
        auto it = clients_.find(origin);
        if (it == clients_.end()) {
            auto cli = std::make_unique<httplib::Client>(origin);
            cli->set_follow_location(true);
            cli->set_connection_timeout(cfg_.timeout);
            cli->set_read_timeout(cfg_.timeout);
            it = clients_.emplace(origin, std::move(cli)).first;
        }
        return *it->second;
    }

    const WebFetchConfig& cfg_;
    FetchStats& stats_;
    std::map<std::string, std::unique_ptr<httplib::Client>> clients_;
};

void check_auth(int status, const std::string& url) {
    if (status == 401 || status == 403) {
        throw EnvironmentError("image API rejected the credentials (HTTP " + std::to_string(status) +
                               ") for " + url + "; set a valid access key in " + kApiKeyEnv);
    }
}

std::vector<std::string> image_urls_from_page(const json& page) {
    std::vector<std::string> urls;
    auto results = page.find("results");
    if (results == page.end() || !results->is_array()) return urls;
    for (const auto& r : *results) {
        auto u = r.find("urls");
        if (u == r.end() || !u->is_object()) continue;
        for (const char* size : {"small", "regular", "thumb", "raw"}) {
            if (u->contains(size) && (*u)[size].is_string()) {
                urls.push_back((*u)[size].get<std::string>());
                break;
            }
        }
    }
    return urls;
}

}  // namespace

std::vector<ImageRecord> fetch_keyword(const std::string& keyword, int count,
                                       const std::string& api_key, const WebFetchConfig& config,
                                       FetchStats* stats_out, const WarningSink& warn) {
    if (count < 1) throw UserError("fetch: count must be at least 1");
    if (api_key.empty()) {
        throw UserError(std::string("fetch: missing API key; export ") + kApiKeyEnv);
    }
    FetchStats local;
    FetchStats& stats = stats_out ? *stats_out : local;
    UrlCache cache(config.cache_dir);
    HttpFetcher http(config, stats);
    const httplib::Headers auth = {{"Authorization", "Client-ID " + api_key},
                                   {"Accept-Version", "v1"}};

    std::vector<ImageRecord> out;
    std::unordered_set<std::string> seen;
    for (int page = 1; page <= config.max_pages && static_cast<int>(out.size()) < count; ++page) {
        const std::string url = config.base_url + config.search_path +
                                "?query=" + percent_encode(keyword) +
                                "&per_page=" + std::to_string(config.per_page) +
                                "&page=" + std::to_string(page);
        std::string body;
        if (auto cached = cache.load_search(url)) {
            ++stats.cache_hits;
            body = std::move(*cached);
        } else {
            HttpResult r = http.get_with_backoff(url, auth);
            check_auth(r.status, url);
            if (r.status == 429) {
                stats.rate_limited = true;
                if (warn) warn("rate limited on page " + std::to_string(page) + "; returning " +
                               std::to_string(out.size()) + " image(s)");
                break;
            }
            if (r.status != 200) {
                throw EnvironmentError("image search failed with HTTP " + std::to_string(r.status));
            }
            body = std::move(r.body);
            cache.store_search(url, body);
        }

        json parsed;
        try {
            parsed = json::parse(body);
        } catch (const json::exception&) {
            throw EnvironmentError("image search returned malformed JSON for " + url);
        }
        auto urls = image_urls_from_page(parsed);
        if (urls.empty()) break;

        bool stop = false;
        for (const auto& img_url : urls) {
            if (static_cast<int>(out.size()) >= count) break;
            if (cache.known_bad(img_url)) {
                ++stats.cache_hits;
                continue;
            }
            std::optional<Image> img = cache.load_image_for(img_url);
            if (img) {
                ++stats.cache_hits;
            } else {
                HttpResult r = http.get_with_backoff(img_url, {});
                if (r.status == 429) {
                    stats.rate_limited = true;
                    if (warn) warn("rate limited while downloading images; returning partial result");
                    stop = true;
                    break;
                }
                if (r.status != 200) {
                    if (warn) warn("skipping " + img_url + ": HTTP " + std::to_string(r.status));
                    continue;
                }
                try {
                    img = decode_image({reinterpret_cast<const std::uint8_t*>(r.body.data()), r.body.size()});
                } catch (const Error& e) {
                    ++stats.skipped_undecodable;
                    if (warn) warn("skipping undecodable image " + img_url + ": " + e.what());
                    cache.store_bad(img_url);
                    continue;
                }
                cache.store_image(img_url, *img, content_id(*img));
            }
            auto rec = make_record(std::move(*img), ImageSource::WebApi, keyword, img_url);
            if (seen.insert(rec.id).second) out.push_back(std::move(rec));
        }
        if (stop) break;
        if (parsed.contains("total_pages") && parsed["total_pages"].is_number_integer() &&
            page >= parsed["total_pages"].get<int>()) {
            break;
        }
    }
    return out;
}

}  // namespace mnistgen
