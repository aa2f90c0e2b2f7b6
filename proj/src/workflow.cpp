#include "mnistgen/workflow.hpp"

#include "mnistgen/acquisition.hpp"
#include "mnistgen/error.hpp"
#include "mnistgen/image.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <thread>

namespace mnistgen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::atomic<bool> g_shutdown{false};

json parse_json_file(const fs::path& path, const std::string& hint) {
    if (!fs::exists(path)) throw UserError(path.string() + " not found; " + hint);
    try {
        return json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw UserError(path.string() + ": " + e.what());
    }
}

json result_to_json(const CategorizationResult& r) {
    json rows = json::array();
    for (const auto& s : r.breakdown) {
        rows.push_back({s.flat_index, s.main_index, s.sub_index, s.text_sim, s.char_sim, s.visual_sim, s.total});
    }
    return {{"best_main", r.best_main}, {"best_sub", r.best_sub}, {"best_flat", r.best_flat},
            {"confidence", r.confidence}, {"eligible", r.eligible}, {"breakdown", rows}};
}

CategorizationResult result_from_json(const json& j) {
    CategorizationResult r;
    r.best_main = j.at("best_main").get<int>();
    r.best_sub = j.at("best_sub").get<int>();
    r.best_flat = j.at("best_flat").get<int>();
    r.confidence = j.at("confidence").get<double>();
    r.eligible = j.at("eligible").get<bool>();
    for (const auto& row : j.at("breakdown")) {
        r.breakdown.push_back({row.at(0).get<int>(), row.at(1).get<int>(), row.at(2).get<int>(), row.at(3).get<double>(),
                               row.at(4).get<double>(), row.at(5).get<double>(), row.at(6).get<double>()});
    }
    return r;
}

// PNG decoding always yields RGB; gray images come back with equal channels.
Image load_gray(const fs::path& path) {
    Image rgb = load_image(path);
    Image g(rgb.width, rgb.height, 1);
    for (std::size_t i = 0; i < g.pixels.size(); ++i) g.pixels[i] = rgb.pixels[i * 3];
    return g;
}

std::vector<ImageRecord> load_pool_records(const RunLayout& layout) {
    const json index = parse_json_file(layout.pool_index(), "run `fetch` first");
    std::vector<ImageRecord> out;
    for (const auto& e : index) {
        ImageRecord r;
        r.id = e.at("id").get<std::string>();
        r.source = e.at("source").get<std::string>() == "web_api" ? ImageSource::WebApi : ImageSource::LocalFolder;
        r.keyword = e.at("keyword").get<std::string>();
        r.origin = e.at("origin").get<std::string>();
        if (!e.at("concept_hint").is_null()) r.concept_hint = e["concept_hint"].get<std::string>();
        r.pixels = load_image(layout.pool() / (r.id + ".png"));
        if (content_id(r.pixels) != r.id) throw UserError("pool image " + r.id + " does not match its id");
        out.push_back(std::move(r));
    }
    return out;
}

std::optional<Normalization> pipeline_normalization(const Pipeline& p) {
    std::optional<Normalization> n;
    for (const auto& s : p.stages()) {
        if (const auto* norm = std::get_if<stage::Normalize>(&s)) n = Normalization{norm->mu, norm->sigma};
    }
    return n;
}

}  // namespace

void Reporter::event(const std::string& stage, const json& fields) const {
    if (quiet_) return;
    if (json_) {
        json j = fields;
        j["event"] = stage;
        std::cout << j.dump() << std::endl;
        return;
    }
    std::cerr << "[" << stage << "]";
    for (const auto& [k, v] : fields.items()) std::cerr << ' ' << k << '=' << (v.is_string() ? v.get<std::string>() : v.dump());
    std::cerr << std::endl;
}

void Reporter::warn(const std::string& message) const {
    if (json_) {
        std::cout << json{{"event", "warning"}, {"message", message}}.dump() << std::endl;
    } else {
        std::cerr << "warning: " << message << std::endl;
    }
}

std::unique_ptr<EmbeddingProvider> make_provider(const RunConfig& config) {
    if (config.provider == "stub") return std::make_unique<StubProvider>(config.seed);
    std::string cmd = config.provider_command;
    if (cmd.empty()) {
        if (const char* env = std::getenv(kProviderCommandEnv)) cmd = env;
    }
    if (cmd.empty()) {
        throw UserError(std::string("external provider selected but no command given; set ") + kProviderCommandEnv +
                        " or provider_command in the config");
    }
    return std::make_unique<ExternalProvider>(std::make_unique<ProcessTransport>(cmd));
}

Pipeline run_pipeline(const RunConfig& config) {
    Pipeline p = config.pipeline.is_null() ? default_pipeline()
                                           : Pipeline::from_json(config.pipeline, Shape{3, std::nullopt, std::nullopt});
    const Shape& out = p.output_shape();
    if (out.channels != 1 || !out.width || !out.height) {
        throw UserError("pipeline must end in a single-channel image of fixed size (add Grayscale and Resize/CenterCrop)");
    }
    return p;
}

CategoryHierarchy load_hierarchy(const fs::path& path, const Reporter& reporter) {
    if (!fs::exists(path)) throw UserError("hierarchy file " + path.string() + " does not exist");
    std::vector<std::string> warnings;
    auto h = parse_hierarchy(read_text_file(path), &warnings);
    for (const auto& w : warnings) reporter.warn(w);
    return h;
}

json workflow_fetch(const RunConfig& config, const Reporter& reporter) {
    const RunLayout layout{config.output_dir};
    const WarningSink warn = [&](const std::string& m) { reporter.warn(m); };
    std::vector<ImageRecord> records;
    FetchStats stats;
    if (config.source.kind == "folder") {
        if (!fs::is_directory(config.source.path)) {
            throw UserError("source folder " + config.source.path.string() + " does not exist");
        }
        records = ingest_folder(config.source.path, config.source.keyword, warn);
    } else {
        const char* key = std::getenv(kApiKeyEnv);
        WebFetchConfig wc;
        wc.cache_dir = layout.cache();
        records = fetch_keyword(config.source.keyword, config.source.count, key ? key : "", wc, &stats, warn);
    }
    const std::size_t before = records.size();
    records = dedupe(std::move(records));

    json index = json::array();
    for (const auto& r : records) {
        save_png(r.pixels, layout.pool() / (r.id + ".png"));
        index.push_back({{"id", r.id},
                         {"source", to_string(r.source)},
                         {"keyword", r.keyword},
                         {"origin", r.origin},
                         {"concept_hint", r.concept_hint ? json(*r.concept_hint) : json(nullptr)}});
    }
    write_text_file(layout.pool_index(), index.dump(2) + "\n");
    json summary = {{"images", records.size()}, {"duplicates", before - records.size()},
                    {"network_requests", stats.network_requests}, {"cache_hits", stats.cache_hits}};
    reporter.event("fetch", summary);
    return summary;
}

json workflow_analyze(const RunConfig& config, EmbeddingProvider& provider, const Reporter& reporter) {
    const RunLayout layout{config.output_dir};
    const auto h = load_hierarchy(config.hierarchy_path, reporter);
    const Pipeline pipeline = run_pipeline(config);
    const auto records = load_pool_records(layout);
    const PromptBank bank(h, provider);
    const ScoringWeights weights = config.scoring();

    json items = json::array();
    std::size_t skipped = 0, ineligible = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        FeatureBundle f;
        try {
            f = extract_features(rec, bank, provider);
        } catch (const UserError& e) {
            reporter.warn("skipping " + rec.id.substr(0, 12) + ": " + e.what());
            ++skipped;
            continue;
        }
        const auto result = categorize_features(f, bank, weights);
        if (!result.eligible) ++ineligible;
        AnnotatedImage x{rec.pixels, result, std::nullopt};
        const auto y = pipeline.apply(x);
        save_png(y.image, layout.transformed() / (rec.id + ".png"));
        items.push_back({{"id", rec.id},
                         {"result", result_to_json(result)},
                         {"visual", {f.visual.brightness, f.visual.contrast, f.visual.edge_density}},
                         {"embedding", f.embedding.values}});
        if ((i + 1) % 25 == 0 || i + 1 == records.size()) {
            reporter.event("analyze", {{"done", i + 1}, {"total", records.size()}});
        }
    }
    const json doc = {{"hierarchy_sha256", sha256_hex(read_text_file(config.hierarchy_path))},
                      {"pipeline", pipeline.to_json()},
                      {"items", items}};
    write_text_file(layout.analysis(), doc.dump() + "\n");
    return {{"analyzed", items.size()}, {"skipped", skipped}, {"ineligible", ineligible}};
}

std::vector<PoolEntry> load_pool_entries(const RunConfig& config, const CategoryHierarchy& h) {
    const RunLayout layout{config.output_dir};
    const json doc = parse_json_file(layout.analysis(), "run `analyze` first");
    if (doc.at("hierarchy_sha256").get<std::string>() != sha256_hex(read_text_file(config.hierarchy_path))) {
        throw UserError("analysis was produced with a different hierarchy; re-run `analyze`");
    }
    std::vector<PoolEntry> pool;
    try {
        for (const auto& it : doc.at("items")) {
            PoolEntry e;
            e.id = it.at("id").get<std::string>();
            e.result = result_from_json(it.at("result"));
            const auto& v = it.at("visual");
            e.visual = {v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>()};
            e.embedding.values = it.at("embedding").get<std::vector<double>>();
            e.raw = load_image(layout.pool() / (e.id + ".png"));
            e.transformed = load_gray(layout.transformed() / (e.id + ".png"));
            if (static_cast<std::size_t>(e.result.best_flat) >= h.subcategory_count()) {
                throw UserError("analysis label out of range for " + e.id);
            }
            pool.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw UserError(layout.analysis().string() + ": " + e.what());
    }
    return pool;
}

Reviewer reviewer_from_string(const std::string& s) {
    if (s == "agent") return Reviewer::Agent;
    if (s == "serve") return Reviewer::Serve;
    if (s == "none") return Reviewer::None;
    throw UserError("unknown reviewer '" + s + "' (expected agent, serve or none)");
}

void request_shutdown() { g_shutdown = true; }

json workflow_curate(const RunConfig& config, Reviewer reviewer, const ServeOptions& serve, const Reporter& reporter) {
    const RunLayout layout{config.output_dir};
    const auto h = load_hierarchy(config.hierarchy_path, reporter);
    const auto pool = load_pool_entries(config, h);
    ReviewState state(h, layout.decisions(), config.reward);
    Curator curator(state, config.curation());
    const auto summary = curator.run(pool);
    reporter.event("curate", {{"mode", to_string(config.mode)},
                              {"queued", summary.queued},
                              {"auto_kept", summary.auto_kept},
                              {"auto_removed", summary.auto_removed},
                              {"vetoed", summary.vetoed}});

    if (reviewer == Reviewer::Agent) {
        const auto n = curator.resolve_pending_with_agent();
        reporter.event("review", {{"reviewer", "agent"}, {"decided", n}});
    } else if (reviewer == Reviewer::Serve && state.stats().queue_depth > 0) {
        g_shutdown = false;
        ReviewServer server(state, serve.host, serve.port);
        const int port = server.start();
        reporter.event("serve", {{"url", "http://" + serve.host + ":" + std::to_string(port) + "/api/queue"},
                                 {"pending", state.stats().queue_depth}});
        while (!g_shutdown && state.stats().queue_depth > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(200));
        }
        server.stop();
    }

    const auto stats = state.stats();
    std::size_t kept = 0;
    for (const auto& m : state.membership()) kept += m.kept ? 1 : 0;
    return {{"mode", to_string(config.mode)},
            {"pool", pool.size()},
            {"kept", kept},
            {"pending", stats.queue_depth},
            {"stats", stats.to_json()}};
}

std::string manifest_timestamp(const RunConfig& config) {
    if (config.created_at) return *config.created_at;
    if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) {
        char* end = nullptr;
        const long long secs = std::strtoll(sde, &end, 10);
        if (end && *end == '\0') {
            const std::time_t t = static_cast<std::time_t>(secs);
            std::tm tm{};
            gmtime_r(&t, &tm);
            char buf[64];
            std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
            return buf;
        }
    }
    return iso8601_now();
}

json workflow_export(const RunConfig& config, const Reporter& reporter) {
    const RunLayout layout{config.output_dir};
    const auto h = load_hierarchy(config.hierarchy_path, reporter);
    if (h.subcategory_count() > 256) throw UserError("IDX labels are 8-bit; the hierarchy has more than 256 subcategories");
    const Pipeline pipeline = run_pipeline(config);
    const json doc = parse_json_file(layout.analysis(), "run `analyze` first");
    if (!fs::exists(layout.decisions())) throw UserError(layout.decisions().string() + " not found; run `curate` first");

    std::map<std::string, MembershipEntry> members;
    for (auto& m : membership_from_records(read_decision_log(layout.decisions()))) members[m.image_id] = m;

    DatasetArtifact a;
    a.width = *pipeline.output_shape().width;
    a.height = *pipeline.output_shape().height;
    std::size_t undecided = 0;
    for (const auto& it : doc.at("items")) {
        const auto id = it.at("id").get<std::string>();
        auto m = members.find(id);
        if (m == members.end()) {
            ++undecided;
            continue;
        }
        if (!m->second.kept || !m->second.label) continue;
        const int flat = *m->second.label;
        const Image img = load_gray(layout.transformed() / (id + ".png"));
        if (img.width != a.width || img.height != a.height) {
            throw UserError("transformed image " + id + " has the wrong size; re-run `analyze`");
        }
        a.images.insert(a.images.end(), img.pixels.begin(), img.pixels.end());
        a.main_labels.push_back(static_cast<std::uint8_t>(h.labels().at(static_cast<std::size_t>(flat)).main_index));
        a.sub_labels.push_back(static_cast<std::uint8_t>(flat));
    }
    if (undecided) reporter.warn(std::to_string(undecided) + " images have no decision yet and are left out");
    if (a.count() == 0) throw UserError("nothing to export: no kept images (N = 0)");

    std::vector<int> mains(a.main_labels.begin(), a.main_labels.end());
    std::vector<std::string> warnings;
    a.split = split_dataset(mains, config.split_ratio, config.seed, &warnings);
    for (const auto& w : warnings) reporter.warn(w);

    a.manifest.hierarchy = hierarchy_to_json(h);
    a.manifest.label_map = json::array();
    for (const auto& l : h.labels()) {
        a.manifest.label_map.push_back({{"flat", l.flat_index}, {"main_index", l.main_index}, {"sub_index", l.sub_index},
                                        {"main", l.main_name}, {"sub", l.sub_name}});
    }
    a.manifest.config_hash = config.canonical_hash();
    fill_counts(a, h.main_count(), h.subcategory_count());
    a.manifest.split_ratio = config.split_ratio;
    a.manifest.split_seed = config.seed;
    a.manifest.created_at = manifest_timestamp(config);
    a.manifest.normalization = pipeline_normalization(pipeline);

    const auto files = write_idx(a, layout.dataset());
    json out_files = json::array();
    for (const auto& f : files) out_files.push_back(f.string());
    json summary = {{"images", a.count()}, {"train", a.split.train.size()}, {"test", a.split.test.size()}, {"files", out_files}};
    reporter.event("export", {{"images", a.count()}, {"dir", layout.dataset().string()}});
    return summary;
}

}  // namespace mnistgen
