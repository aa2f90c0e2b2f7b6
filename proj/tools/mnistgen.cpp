// mnistgen: command-line front end for building MNIST-style datasets.

#include "mnistgen/config.hpp"
#include "mnistgen/error.hpp"
#include "mnistgen/eval.hpp"
#include "mnistgen/export.hpp"
#include "mnistgen/hierarchy.hpp"
#include "mnistgen/image.hpp"
#include "mnistgen/transforms.hpp"
#include "mnistgen/workflow.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mnistgen;

namespace {

struct GlobalFlags {
    std::string config = "config.json";
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string mode;
    std::string provider;
    int port = 8765;
    bool json = false;
};

RunConfig effective_config(const GlobalFlags& g) {
    RunConfig c = load_run_config(g.config);
    if (g.seed) c.seed = *g.seed;
    if (!g.out.empty()) c.output_dir = g.out;
    if (!g.mode.empty()) c.mode = mode_from_string(g.mode);
    if (!g.provider.empty()) c.provider = g.provider;
    c.validate();
    return c;
}

void print_result(const json& j) { std::cout << j.dump(2) << std::endl; }

Pipeline pipeline_from_file(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw UserError(path + ": " + e.what());
    }
    if (j.is_object()) {
        if (!j.contains("pipeline")) throw UserError(path + ": expected a stage list or a config with a 'pipeline' key");
        j = j["pipeline"];
    }
    return j.is_null() ? default_pipeline() : Pipeline::from_json(j, Shape{3, std::nullopt, std::nullopt});
}

int init_config(const std::string& tmpl, const std::string& dir, bool force) {
    CategoryHierarchy h;
    if (tmpl == "food") {
        h = food_template();
    } else if (tmpl == "tree") {
        h = tree_template();
    } else {
        throw UserError("unknown template '" + tmpl + "' (expected food or tree)");
    }
    const fs::path root = dir.empty() ? fs::path(".") : fs::path(dir);
    const fs::path hp = root / "hierarchy.json";
    const fs::path cp = root / "config.json";
    for (const auto& p : {hp, cp}) {
        if (fs::exists(p) && !force) throw UserError(p.string() + " already exists (use --force to overwrite)");
    }
    write_text_file(hp, serialize_hierarchy(h));
    json cfg = default_run_config_json();
    cfg["source"]["keyword"] = tmpl;
    // Stamped once here so every run from this config writes the same manifest.
    cfg["created_at"] = manifest_timestamp(RunConfig{});
    write_text_file(cp, cfg.dump(2) + "\n");
    print_result({{"hierarchy", hp.string()},
                  {"config", cp.string()},
                  {"main_categories", h.main_count()},
                  {"subcategories", h.subcategory_count()}});
    return 0;
}

int evaluate(const std::string& predictions, const std::string& labels, std::optional<int> classes) {
    auto pairs = read_predictions_csv(predictions);
    std::vector<int> actual = pairs.actual;
    if (!labels.empty()) {
        const auto raw = read_idx_labels(labels);
        actual.assign(raw.begin(), raw.end());
        if (actual.size() != pairs.predicted.size()) {
            throw UserError("label count mismatch: " + labels + " holds " + std::to_string(actual.size()) +
                            " labels but " + predictions + " holds " + std::to_string(pairs.predicted.size()) +
                            " predictions");
        }
    } else if (actual.empty()) {
        throw UserError(predictions + " has no actual labels; pass --labels or use actual,predicted rows");
    }
    int k = classes.value_or(0);
    if (!classes) {
        for (int v : actual) k = std::max(k, v + 1);
        for (int v : pairs.predicted) k = std::max(k, v + 1);
    }
    if (k < 1) throw UserError("evaluate: number of classes must be positive");
    const auto report = compute_metrics(confusion(actual, pairs.predicted, static_cast<std::size_t>(k)));
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << std::endl;
    print_result(report.to_json());
    return 0;
}

int compare(const std::string& first, const std::string& second, const std::vector<std::string>& images) {
    if (images.empty()) throw UserError("compare-pipelines needs at least one --image");
    const Pipeline p1 = pipeline_from_file(first);
    const Pipeline p2 = pipeline_from_file(second);
    std::vector<AnnotatedImage> inputs;
    for (const auto& path : images) inputs.push_back({load_image(path), std::nullopt, std::nullopt});
    print_result(compare_pipelines(p1, p2, inputs).to_json());
    return 0;
}

void on_signal(int) { request_shutdown(); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Build MNIST-style datasets from raw images with semantic filtering and RL-guided curation.",
                 "mnistgen"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalFlags g;
    app.add_option("--config", g.config, "Run config JSON")->capture_default_str();
    app.add_option("--seed", g.seed, "Override the run seed");
    app.add_option("--out", g.out, "Override the output directory");
    app.add_option("--mode", g.mode, "individual | smart | fast");
    app.add_option("--provider", g.provider, "stub | external");
    app.add_option("--port", g.port, "Review server port")->capture_default_str();
    app.add_flag("--json", g.json, "Emit JSON progress lines on stdout");

    auto* init = app.add_subcommand("init-config", "Write a hierarchy skeleton and a run config");
    std::string tmpl = "food";
    std::string init_dir;
    bool force = false;
    init->add_option("--template", tmpl, "food | tree")->capture_default_str();
    init->add_option("--dir", init_dir, "Directory to write into (default: current)");
    init->add_flag("--force", force, "Overwrite existing files");

    auto* fetch = app.add_subcommand("fetch", "Collect images into the run's pool");
    std::string source, path, keyword;
    std::optional<int> count;
    fetch->add_option("--source", source, "web | folder");
    fetch->add_option("--path", path, "Folder to ingest");
    fetch->add_option("--keyword", keyword, "Search keyword / label hint");
    fetch->add_option("--count", count, "Number of web images");

    auto* analyze = app.add_subcommand("analyze", "Categorize the pool and apply the pipeline");
    auto* curate = app.add_subcommand("curate", "Route the analysed pool and resolve the review queue");
    std::string reviewer = "agent";
    std::string host = "127.0.0.1";
    curate->add_option("--reviewer", reviewer, "agent | serve | none")->capture_default_str();
    curate->add_option("--host", host, "Review server bind address")->capture_default_str();
    auto* serve = app.add_subcommand("serve", "Serve the pending review queue until it drains");
    serve->add_option("--host", host, "Bind address")->capture_default_str();
    auto* exp = app.add_subcommand("export", "Write IDX files and the manifest");

    auto* eval = app.add_subcommand("evaluate", "Weighted precision/recall/F1 for predictions");
    std::string predictions, labels;
    std::optional<int> classes;
    eval->add_option("--predictions", predictions, "CSV of actual,predicted or predicted rows")->required();
    eval->add_option("--labels", labels, "IDX label file with the actual labels");
    eval->add_option("--classes", classes, "Number of classes (default: inferred)");

    auto* cmp = app.add_subcommand("compare-pipelines", "Stage-by-stage divergence of two pipelines");
    std::string first, second;
    std::vector<std::string> images;
    cmp->add_option("--first", first, "Pipeline JSON (stage list or run config)")->required();
    cmp->add_option("--second", second, "Pipeline JSON (stage list or run config)")->required();
    cmp->add_option("--image", images, "Input image (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        const Reporter reporter(g.json);
        if (*init) return init_config(tmpl, init_dir, force);
        if (*eval) return evaluate(predictions, labels, classes);
        if (*cmp) return compare(first, second, images);

        RunConfig cfg = effective_config(g);
        if (*fetch) {
            if (!source.empty()) cfg.source.kind = source;
            if (!path.empty()) cfg.source.path = path;
            if (!keyword.empty()) cfg.source.keyword = keyword;
            if (count) cfg.source.count = *count;
            cfg.validate();
            print_result(workflow_fetch(cfg, reporter));
        } else if (*analyze) {
            auto provider = make_provider(cfg);
            print_result(workflow_analyze(cfg, *provider, reporter));
        } else if (*curate || *serve) {
            const Reviewer r = *serve ? Reviewer::Serve : reviewer_from_string(reviewer);
            if (r == Reviewer::Serve) {
                std::signal(SIGINT, on_signal);
                std::signal(SIGTERM, on_signal);
            }
            print_result(workflow_curate(cfg, r, ServeOptions{host, g.port}, reporter));
        } else if (*exp) {
            print_result(workflow_export(cfg, reporter));
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return e.kind() == ErrorKind::User ? 1 : 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
}
