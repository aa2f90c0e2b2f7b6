#pragma once

#include "mnistgen/config.hpp"
#include "mnistgen/export.hpp"
#include "mnistgen/modes.hpp"
#include "mnistgen/provider.hpp"
#include "mnistgen/transforms.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace mnistgen {

// Progress output: JSON lines on stdout with --json, plain text on stderr
// otherwise.
class Reporter {
public:
    explicit Reporter(bool json_lines = false, bool quiet = false) : json_(json_lines), quiet_(quiet) {}
    void event(const std::string& stage, const nlohmann::json& fields = nlohmann::json::object()) const;
    void warn(const std::string& message) const;

private:
    bool json_;
    bool quiet_;
};

// Files inside the run's output directory.
struct RunLayout {
    std::filesystem::path root;
    std::filesystem::path pool() const { return root / "pool"; }
    std::filesystem::path pool_index() const { return root / "pool" / "index.json"; }
    std::filesystem::path analysis() const { return root / "analysis.json"; }
    std::filesystem::path transformed() const { return root / "transformed"; }
    std::filesystem::path decisions() const { return root / "decisions.jsonl"; }
    std::filesystem::path dataset() const { return root / "dataset"; }
    std::filesystem::path cache() const { return root / "cache"; }
};

std::unique_ptr<EmbeddingProvider> make_provider(const RunConfig& config);
// The configured stage list (or the default chain), checked to end in a
// single-channel fixed-size image.
Pipeline run_pipeline(const RunConfig& config);
CategoryHierarchy load_hierarchy(const std::filesystem::path& path, const Reporter& reporter);

nlohmann::json workflow_fetch(const RunConfig& config, const Reporter& reporter);
nlohmann::json workflow_analyze(const RunConfig& config, EmbeddingProvider& provider, const Reporter& reporter);

enum class Reviewer { Agent, Serve, None };
Reviewer reviewer_from_string(const std::string& s);

struct ServeOptions {
    std::string host = "127.0.0.1";
    int port = 8765;
};

// Routes the analysed pool, then resolves the queue with the chosen reviewer.
// Re-running on the same output directory resumes from the decision log.
nlohmann::json workflow_curate(const RunConfig& config, Reviewer reviewer, const ServeOptions& serve,
                               const Reporter& reporter);
nlohmann::json workflow_export(const RunConfig& config, const Reporter& reporter);

// Rebuilds the analysed pool from disk.
std::vector<PoolEntry> load_pool_entries(const RunConfig& config, const CategoryHierarchy& h);

// created_at from the config, else SOURCE_DATE_EPOCH, else the clock.
std::string manifest_timestamp(const RunConfig& config);

// Asks a blocking serve loop to return; safe from a signal handler.
void request_shutdown();

}  // namespace mnistgen
