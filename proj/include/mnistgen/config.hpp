#pragma once

#include "mnistgen/curation.hpp"
#include "mnistgen/dqn.hpp"
#include "mnistgen/modes.hpp"
#include "mnistgen/semantics.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>

namespace mnistgen {

struct SourceSettings {
    std::string kind = "folder";  // folder | web
    std::filesystem::path path;   // folder source
    std::string keyword;
    int count = 100;  // web source
};

// Everything a run depends on. Paths are resolved against the directory of
// the config file when loaded from disk.
struct RunConfig {
    std::filesystem::path hierarchy_path = "hierarchy.json";
    SourceSettings source;
    nlohmann::json pipeline;  // stage list; null means the default chain
    Mode mode = Mode::Smart;
    RoutingThresholds thresholds;
    double alpha = 0.5, beta = 0.3, gamma = 0.2;
    RewardWeights reward;
    AgentConfig agent;
    double veto_margin = 0.2;
    double cluster_threshold = kDefaultClusterThreshold;
    int probe_cadence = kDefaultProbeCadence;
    double split_ratio = 0.8;
    std::filesystem::path output_dir = "out";
    std::uint64_t seed = 0;
    std::string provider = "stub";  // stub | external
    std::string provider_command;    // falls back to the environment
    std::optional<std::string> created_at;

    // Validates ranges and cross-field constraints; throws UserError.
    void validate() const;
    nlohmann::json to_json() const;
    // Hash of everything that affects the dataset bytes: the output dir is
    // left out and the hierarchy is represented by its content hash.
    std::string canonical_hash() const;
    ScoringWeights scoring() const { return ScoringWeights(alpha, beta, gamma); }
    CurationConfig curation() const;
};

// Strict: unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json default_run_config_json();

}  // namespace mnistgen
