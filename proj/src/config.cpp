#include "mnistgen/config.hpp"

#include "mnistgen/error.hpp"
#include "mnistgen/image.hpp"
#include "mnistgen/transforms.hpp"

#include <set>

namespace mnistgen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw UserError(where + ": expected an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, _] : j.items()) {
        if (!ok.count(k)) throw UserError(where + ": unknown key '" + k + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

fs::path resolve(const fs::path& base, const fs::path& p) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

}  // namespace

void RunConfig::validate() const {
    if (source.kind != "folder" && source.kind != "web") {
        throw UserError("source.kind must be 'folder' or 'web', got '" + source.kind + "'");
    }
    if (source.count < 1) throw UserError("source.count must be at least 1");
    if (!(thresholds.low >= 0 && thresholds.low <= thresholds.high && thresholds.high <= 1)) {
        throw UserError("thresholds must satisfy 0 <= low <= high <= 1");
    }
    (void)scoring();
    reward.validate();
    agent.validate();
    if (!(veto_margin >= 0)) throw UserError("veto_margin must be non-negative");
    if (!(cluster_threshold >= 0 && cluster_threshold <= 1)) throw UserError("cluster_threshold must lie in [0,1]");
    if (probe_cadence < 1) throw UserError("probe_cadence must be positive");
    if (!(split_ratio > 0 && split_ratio < 1)) throw UserError("split.ratio must lie in (0,1)");
    if (provider != "stub" && provider != "external") {
        throw UserError("provider must be 'stub' or 'external', got '" + provider + "'");
    }
    if (!pipeline.is_null()) Pipeline::from_json(pipeline, Shape{3, std::nullopt, std::nullopt});
}

json RunConfig::to_json() const {
    return {{"hierarchy", hierarchy_path.string()},
            {"source", {{"kind", source.kind}, {"path", source.path.string()}, {"keyword", source.keyword}, {"count", source.count}}},
            {"pipeline", pipeline},
            {"mode", mnistgen::to_string(mode)},
            {"thresholds", {{"high", thresholds.high}, {"low", thresholds.low}}},
            {"scoring", {{"alpha", alpha}, {"beta", beta}, {"gamma", gamma}}},
            {"reward", {{"lambda1", reward.lambda1}, {"lambda2", reward.lambda2}, {"lambda3", reward.lambda3}, {"lambda4", reward.lambda4}}},
            {"agent",
             {{"hidden", agent.hidden},
              {"learning_rate", agent.learning_rate},
              {"epsilon", agent.epsilon},
              {"epsilon_decay", agent.epsilon_decay},
              {"epsilon_min", agent.epsilon_min},
              {"replay_capacity", agent.replay_capacity},
              {"batch_size", agent.batch_size},
              {"target_sync", agent.target_sync_interval},
              {"discount", agent.discount}}},
            {"veto_margin", veto_margin},
            {"cluster_threshold", cluster_threshold},
            {"probe_cadence", probe_cadence},
            {"split", {{"ratio", split_ratio}}},
            {"output_dir", output_dir.string()},
            {"seed", seed},
            {"provider", provider},
            {"provider_command", provider_command},
            {"created_at", created_at ? json(*created_at) : json(nullptr)}};
}

std::string RunConfig::canonical_hash() const {
    json j = to_json();
    j.erase("output_dir");
    j["hierarchy"] = sha256_hex(read_text_file(hierarchy_path));
    // Only the folder contents matter, not where it sits.
    j["source"].erase("path");
    return sha256_hex(j.dump());
}

CurationConfig RunConfig::curation() const {
    CurationConfig c;
    c.mode = mode;
    c.thresholds = thresholds;
    c.reward = reward;
    c.agent = agent;
    c.agent.seed = seed;
    c.veto_margin = veto_margin;
    c.cluster_threshold = cluster_threshold;
    c.probe_cadence = probe_cadence;
    return c;
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
    RunConfig c;
    try {
        check_keys(j, "config", {"hierarchy", "source", "pipeline", "mode", "thresholds", "scoring", "reward", "agent",
                                 "veto_margin", "cluster_threshold", "probe_cadence", "split", "output_dir", "seed",
                                 "provider", "provider_command", "created_at"});
        if (j.contains("hierarchy")) c.hierarchy_path = j["hierarchy"].get<std::string>();
        if (j.contains("source")) {
            const auto& s = j["source"];
            check_keys(s, "config.source", {"kind", "path", "keyword", "count"});
            read(s, "kind", c.source.kind);
            if (s.contains("path")) c.source.path = s["path"].get<std::string>();
            read(s, "keyword", c.source.keyword);
            read(s, "count", c.source.count);
        }
        if (j.contains("pipeline")) c.pipeline = j["pipeline"];
        if (j.contains("mode")) c.mode = mode_from_string(j["mode"].get<std::string>());
        if (j.contains("thresholds")) {
            check_keys(j["thresholds"], "config.thresholds", {"high", "low"});
            read(j["thresholds"], "high", c.thresholds.high);
            read(j["thresholds"], "low", c.thresholds.low);
        }
        if (j.contains("scoring")) {
            check_keys(j["scoring"], "config.scoring", {"alpha", "beta", "gamma"});
            read(j["scoring"], "alpha", c.alpha);
            read(j["scoring"], "beta", c.beta);
            read(j["scoring"], "gamma", c.gamma);
        }
        if (j.contains("reward")) {
            const auto& r = j["reward"];
            check_keys(r, "config.reward", {"lambda1", "lambda2", "lambda3", "lambda4"});
            read(r, "lambda1", c.reward.lambda1);
            read(r, "lambda2", c.reward.lambda2);
            read(r, "lambda3", c.reward.lambda3);
            read(r, "lambda4", c.reward.lambda4);
        }
        if (j.contains("agent")) {
            const auto& a = j["agent"];
            check_keys(a, "config.agent", {"hidden", "learning_rate", "epsilon", "epsilon_decay", "epsilon_min",
                                           "replay_capacity", "batch_size", "target_sync", "discount"});
            read(a, "hidden", c.agent.hidden);
            read(a, "learning_rate", c.agent.learning_rate);
            read(a, "epsilon", c.agent.epsilon);
            read(a, "epsilon_decay", c.agent.epsilon_decay);
            read(a, "epsilon_min", c.agent.epsilon_min);
            read(a, "replay_capacity", c.agent.replay_capacity);
            read(a, "batch_size", c.agent.batch_size);
            read(a, "target_sync", c.agent.target_sync_interval);
            read(a, "discount", c.agent.discount);
        }
        read(j, "veto_margin", c.veto_margin);
        read(j, "cluster_threshold", c.cluster_threshold);
        read(j, "probe_cadence", c.probe_cadence);
        if (j.contains("split")) {
            check_keys(j["split"], "config.split", {"ratio"});
            read(j["split"], "ratio", c.split_ratio);
        }
        if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
        read(j, "seed", c.seed);
        read(j, "provider", c.provider);
        read(j, "provider_command", c.provider_command);
        if (j.contains("created_at") && !j["created_at"].is_null()) c.created_at = j["created_at"].get<std::string>();
    } catch (const json::exception& e) {
        throw UserError(std::string("config: ") + e.what());
    }
    c.hierarchy_path = resolve(base_dir, c.hierarchy_path);
    c.source.path = resolve(base_dir, c.source.path);
    c.output_dir = resolve(base_dir, c.output_dir);
    c.validate();
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    if (!fs::exists(path)) throw UserError("config file " + path.string() + " does not exist");
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw UserError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j, path.parent_path());
}

json default_run_config_json() {
    RunConfig c;
    c.hierarchy_path = "hierarchy.json";
    c.source.path = "images";
    c.pipeline = default_pipeline().to_json();
    json j = c.to_json();
    j.erase("provider_command");
    return j;
}

}  // namespace mnistgen
