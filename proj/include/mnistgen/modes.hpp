#pragma once

#include "mnistgen/curation.hpp"
#include "mnistgen/dqn.hpp"
#include "mnistgen/probe.hpp"
#include "mnistgen/review.hpp"
#include "mnistgen/semantics.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mnistgen {

enum class Mode { Individual, Smart, Fast };
std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

// One analysed image as the curation engine sees it.
struct PoolEntry {
    std::string id;
    Image raw;          // RGB before the pipeline (thumbnail only)
    Image transformed;  // pipeline output, single channel
    Embedding embedding;
    VisualAttributes visual;
    CategorizationResult result;
};

struct CurationConfig {
    Mode mode = Mode::Smart;
    RoutingThresholds thresholds;
    RewardWeights reward;
    AgentConfig agent;
    double veto_margin = 0.2;
    double cluster_threshold = kDefaultClusterThreshold;
    int probe_cadence = kDefaultProbeCadence;
    std::uint64_t projection_seed = 7;
};

struct ModeSummary {
    std::size_t queued = 0;
    std::size_t auto_kept = 0;
    std::size_t auto_removed = 0;
    std::size_t vetoed = 0;
};

// Drives one of the three processing modes. Automatic decisions go straight
// into the review state's log; everything needing a human is queued there.
// Human verdicts flow back to the agent through the state's transition sink.
class Curator {
public:
    Curator(ReviewState& state, CurationConfig config);

    ModeSummary run(const std::vector<PoolEntry>& pool);

    // Unattended reviewer: resolves every pending item with the agent's
    // greedy choice between Keep and Discard. Records carry source "agent".
    std::size_t resolve_pending_with_agent();

    DqnAgent& agent() noexcept { return agent_; }
    const CurationConfig& config() const noexcept { return config_; }

private:
    RLState state_for(const PoolEntry& e) const;
    QueueMember member_for(const PoolEntry& e) const;
    QueueItem item_for(const PoolEntry& rep, std::vector<QueueMember> members, std::optional<int> cluster) const;
    void decide(const PoolEntry& e, CurationAction action, DecisionSource source);
    void learn(const Transition& t);
    void note_kept(const PoolEntry& e);

    ReviewState& state_;
    CurationConfig config_;
    StateProjector projector_;
    DqnAgent agent_;
    std::vector<Embedding> kept_embeddings_;
    std::vector<ProbeSample> probe_samples_;
    std::size_t kept_since_probe_ = 0;
    std::map<std::string, const PoolEntry*> by_id_;
};

}  // namespace mnistgen
