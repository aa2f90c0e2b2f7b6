#include "mnistgen/modes.hpp"

#include "mnistgen/image.hpp"
#include "mnistgen/imgops.hpp"

#include <algorithm>

namespace mnistgen {

namespace {

// The agent only vetoes once it has taken this many gradient steps; an
// untrained network's Q-margins are noise.
constexpr std::int64_t kVetoWarmupSteps = 100;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double entropy_or_zero(const ClassDistribution& d) { return d.total() == 0 ? 0.0 : class_entropy(d); }

Image single_channel(const Image& img) { return img.channels == 1 ? img : imgops::gray_weighted(img); }

}  // namespace

std::string to_string(Mode m) {
    switch (m) {
        case Mode::Individual: return "individual";
        case Mode::Smart: return "smart";
        case Mode::Fast: return "fast";
    }
    return "smart";
}

Mode mode_from_string(const std::string& s) {
    if (s == "individual") return Mode::Individual;
    if (s == "smart") return Mode::Smart;
    if (s == "fast") return Mode::Fast;
    throw UserError("unknown mode '" + s + "' (expected individual, smart or fast)");
}

Curator::Curator(ReviewState& state, CurationConfig config)
    : state_(state), config_(std::move(config)), projector_(config_.projection_seed), agent_(config_.agent) {
    config_.reward.validate();
    if (config_.probe_cadence < 1) throw UserError("probe cadence must be positive");
    if (!(config_.veto_margin >= 0.0)) throw UserError("veto margin must be non-negative");
    state_.set_epsilon(agent_.epsilon());
    state_.set_transition_sink([this](const Transition& t) {
        learn(t);
        return agent_.epsilon();
    });
}

RLState Curator::state_for(const PoolEntry& e) const {
    const auto dist = state_.kept_distribution();
    const auto total = dist.total();
    const double fraction =
        total == 0 ? 0.0
                   : static_cast<double>(dist.counts.at(static_cast<std::size_t>(e.result.best_main))) /
                         static_cast<double>(total);
    return make_state(projector_, e.embedding, e.visual, clamp01(e.result.confidence), fraction,
                      redundancy(e.embedding, kept_embeddings_));
}

QueueMember Curator::member_for(const PoolEntry& e) const {
    return {e.id, state_for(e), e.result.best_flat, clamp01(e.result.confidence)};
}

QueueItem Curator::item_for(const PoolEntry& rep, std::vector<QueueMember> members,
                            std::optional<int> cluster) const {
    QueueItem item;
    item.image_id = rep.id;
    item.cluster_id = cluster;
    item.members = std::move(members);
    if (!rep.raw.empty()) item.thumbnail_raw = base64_encode(encode_png(rep.raw));
    if (!rep.transformed.empty()) item.thumbnail_transformed = base64_encode(encode_png(single_channel(rep.transformed)));
    item.predicted_flat = rep.result.best_flat;
    item.confidence = clamp01(rep.result.confidence);
    const auto& labels = state_.hierarchy().labels();
    for (const auto& s : rep.result.top(4)) {
        if (s.flat_index == rep.result.best_flat || item.alternatives.size() == 3) continue;
        const auto& l = labels.at(static_cast<std::size_t>(s.flat_index));
        item.alternatives.push_back({s.flat_index, l.main_name, l.sub_name, s.total});
    }
    return item;
}

void Curator::learn(const Transition& t) {
    agent_.remember(t);
    if (agent_.replay().size() >= agent_.config().batch_size) agent_.train_from_replay();
}

void Curator::note_kept(const PoolEntry& e) {
    kept_embeddings_.push_back(e.embedding);
    if (e.transformed.empty()) return;
    probe_samples_.push_back({single_channel(e.transformed), e.result.best_main});
    if (++kept_since_probe_ < static_cast<std::size_t>(config_.probe_cadence)) return;
    kept_since_probe_ = 0;
    ProbeConfig pc;
    pc.seed = config_.agent.seed;
    const auto res = train_probe(probe_samples_, pc);
    state_.set_probe_accuracy(res.accuracy);
}

void Curator::decide(const PoolEntry& e, CurationAction action, DecisionSource source) {
    // Resuming from a replayed log: keep the earlier verdict.
    if (auto prior = state_.decision_for(e.id)) {
        if (prior->kept) note_kept(e);
        return;
    }
    const RLState s = state_for(e);
    auto dist = state_.kept_distribution();
    if (action == CurationAction::Keep) ++dist.counts.at(static_cast<std::size_t>(e.result.best_main));

    DecisionRecord r;
    r.image_id = e.id;
    r.action = action;
    r.source = source;
    if (action == CurationAction::Keep) r.label = e.result.best_flat;
    r.reward = compute_reward_from_entropy(action_confidence(action, s.confidence()), entropy_or_zero(dist),
                                           state_.probe_accuracy_or(0.5), s.redundancy(), config_.reward);
    state_.record(r);
    learn({s, action, r.reward, s, true});
    state_.set_epsilon(agent_.epsilon());
    if (action == CurationAction::Keep) note_kept(e);
}

ModeSummary Curator::run(const std::vector<PoolEntry>& pool) {
    ModeSummary summary;
    for (const auto& e : pool) {
        if (!by_id_.emplace(e.id, &e).second) throw UserError("duplicate image id " + e.id + " in pool");
        if (!e.raw.empty()) state_.add_image(e.id, encode_png(e.raw));
    }

    switch (config_.mode) {
        case Mode::Individual:
            for (const auto& e : pool) {
                state_.count_route(Route::HumanReview);
                state_.enqueue(item_for(e, {member_for(e)}, std::nullopt));
                ++summary.queued;
            }
            break;

        case Mode::Smart:
            for (const auto& e : pool) {
                const Route route =
                    e.result.eligible ? route_confidence(clamp01(e.result.confidence), config_.thresholds) : Route::AutoRemove;
                state_.count_route(route);
                if (route == Route::HumanReview) {
                    state_.enqueue(item_for(e, {member_for(e)}, std::nullopt));
                    ++summary.queued;
                } else if (route == Route::AutoRemove) {
                    decide(e, CurationAction::Discard, DecisionSource::Threshold);
                    ++summary.auto_removed;
                } else {
                    const auto q = agent_.q_values(state_for(e));
                    const int keep = static_cast<int>(CurationAction::Keep);
                    const int discard = static_cast<int>(CurationAction::Discard);
                    if (agent_.steps() >= kVetoWarmupSteps && q[discard] - q[keep] > config_.veto_margin) {
                        decide(e, CurationAction::Discard, DecisionSource::Agent);
                        ++summary.vetoed;
                    } else {
                        decide(e, CurationAction::Keep, DecisionSource::Threshold);
                        ++summary.auto_kept;
                    }
                }
            }
            break;

        case Mode::Fast: {
            std::vector<Embedding> es;
            es.reserve(pool.size());
            for (const auto& e : pool) es.push_back(e.embedding);
            const auto clusters = cluster_embeddings(es, config_.cluster_threshold);
            for (std::size_t k = 0; k < clusters.size(); ++k) {
                std::vector<QueueMember> members;
                for (auto i : clusters[k]) {
                    state_.count_route(Route::HumanReview);
                    members.push_back(member_for(pool[i]));
                }
                state_.enqueue(item_for(pool[clusters[k].front()], std::move(members), static_cast<int>(k)));
                ++summary.queued;
            }
            break;
        }
    }
    return summary;
}

std::size_t Curator::resolve_pending_with_agent() {
    std::size_t n = 0;
    const double midpoint = 0.5 * (config_.thresholds.high + config_.thresholds.low);
    for (const auto& item : state_.pending()) {
        const auto& rep = item.members.front();
        bool keep = rep.confidence >= midpoint;
        if (agent_.steps() >= kVetoWarmupSteps) {
            const auto q = agent_.q_values(rep.state);
            keep = q[static_cast<int>(CurationAction::Keep)] >= q[static_cast<int>(CurationAction::Discard)];
        }
        HumanDecision d;
        if (item.cluster_id) {
            d.cluster_id = item.cluster_id;
        } else {
            d.image_id = item.image_id;
        }
        d.verdict = keep ? Verdict::Accept : Verdict::Discard;
        n += state_.submit(d, DecisionSource::Agent).size();
    }
    state_.set_epsilon(agent_.epsilon());
    return n;
}

}  // namespace mnistgen
