#pragma once

#include "mnistgen/curation.hpp"
#include "mnistgen/dqn.hpp"
#include "mnistgen/error.hpp"
#include "mnistgen/hierarchy.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace mnistgen {

// Carries the HTTP status the server should answer with.
class ReviewError : public UserError {
public:
    ReviewError(int status, std::string code, const std::string& what)
        : UserError(what), status_(status), code_(std::move(code)) {}
    int status() const noexcept { return status_; }
    const std::string& code() const noexcept { return code_; }

private:
    int status_;
    std::string code_;
};

struct Alternative {
    int flat_index = 0;
    std::string main;
    std::string sub;
    double score = 0.0;
};

// What the agent and the reward need to know about one image behind a queue
// entry.
struct QueueMember {
    std::string image_id;
    RLState state;
    int predicted_flat = 0;
    double confidence = 0.0;
};

struct QueueItem {
    std::string image_id;  // representative image
    std::optional<int> cluster_id;
    std::vector<QueueMember> members;  // the representative comes first
    std::string thumbnail_raw;          // base64 PNG
    std::string thumbnail_transformed;  // base64 PNG
    int predicted_flat = 0;
    double confidence = 0.0;
    std::vector<Alternative> alternatives;  // top 3, descending

    nlohmann::json to_json(const CategoryHierarchy& h) const;
};

enum class Verdict { Accept, Override, Discard };
std::string to_string(Verdict v);
Verdict verdict_from_string(const std::string& s);

struct HumanDecision {
    std::optional<std::string> image_id;
    std::optional<int> cluster_id;
    Verdict verdict = Verdict::Accept;
    std::string override_main;
    std::string override_sub;
    std::string note;

    static HumanDecision from_json(const nlohmann::json& j);
};

enum class DecisionSource { Agent, Human, Threshold };
std::string to_string(DecisionSource s);
DecisionSource source_from_string(const std::string& s);

// One line of the append-only decision log.
struct DecisionRecord {
    std::string image_id;
    CurationAction action = CurationAction::Keep;
    DecisionSource source = DecisionSource::Threshold;
    double reward = 0.0;
    std::string timestamp;
    std::optional<int> label;  // flattened label when kept
    std::optional<int> cluster_id;
    std::string note;

    nlohmann::json to_json() const;
    static DecisionRecord from_json(const nlohmann::json& j);
};

struct MembershipEntry {
    std::string image_id;
    bool kept = false;
    std::optional<int> label;
    DecisionSource source = DecisionSource::Threshold;
    friend bool operator==(const MembershipEntry&, const MembershipEntry&) = default;
};

// Final membership from a sequence of records: human decisions outrank
// agent and threshold ones; otherwise the last record wins. Sorted by id.
std::vector<MembershipEntry> membership_from_records(const std::vector<DecisionRecord>& records);
std::vector<DecisionRecord> read_decision_log(const std::filesystem::path& path);

struct StatsSnapshot {
    std::vector<std::string> class_names;
    std::vector<std::int64_t> class_counts;
    std::optional<double> entropy;  // null before anything is kept
    std::size_t queue_depth = 0;
    std::size_t resolved = 0;
    std::int64_t auto_count = 0;
    std::int64_t review_count = 0;
    std::int64_t remove_count = 0;
    double epsilon = 0.0;
    std::optional<double> probe_accuracy;
    std::uint64_t version = 0;

    nlohmann::json to_json() const;
};

// Queue, class balance and decision log behind one mutex. Every mutation
// bumps the version so readers can tell snapshots apart.
class ReviewState {
public:
    using Clock = std::function<std::string()>;
    // Receives human-derived transitions; returns the agent's epsilon after
    // learning from them. Called with the state lock held.
    using TransitionSink = std::function<double(const Transition&)>;

    // With a log path, existing records are replayed first so a restarted
    // server sees the same resolved set.
    explicit ReviewState(CategoryHierarchy h, std::optional<std::filesystem::path> log_path = std::nullopt,
                         RewardWeights weights = {}, Clock clock = {});

    const CategoryHierarchy& hierarchy() const noexcept { return hierarchy_; }

    void set_transition_sink(TransitionSink sink);
    void set_epsilon(double eps);
    void set_probe_accuracy(double acc);
    void count_route(Route r);
    void add_image(const std::string& image_id, std::vector<std::uint8_t> png);

    // Items whose members all have a decision already (replayed log) are
    // registered as resolved.
    void enqueue(QueueItem item);
    // Automatic decision by threshold or agent.
    void record(DecisionRecord r);

    std::vector<QueueItem> next_batch(std::size_t limit) const;
    std::vector<QueueItem> pending() const { return next_batch(SIZE_MAX); }
    // Returns the ids the decision was applied to. `source` is Agent only for
    // the unattended reviewer.
    std::vector<std::string> submit(const HumanDecision& d, DecisionSource source = DecisionSource::Human);

    StatsSnapshot stats() const;
    std::optional<std::vector<std::uint8_t>> image_png(const std::string& image_id) const;
    std::vector<DecisionRecord> records() const;
    std::vector<MembershipEntry> membership() const;
    std::optional<MembershipEntry> decision_for(const std::string& image_id) const;
    ClassDistribution kept_distribution() const;
    double probe_accuracy_or(double fallback) const;

private:
    void append_locked(const DecisionRecord& r);
    void apply_locked(const DecisionRecord& r);
    std::string now() const;

    CategoryHierarchy hierarchy_;
    RewardWeights weights_;
    Clock clock_;
    mutable std::mutex mu_;
    std::optional<std::filesystem::path> log_path_;
    std::unique_ptr<std::ofstream> log_;
    std::vector<DecisionRecord> records_;
    std::map<std::string, MembershipEntry> membership_;
    std::vector<QueueItem> queue_;
    std::vector<bool> resolved_;
    std::map<std::string, std::size_t> by_image_;
    std::map<int, std::size_t> by_cluster_;
    std::map<std::string, std::vector<std::uint8_t>> images_;
    std::vector<std::int64_t> kept_counts_;
    std::int64_t tallies_[3] = {0, 0, 0};
    double epsilon_ = 0.0;
    std::optional<double> probe_accuracy_;
    TransitionSink sink_;
    std::uint64_t version_ = 0;
};

std::string iso8601_now();

// HTTP front end. Binds to 127.0.0.1 by default; port 0 picks a free port.
class ReviewServer {
public:
    ReviewServer(ReviewState& state, std::string host = "127.0.0.1", int port = 0);
    ~ReviewServer();
    ReviewServer(const ReviewServer&) = delete;
    ReviewServer& operator=(const ReviewServer&) = delete;

    // Binds and serves on a background thread; returns the bound port.
    int start();
    void stop();
    // Blocks until stop() is called from another thread or a handler.
    void wait();
    int port() const noexcept { return port_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
};

}  // namespace mnistgen
