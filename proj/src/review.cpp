#include "mnistgen/review.hpp"

#include "mnistgen/image.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <thread>

namespace mnistgen {

using nlohmann::json;

namespace {

json alternative_json(const Alternative& a) {
    return {{"flat", a.flat_index}, {"main", a.main}, {"sub", a.sub}, {"score", a.score}};
}

double entropy_or_zero(const std::vector<std::int64_t>& counts) {
    ClassDistribution d{counts};
    return d.total() == 0 ? 0.0 : class_entropy(d);
}

}  // namespace

json QueueItem::to_json(const CategoryHierarchy& h) const {
    const auto& label = h.labels().at(static_cast<std::size_t>(predicted_flat));
    json members_json = json::array();
    for (const auto& m : members) members_json.push_back(m.image_id);
    json alts = json::array();
    for (const auto& a : alternatives) alts.push_back(alternative_json(a));
    return {{"image_id", image_id},
            {"cluster_id", cluster_id ? json(*cluster_id) : json(nullptr)},
            {"members", members_json},
            {"member_count", members.size()},
            {"thumbnail", {{"raw", thumbnail_raw}, {"transformed", thumbnail_transformed}}},
            {"predicted", {{"main", label.main_name}, {"sub", label.sub_name}, {"flat", predicted_flat}}},
            {"confidence", confidence},
            {"alternatives", alts}};
}

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::Accept: return "accept";
        case Verdict::Override: return "override";
        case Verdict::Discard: return "discard";
    }
    return "accept";
}

Verdict verdict_from_string(const std::string& s) {
    if (s == "accept") return Verdict::Accept;
    if (s == "override") return Verdict::Override;
    if (s == "discard") return Verdict::Discard;
    throw ReviewError(400, "invalid", "unknown verdict '" + s + "' (expected accept, override or discard)");
}

HumanDecision HumanDecision::from_json(const json& j) {
    if (!j.is_object()) throw ReviewError(400, "invalid", "decision must be a JSON object");
    static const std::vector<std::string> allowed = {"image_id", "cluster_id", "verdict", "main", "sub", "note"};
    for (const auto& [k, _] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
            throw ReviewError(400, "invalid", "unknown key '" + k + "' in decision");
        }
    }
    HumanDecision d;
    try {
        if (j.contains("image_id") && !j["image_id"].is_null()) d.image_id = j["image_id"].get<std::string>();
        if (j.contains("cluster_id") && !j["cluster_id"].is_null()) d.cluster_id = j["cluster_id"].get<int>();
        d.verdict = verdict_from_string(j.at("verdict").get<std::string>());
        if (d.verdict == Verdict::Override) {
            d.override_main = j.at("main").get<std::string>();
            d.override_sub = j.at("sub").get<std::string>();
        }
        if (j.contains("note")) d.note = j["note"].get<std::string>();
    } catch (const json::exception& e) {
        throw ReviewError(400, "invalid", std::string("malformed decision: ") + e.what());
    }
    if (d.image_id.has_value() == d.cluster_id.has_value()) {
        throw ReviewError(400, "invalid", "decision needs exactly one of image_id or cluster_id");
    }
    return d;
}

std::string to_string(DecisionSource s) {
    switch (s) {
        case DecisionSource::Agent: return "agent";
        case DecisionSource::Human: return "human";
        case DecisionSource::Threshold: return "threshold";
    }
    return "threshold";
}

DecisionSource source_from_string(const std::string& s) {
    if (s == "agent") return DecisionSource::Agent;
    if (s == "human") return DecisionSource::Human;
    if (s == "threshold") return DecisionSource::Threshold;
    throw UserError("unknown decision source '" + s + "'");
}

json DecisionRecord::to_json() const {
    json j = {{"image_id", image_id},
              {"action", mnistgen::to_string(action)},
              {"source", mnistgen::to_string(source)},
              {"reward", reward},
              {"timestamp", timestamp},
              {"label", label ? json(*label) : json(nullptr)},
              {"cluster_id", cluster_id ? json(*cluster_id) : json(nullptr)}};
    if (!note.empty()) j["note"] = note;
    return j;
}

DecisionRecord DecisionRecord::from_json(const json& j) {
    DecisionRecord r;
    try {
        r.image_id = j.at("image_id").get<std::string>();
        r.action = action_from_string(j.at("action").get<std::string>());
        r.source = source_from_string(j.at("source").get<std::string>());
        r.reward = j.at("reward").get<double>();
        r.timestamp = j.at("timestamp").get<std::string>();
        if (j.contains("label") && !j["label"].is_null()) r.label = j["label"].get<int>();
        if (j.contains("cluster_id") && !j["cluster_id"].is_null()) r.cluster_id = j["cluster_id"].get<int>();
        if (j.contains("note")) r.note = j["note"].get<std::string>();
    } catch (const json::exception& e) {
        throw UserError(std::string("malformed decision record: ") + e.what());
    }
    return r;
}

std::vector<MembershipEntry> membership_from_records(const std::vector<DecisionRecord>& records) {
    std::map<std::string, MembershipEntry> out;
    for (const auto& r : records) {
        auto it = out.find(r.image_id);
        if (it != out.end() && it->second.source == DecisionSource::Human && r.source != DecisionSource::Human) {
            continue;
        }
        out[r.image_id] = {r.image_id, r.action == CurationAction::Keep, r.label, r.source};
    }
    std::vector<MembershipEntry> v;
    v.reserve(out.size());
    for (auto& [_, e] : out) v.push_back(std::move(e));
    return v;
}

std::vector<DecisionRecord> read_decision_log(const std::filesystem::path& path) {
    std::vector<DecisionRecord> out;
    if (!std::filesystem::exists(path)) return out;
    std::ifstream in(path);
    if (!in) throw EnvironmentError("cannot read decision log " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(DecisionRecord::from_json(json::parse(line)));
        } catch (const json::parse_error&) {
            // A torn final line from a crash is dropped; anything else is corrupt.
            if (in.peek() == EOF) break;
            throw UserError(path.string() + ":" + std::to_string(lineno) + ": corrupt decision log line");
        }
    }
    return out;
}

json StatsSnapshot::to_json() const {
    json classes = json::array();
    for (std::size_t i = 0; i < class_names.size(); ++i) {
        classes.push_back({{"name", class_names[i]}, {"count", class_counts[i]}});
    }
    return {{"classes", classes},
            {"entropy", entropy ? json(*entropy) : json(nullptr)},
            {"queue_depth", queue_depth},
            {"resolved", resolved},
            {"tallies", {{"auto", auto_count}, {"review", review_count}, {"remove", remove_count}}},
            {"epsilon", epsilon},
            {"probe_accuracy", probe_accuracy ? json(*probe_accuracy) : json(nullptr)},
            {"version", version}};
}

std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

ReviewState::ReviewState(CategoryHierarchy h, std::optional<std::filesystem::path> log_path, RewardWeights weights,
                         Clock clock)
    : hierarchy_(std::move(h)),
      weights_(weights),
      clock_(std::move(clock)),
      log_path_(std::move(log_path)),
      kept_counts_(hierarchy_.main_count(), 0) {
    weights_.validate();
    if (!log_path_) return;
    for (auto& r : read_decision_log(*log_path_)) apply_locked(r);
    if (log_path_->has_parent_path()) std::filesystem::create_directories(log_path_->parent_path());
    log_ = std::make_unique<std::ofstream>(*log_path_, std::ios::app);
    if (!*log_) throw EnvironmentError("cannot open decision log " + log_path_->string());
}

std::string ReviewState::now() const { return clock_ ? clock_() : iso8601_now(); }

void ReviewState::set_transition_sink(TransitionSink sink) {
    std::lock_guard lock(mu_);
    sink_ = std::move(sink);
}

void ReviewState::set_epsilon(double eps) {
    std::lock_guard lock(mu_);
    epsilon_ = eps;
    ++version_;
}

void ReviewState::set_probe_accuracy(double acc) {
    std::lock_guard lock(mu_);
    probe_accuracy_ = acc;
    ++version_;
}

void ReviewState::count_route(Route r) {
    std::lock_guard lock(mu_);
    ++tallies_[static_cast<int>(r)];
    ++version_;
}

void ReviewState::add_image(const std::string& image_id, std::vector<std::uint8_t> png) {
    std::lock_guard lock(mu_);
    images_[image_id] = std::move(png);
}

void ReviewState::apply_locked(const DecisionRecord& r) {
    auto it = membership_.find(r.image_id);
    if (it != membership_.end()) {
        if (it->second.source == DecisionSource::Human && r.source != DecisionSource::Human) {
            records_.push_back(r);
            return;
        }
        if (it->second.kept && it->second.label) {
            --kept_counts_[static_cast<std::size_t>(hierarchy_.labels().at(*it->second.label).main_index)];
        }
    }
    MembershipEntry e{r.image_id, r.action == CurationAction::Keep, r.label, r.source};
    if (e.kept && e.label) {
        if (*e.label < 0 || static_cast<std::size_t>(*e.label) >= hierarchy_.subcategory_count()) {
            throw UserError("decision for " + r.image_id + " has label " + std::to_string(*e.label) +
                            " outside the hierarchy");
        }
        ++kept_counts_[static_cast<std::size_t>(hierarchy_.labels()[*e.label].main_index)];
    }
    membership_[r.image_id] = std::move(e);
    records_.push_back(r);
    ++version_;
}

void ReviewState::append_locked(const DecisionRecord& r) {
    apply_locked(r);
    if (log_) {
        *log_ << r.to_json().dump() << '\n';
        log_->flush();
    }
}

void ReviewState::enqueue(QueueItem item) {
    if (item.members.empty()) throw UserError("queue item without members");
    if (item.image_id.empty()) item.image_id = item.members.front().image_id;
    std::lock_guard lock(mu_);
    if (by_image_.count(item.image_id)) throw UserError("image " + item.image_id + " is already queued");
    if (item.cluster_id && by_cluster_.count(*item.cluster_id)) {
        throw UserError("cluster " + std::to_string(*item.cluster_id) + " is already queued");
    }
    bool done = true;
    for (const auto& m : item.members) {
        done = done && membership_.count(m.image_id) > 0;
    }
    const std::size_t idx = queue_.size();
    by_image_[item.image_id] = idx;
    if (item.cluster_id) by_cluster_[*item.cluster_id] = idx;
    queue_.push_back(std::move(item));
    resolved_.push_back(done);
    ++version_;
}

void ReviewState::record(DecisionRecord r) {
    if (r.timestamp.empty()) r.timestamp = now();
    std::lock_guard lock(mu_);
    append_locked(r);
}

std::vector<QueueItem> ReviewState::next_batch(std::size_t limit) const {
    std::lock_guard lock(mu_);
    std::vector<QueueItem> out;
    for (std::size_t i = 0; i < queue_.size() && out.size() < limit; ++i) {
        if (!resolved_[i]) out.push_back(queue_[i]);
    }
    return out;
}

std::vector<std::string> ReviewState::submit(const HumanDecision& d, DecisionSource source) {
    std::lock_guard lock(mu_);
    std::size_t idx = 0;
    if (d.cluster_id) {
        auto it = by_cluster_.find(*d.cluster_id);
        if (it == by_cluster_.end()) throw ReviewError(404, "not_found", "unknown cluster " + std::to_string(*d.cluster_id));
        idx = it->second;
    } else {
        auto it = by_image_.find(*d.image_id);
        if (it == by_image_.end()) throw ReviewError(404, "not_found", "unknown image " + *d.image_id);
        idx = it->second;
    }
    if (resolved_[idx]) throw ReviewError(409, "conflict", "item " + queue_[idx].image_id + " is already resolved");
    const QueueItem& item = queue_[idx];

    std::optional<int> label = item.predicted_flat;
    if (d.verdict == Verdict::Override) {
        auto entry = hierarchy_.find(d.override_main, d.override_sub);
        if (!entry) {
            throw ReviewError(400, "invalid", "override path " + d.override_main + "/" + d.override_sub +
                                                  " is not in the hierarchy");
        }
        label = entry->flat_index;
    }
    const bool keep = d.verdict != Verdict::Discard;
    const double model_acc = probe_accuracy_.value_or(0.5);
    const std::string stamp = now();

    std::vector<std::string> applied;
    for (const auto& m : item.members) {
        DecisionRecord r;
        r.image_id = m.image_id;
        r.action = keep ? CurationAction::Keep : CurationAction::Discard;
        r.source = source;
        r.timestamp = stamp;
        r.cluster_id = item.cluster_id;
        r.note = d.note;
        if (keep) r.label = label;

        // Accept and override count as full confidence toward the chosen
        // class; discard credits the complement of the model's confidence.
        auto counts = kept_counts_;
        auto prev = membership_.find(m.image_id);
        if (prev != membership_.end() && prev->second.kept && prev->second.label) {
            --counts[static_cast<std::size_t>(hierarchy_.labels()[*prev->second.label].main_index)];
        }
        double conf = 1.0;
        if (keep) {
            ++counts[static_cast<std::size_t>(hierarchy_.labels()[*label].main_index)];
        } else {
            conf = action_confidence(CurationAction::Discard, m.confidence);
        }
        r.reward = compute_reward_from_entropy(conf, entropy_or_zero(counts), model_acc,
                                               std::clamp(m.state.redundancy(), 0.0, 1.0), weights_);
        append_locked(r);
        applied.push_back(m.image_id);
        if (sink_) epsilon_ = sink_(Transition{m.state, r.action, r.reward, m.state, true});
    }
    resolved_[idx] = true;
    ++version_;
    return applied;
}

StatsSnapshot ReviewState::stats() const {
    std::lock_guard lock(mu_);
    StatsSnapshot s;
    for (const auto& c : hierarchy_.categories()) s.class_names.push_back(c.name);
    s.class_counts = kept_counts_;
    ClassDistribution d{kept_counts_};
    if (d.total() > 0) s.entropy = class_entropy(d);
    for (std::size_t i = 0; i < queue_.size(); ++i) (resolved_[i] ? s.resolved : s.queue_depth) += 1;
    s.auto_count = tallies_[0];
    s.review_count = tallies_[1];
    s.remove_count = tallies_[2];
    s.epsilon = epsilon_;
    s.probe_accuracy = probe_accuracy_;
    s.version = version_;
    return s;
}

std::optional<std::vector<std::uint8_t>> ReviewState::image_png(const std::string& image_id) const {
    std::lock_guard lock(mu_);
    auto it = images_.find(image_id);
    if (it == images_.end()) return std::nullopt;
    return it->second;
}

std::vector<DecisionRecord> ReviewState::records() const {
    std::lock_guard lock(mu_);
    return records_;
}

std::vector<MembershipEntry> ReviewState::membership() const {
    std::lock_guard lock(mu_);
    std::vector<MembershipEntry> v;
    v.reserve(membership_.size());
    for (const auto& [_, e] : membership_) v.push_back(e);
    return v;
}

std::optional<MembershipEntry> ReviewState::decision_for(const std::string& image_id) const {
    std::lock_guard lock(mu_);
    auto it = membership_.find(image_id);
    if (it == membership_.end()) return std::nullopt;
    return it->second;
}

ClassDistribution ReviewState::kept_distribution() const {
    std::lock_guard lock(mu_);
    return {kept_counts_};
}

double ReviewState::probe_accuracy_or(double fallback) const {
    std::lock_guard lock(mu_);
    return probe_accuracy_.value_or(fallback);
}

// ---------------------------------------------------------------------------

struct ReviewServer::Impl {
    Impl(ReviewState& s, std::string h, int p) : state(s), host(std::move(h)), requested_port(p) {}
    ReviewState& state;
    std::string host;
    int requested_port;
    httplib::Server server;
    std::thread thread;
};

namespace {

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    res.status = status;
    res.set_content(json{{"code", code}, {"message", message}}.dump(), "application/json");
}

void send_json(httplib::Response& res, const json& j) { res.set_content(j.dump(), "application/json"); }

}  // namespace

ReviewServer::ReviewServer(ReviewState& state, std::string host, int port)
    : impl_(std::make_unique<Impl>(state, std::move(host), port)) {
    auto& srv = impl_->server;
    ReviewState& st = state;

    srv.Get("/api/queue", [&st](const httplib::Request& req, httplib::Response& res) {
        std::size_t limit = 50;
        if (req.has_param("limit")) {
            const auto raw = req.get_param_value("limit");
            try {
                std::size_t pos = 0;
                const long long v = std::stoll(raw, &pos);
                if (pos != raw.size() || v < 0) throw std::invalid_argument(raw);
                limit = static_cast<std::size_t>(v);
            } catch (const std::exception&) {
                return send_error(res, 400, "invalid", "limit must be a non-negative integer, got '" + raw + "'");
            }
        }
        json items = json::array();
        for (const auto& it : st.next_batch(limit)) items.push_back(it.to_json(st.hierarchy()));
        send_json(res, {{"items", items}});
    });

    srv.Post("/api/decision", [&st](const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::parse_error& e) {
            return send_error(res, 400, "invalid", std::string("request body is not JSON: ") + e.what());
        }
        try {
            const auto applied = st.submit(HumanDecision::from_json(body));
            send_json(res, {{"ok", true}, {"applied", applied.size()}, {"image_ids", applied}});
        } catch (const ReviewError& e) {
            send_error(res, e.status(), e.code(), e.what());
        }
    });

    srv.Get("/api/stats", [&st](const httplib::Request&, httplib::Response& res) { send_json(res, st.stats().to_json()); });

    srv.Get(R"(/api/image/([^/]+))", [&st](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        auto png = st.image_png(id);
        if (!png) return send_error(res, 404, "not_found", "unknown image " + id);
        res.set_content(std::string(png->begin(), png->end()), "image/png");
    });

    srv.Get("/api/hierarchy", [&st](const httplib::Request&, httplib::Response& res) {
        json labels = json::array();
        for (const auto& l : st.hierarchy().labels()) {
            labels.push_back({{"flat", l.flat_index}, {"main", l.main_name}, {"sub", l.sub_name}});
        }
        send_json(res, {{"hierarchy", hierarchy_to_json(st.hierarchy())}, {"labels", labels}});
    });

    srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (res.body.empty()) {
            send_error(res, res.status, res.status == 404 ? "not_found" : "error",
                       "no route for " + req.method + " " + req.path);
        }
    });
    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            send_error(res, 500, "internal", e.what());
        }
    });
}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::start() {
    auto& srv = impl_->server;
    if (impl_->requested_port == 0) {
        port_ = srv.bind_to_any_port(impl_->host);
    } else {
        port_ = srv.bind_to_port(impl_->host, impl_->requested_port) ? impl_->requested_port : -1;
    }
    if (port_ < 0) {
        throw EnvironmentError("cannot bind review server to " + impl_->host + ":" +
                               std::to_string(impl_->requested_port));
    }
    impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    return port_;
}

void ReviewServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

void ReviewServer::wait() {
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace mnistgen
