#include "mnistgen/error.hpp"
#include "mnistgen/review.hpp"

#include "oracles.hpp"

#include <doctest.h>
#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include <unistd.h>

using namespace mnistgen;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

CategoryHierarchy small_hierarchy() {
    return hierarchy_from_json(json::parse(R"({"version": "1", "categories": [
      {"name": "fruit", "subcategories": [
        {"name": "apple", "characteristics": ["red", "round", "stem"]},
        {"name": "pear", "characteristics": ["green", "tapered", "stem"]}]},
      {"name": "tree", "subcategories": [
        {"name": "oak", "characteristics": ["lobed", "acorn", "bark"]}]}]})"));
}

QueueMember member(const std::string& id, double conf, double red = 0.0, int flat = 0) {
    QueueMember m;
    m.image_id = id;
    m.confidence = conf;
    m.predicted_flat = flat;
    m.state.features[19] = conf;
    m.state.features[21] = red;
    return m;
}

QueueItem item(const std::string& id, double conf, int flat = 0, std::optional<int> cluster = std::nullopt,
               std::vector<QueueMember> extra = {}) {
    QueueItem q;
    q.image_id = id;
    q.cluster_id = cluster;
    q.members.push_back(member(id, conf, 0.25, flat));
    for (auto& m : extra) q.members.push_back(m);
    q.predicted_flat = flat;
    q.confidence = conf;
    q.alternatives = {{1, "fruit", "pear", 0.4}};
    return q;
}

HumanDecision decide(const std::string& id, Verdict v, std::string main = {}, std::string sub = {}) {
    HumanDecision d;
    d.image_id = id;
    d.verdict = v;
    d.override_main = std::move(main);
    d.override_sub = std::move(sub);
    return d;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("mnistgen_review_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ReviewState::Clock fixed_clock() {
    return [] { return std::string("2024-05-01T00:00:00Z"); };
}

}  // namespace

TEST_CASE("decision json validation") {
    auto d = HumanDecision::from_json({{"image_id", "abc"}, {"verdict", "accept"}});
    CHECK(*d.image_id == "abc");
    d = HumanDecision::from_json({{"cluster_id", 3}, {"verdict", "override"}, {"main", "fruit"}, {"sub", "pear"}});
    CHECK(*d.cluster_id == 3);
    CHECK(d.override_sub == "pear");

    auto status_of = [](const json& j) {
        try {
            HumanDecision::from_json(j);
        } catch (const ReviewError& e) {
            return e.status();
        }
        return 0;
    };
    CHECK(status_of({{"verdict", "accept"}}) == 400);
    CHECK(status_of({{"image_id", "a"}, {"cluster_id", 1}, {"verdict", "accept"}}) == 400);
    CHECK(status_of({{"image_id", "a"}, {"verdict", "maybe"}}) == 400);
    CHECK(status_of({{"image_id", "a"}, {"verdict", "override"}}) == 400);
    CHECK(status_of({{"image_id", "a"}, {"verdict", "accept"}, {"extra", 1}}) == 400);
    CHECK(status_of(json::array()) == 400);
}

TEST_CASE("decision records round trip") {
    DecisionRecord r;
    r.image_id = "x";
    r.action = CurationAction::Discard;
    r.source = DecisionSource::Agent;
    r.reward = 0.123456789;
    r.timestamp = "t";
    r.cluster_id = 4;
    r.note = "blurry";
    const auto back = DecisionRecord::from_json(r.to_json());
    CHECK(back.to_json() == r.to_json());
}

TEST_CASE("human decisions outrank automatic ones") {
    std::vector<DecisionRecord> rs(4);
    rs[0] = {"b", CurationAction::Keep, DecisionSource::Threshold, 0, "", 0, {}, ""};
    rs[1] = {"a", CurationAction::Discard, DecisionSource::Human, 0, "", {}, {}, ""};
    rs[2] = {"a", CurationAction::Keep, DecisionSource::Agent, 0, "", 1, {}, ""};
    rs[3] = {"b", CurationAction::Discard, DecisionSource::Agent, 0, "", {}, {}, ""};
    const auto m = membership_from_records(rs);
    REQUIRE(m.size() == 2);
    CHECK(m[0].image_id == "a");
    CHECK_FALSE(m[0].kept);
    CHECK(m[0].source == DecisionSource::Human);
    CHECK_FALSE(m[1].kept);  // the later agent record wins over the threshold one
}

TEST_CASE("queue is FIFO over unresolved items") {
    ReviewState st(small_hierarchy(), std::nullopt, {}, fixed_clock());
    for (int i = 0; i < 5; ++i) st.enqueue(item("img" + std::to_string(i), 0.6));
    CHECK(st.next_batch(2).size() == 2);
    st.submit(decide("img0", Verdict::Accept));
    const auto b = st.next_batch(10);
    REQUIRE(b.size() == 4);
    CHECK(b[0].image_id == "img1");
    CHECK(st.stats().queue_depth == 4);
    CHECK(st.stats().resolved == 1);
    CHECK_THROWS_AS(st.enqueue(item("img1", 0.5)), UserError);
}

TEST_CASE("accept, override and discard") {
    ReviewState st(small_hierarchy(), std::nullopt, {}, fixed_clock());
    std::vector<Transition> seen;
    st.set_transition_sink([&](const Transition& t) {
        seen.push_back(t);
        return 0.05;
    });
    st.enqueue(item("a", 0.6, 0));
    st.enqueue(item("b", 0.7, 0));
    st.enqueue(item("c", 0.5, 1));

    st.submit(decide("a", Verdict::Accept));
    CHECK(st.decision_for("a")->label == 0);
    // One kept sample in class 0: entropy 0.
    CHECK(st.records().back().reward == doctest::Approx(oracle::reward(1.0, {1, 0}, 0.5, 0.25)));

    st.submit(decide("b", Verdict::Override, "tree", "oak"));
    CHECK(st.decision_for("b")->label == 2);
    CHECK(st.records().back().reward == doctest::Approx(oracle::reward(1.0, {1, 1}, 0.5, 0.25)));

    st.submit(decide("c", Verdict::Discard));
    CHECK_FALSE(st.decision_for("c")->kept);
    CHECK(st.records().back().reward == doctest::Approx(oracle::reward(0.5, {1, 1}, 0.5, 0.25)));

    REQUIRE(seen.size() == 3);
    CHECK(seen[1].action == CurationAction::Keep);
    CHECK(seen[2].action == CurationAction::Discard);
    CHECK(seen[2].terminal);
    CHECK(st.stats().epsilon == 0.05);
    CHECK(st.kept_distribution().counts == std::vector<std::int64_t>{1, 1});
}

TEST_CASE("submit errors carry http statuses") {
    ReviewState st(small_hierarchy(), std::nullopt, {}, fixed_clock());
    st.enqueue(item("a", 0.6));
    auto status_of = [&](const HumanDecision& d) {
        try {
            st.submit(d);
        } catch (const ReviewError& e) {
            return e.status();
        }
        return 200;
    };
    CHECK(status_of(decide("zzz", Verdict::Accept)) == 404);
    CHECK(status_of(decide("a", Verdict::Override, "fruit", "oak")) == 400);
    CHECK(status_of(decide("a", Verdict::Accept)) == 200);
    CHECK(status_of(decide("a", Verdict::Discard)) == 409);
    HumanDecision c;
    c.cluster_id = 9;
    CHECK(status_of(c) == 404);
}

TEST_CASE("cluster decisions apply to every member") {
    ReviewState st(small_hierarchy(), std::nullopt, {}, fixed_clock());
    st.enqueue(item("rep", 0.6, 2, 7, {member("m1", 0.6), member("m2", 0.55)}));
    HumanDecision d;
    d.cluster_id = 7;
    d.verdict = Verdict::Accept;
    const auto applied = st.submit(d);
    CHECK(applied == std::vector<std::string>{"rep", "m1", "m2"});
    for (const auto& id : applied) {
        CHECK(st.decision_for(id)->label == 2);
        CHECK(st.decision_for(id)->source == DecisionSource::Human);
    }
    CHECK(st.kept_distribution().counts == std::vector<std::int64_t>{0, 3});
    CHECK(st.records().back().cluster_id == 7);
}

TEST_CASE("a restarted state replays the log") {
    const auto dir = scratch("replay");
    const auto log = dir / "decisions.jsonl";
    {
        ReviewState st(small_hierarchy(), log, {}, fixed_clock());
        st.enqueue(item("a", 0.6));
        st.enqueue(item("b", 0.6));
        st.submit(decide("a", Verdict::Override, "fruit", "pear"));
        st.record({"t", CurationAction::Keep, DecisionSource::Threshold, 0.5, "", 2, {}, ""});
    }
    // Simulate a crash halfway through writing one more line.
    {
        std::ofstream out(log, std::ios::app);
        out << R"({"image_id": "b", "act)";
    }
    ReviewState st(small_hierarchy(), log, {}, fixed_clock());
    st.enqueue(item("a", 0.6));
    st.enqueue(item("b", 0.6));
    CHECK(st.next_batch(10).size() == 1);
    CHECK(st.next_batch(10)[0].image_id == "b");
    CHECK(st.decision_for("a")->label == 1);
    CHECK(st.decision_for("t")->kept);
    CHECK(st.kept_distribution().counts == std::vector<std::int64_t>{1, 1});
    fs::remove_all(dir);
}

TEST_CASE("a corrupt line before the end is an error") {
    const auto dir = scratch("corrupt");
    write_text_file(dir / "d.jsonl", "garbage\n{\"image_id\": \"a\"}\n");
    CHECK_THROWS_AS(read_decision_log(dir / "d.jsonl"), UserError);
    fs::remove_all(dir);
}

TEST_CASE("stats snapshot") {
    ReviewState st(small_hierarchy(), std::nullopt, {}, fixed_clock());
    auto j = st.stats().to_json();
    CHECK(j["entropy"].is_null());
    const auto v0 = j["version"].get<std::uint64_t>();
    st.count_route(Route::AutoCategorize);
    st.count_route(Route::AutoRemove);
    st.count_route(Route::AutoRemove);
    st.set_probe_accuracy(0.75);
    st.record({"k", CurationAction::Keep, DecisionSource::Threshold, 0.5, "", 0, {}, ""});
    j = st.stats().to_json();
    CHECK(j["tallies"]["auto"] == 1);
    CHECK(j["tallies"]["remove"] == 2);
    CHECK(j["entropy"] == 0.0);
    CHECK(j["probe_accuracy"] == 0.75);
    CHECK(j["classes"][0]["name"] == "fruit");
    CHECK(j["classes"][0]["count"] == 1);
    CHECK(j["version"].get<std::uint64_t>() > v0);
}

TEST_CASE("http api") {
    ReviewState st(small_hierarchy(), std::nullopt, {}, fixed_clock());
    for (int i = 0; i < 3; ++i) st.enqueue(item("img" + std::to_string(i), 0.6));
    st.enqueue(item("rep", 0.6, 2, 5, {member("m", 0.6)}));
    const std::vector<std::uint8_t> png = encode_png(Image(2, 2, 3, 9));
    st.add_image("img0", png);
    ReviewServer server(st);
    const int port = server.start();
    REQUIRE(port > 0);
    httplib::Client cli("127.0.0.1", port);

    auto r = cli.Get("/api/queue?limit=2");
    REQUIRE(r);
    CHECK(r->status == 200);
    auto j = json::parse(r->body);
    REQUIRE(j["items"].size() == 2);
    CHECK(j["items"][0]["image_id"] == "img0");
    CHECK(j["items"][0]["predicted"]["sub"] == "apple");
    CHECK(j["items"][0]["alternatives"][0]["sub"] == "pear");
    CHECK(json::parse(cli.Get("/api/queue")->body)["items"].size() == 4);
    CHECK(cli.Get("/api/queue?limit=abc")->status == 400);

    r = cli.Post("/api/decision", R"({"image_id": "img0", "verdict": "accept"})", "application/json");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(json::parse(r->body)["applied"] == 1);
    r = cli.Post("/api/decision", R"({"image_id": "img0", "verdict": "discard"})", "application/json");
    CHECK(r->status == 409);
    CHECK(json::parse(r->body)["code"] == "conflict");
    CHECK(cli.Post("/api/decision", R"({"image_id": "nope", "verdict": "accept"})", "application/json")->status == 404);
    CHECK(cli.Post("/api/decision", "{not json", "application/json")->status == 400);
    CHECK(cli.Post("/api/decision", R"({"image_id": "img1", "verdict": "override", "main": "tree", "sub": "apple"})",
                   "application/json")->status == 400);
    r = cli.Post("/api/decision", R"({"cluster_id": 5, "verdict": "override", "main": "fruit", "sub": "pear"})",
                 "application/json");
    CHECK(json::parse(r->body)["image_ids"] == json::array({"rep", "m"}));

    j = json::parse(cli.Get("/api/stats")->body);
    CHECK(j["resolved"] == 2);
    CHECK(j["queue_depth"] == 2);
    CHECK(j["classes"][0]["count"] == 3);

    r = cli.Get("/api/image/img0");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(r->get_header_value("Content-Type") == "image/png");
    CHECK(std::vector<std::uint8_t>(r->body.begin(), r->body.end()) == png);
    CHECK(cli.Get("/api/image/unknown")->status == 404);

    j = json::parse(cli.Get("/api/hierarchy")->body);
    CHECK(j["labels"].size() == 3);
    CHECK(j["labels"][2]["sub"] == "oak");

    r = cli.Get("/api/nothing");
    CHECK(r->status == 404);
    CHECK(json::parse(r->body)["code"] == "not_found");
    server.stop();
}

TEST_CASE("concurrent submissions resolve each item once") {
    ReviewState st(small_hierarchy(), std::nullopt, {}, fixed_clock());
    for (int i = 0; i < 40; ++i) st.enqueue(item("i" + std::to_string(i), 0.6));
    ReviewServer server(st);
    const int port = server.start();
    std::atomic<int> ok{0}, conflicts{0};
    std::vector<std::thread> workers;
    for (int w = 0; w < 4; ++w) {
        workers.emplace_back([&] {
            httplib::Client cli("127.0.0.1", port);
            for (int i = 0; i < 40; ++i) {
                auto r = cli.Post("/api/decision", json{{"image_id", "i" + std::to_string(i)}, {"verdict", "accept"}}.dump(),
                                  "application/json");
                if (r && r->status == 200) ++ok;
                if (r && r->status == 409) ++conflicts;
            }
        });
    }
    for (auto& t : workers) t.join();
    CHECK(ok == 40);
    CHECK(conflicts == 120);
    CHECK(st.records().size() == 40);
    server.stop();
}
