#include "mnistgen/error.hpp"
#include "mnistgen/modes.hpp"

#include "synthetic.hpp"

#include <doctest.h>

#include <filesystem>
#include <set>

#include <unistd.h>

using namespace mnistgen;
namespace fs = std::filesystem;

namespace {

CategoryHierarchy four_labels() {
    return hierarchy_from_json(nlohmann::json::parse(R"({"version": "1", "categories": [
      {"name": "fruit", "subcategories": [
        {"name": "apple", "characteristics": ["red", "round", "stem"]},
        {"name": "pear", "characteristics": ["green", "tapered", "stem"]}]},
      {"name": "tree", "subcategories": [
        {"name": "oak", "characteristics": ["lobed", "acorn", "bark"]},
        {"name": "pine", "characteristics": ["needles", "cone", "resin"]}]}]})"));
}

CurationConfig config(Mode m) {
    CurationConfig c;
    c.mode = m;
    c.agent.hidden = {16};
    c.agent.batch_size = 4;
    return c;
}

ReviewState::Clock fixed_clock() {
    return [] { return std::string("2024-05-01T00:00:00Z"); };
}

}  // namespace

TEST_CASE("mode names") {
    CHECK(mode_from_string("fast") == Mode::Fast);
    CHECK(to_string(Mode::Individual) == "individual");
    CHECK_THROWS_AS(mode_from_string("turbo"), UserError);
}

TEST_CASE("individual mode queues every image") {
    const auto h = four_labels();
    const auto pool = testing::pool_from_fixture(testing::make_cluster_fixture(1, 4, 5), h, 0.95, 1);
    ReviewState st(h, std::nullopt, {}, fixed_clock());
    Curator cur(st, config(Mode::Individual));
    const auto s = cur.run(pool);
    CHECK(s.queued == 20);
    CHECK(st.pending().size() == 20);
    CHECK(st.stats().review_count == 20);
    CHECK(st.records().empty());
    const auto item = st.pending().front();
    CHECK(item.members.size() == 1);
    CHECK_FALSE(item.thumbnail_raw.empty());
    CHECK_FALSE(item.thumbnail_transformed.empty());
    CHECK(item.alternatives.size() == 3);
    for (const auto& a : item.alternatives) CHECK(a.flat_index != item.predicted_flat);
    CHECK(std::is_sorted(item.alternatives.begin(), item.alternatives.end(),
                         [](const Alternative& a, const Alternative& b) { return a.score > b.score; }));
}

TEST_CASE("smart mode routes by confidence") {
    const auto h = four_labels();
    auto pool = testing::pool_from_fixture(testing::make_cluster_fixture(2, 4, 3), h, 0.5, 2);
    const double confs[] = {0.95, 0.9, 0.86, 0.85, 0.6, 0.4, 0.39, 0.1, 0.95, 0.7, 0.2, 0.99};
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i].result.confidence = confs[i];
    pool[8].result.eligible = false;  // confident but fails the prefilter

    ReviewState st(h, std::nullopt, {}, fixed_clock());
    Curator cur(st, config(Mode::Smart));
    const auto s = cur.run(pool);
    CHECK(s.auto_kept == 4);     // 0.95 0.9 0.86 0.99
    CHECK(s.queued == 4);        // 0.85 0.6 0.4 0.7
    CHECK(s.auto_removed == 4);  // 0.39 0.1 ineligible 0.2
    CHECK(s.vetoed == 0);        // the agent has not warmed up
    const auto stats = st.stats();
    CHECK(stats.auto_count == 4);
    CHECK(stats.review_count == 4);
    CHECK(stats.remove_count == 4);
    CHECK(st.decision_for(pool[0].id)->kept);
    CHECK(st.decision_for(pool[0].id)->label == pool[0].result.best_flat);
    CHECK_FALSE(st.decision_for(pool[8].id)->kept);
    CHECK_FALSE(st.decision_for(pool[4].id));
    // Every automatic decision fed the agent one transition.
    CHECK(cur.agent().replay().size() == 8);
    for (const auto& r : st.records()) {
        CHECK(r.reward >= -0.1);
        CHECK(r.reward <= 0.9);
    }
}

TEST_CASE("fast mode queues one item per cluster") {
    const auto h = four_labels();
    const auto f = testing::make_cluster_fixture(5, 10, 10);
    const auto pool = testing::pool_from_fixture(f, h, 0.6, 5);
    ReviewState st(h, std::nullopt, {}, fixed_clock());
    Curator cur(st, config(Mode::Fast));
    const auto s = cur.run(pool);
    CHECK(s.queued == 10);
    const auto items = st.pending();
    REQUIRE(items.size() == 10);
    std::set<std::string> all;
    for (const auto& it : items) {
        REQUIRE(it.cluster_id);
        CHECK(it.members.size() == 10);
        CHECK(it.members.front().image_id == it.image_id);
        for (const auto& m : it.members) all.insert(m.image_id);
    }
    CHECK(all.size() == 100);

    HumanDecision d;
    d.cluster_id = items[3].cluster_id;
    d.verdict = Verdict::Override;
    d.override_main = "tree";
    d.override_sub = "pine";
    CHECK(st.submit(d).size() == 10);
    for (const auto& m : items[3].members) CHECK(st.decision_for(m.image_id)->label == 3);
    // Human verdicts reach the agent.
    CHECK(cur.agent().replay().size() == 10);
}

TEST_CASE("unattended reviewer resolves the queue") {
    const auto h = four_labels();
    auto pool = testing::pool_from_fixture(testing::make_cluster_fixture(3, 2, 4), h, 0.7, 3);
    pool[0].result.confidence = 0.5;
    ReviewState st(h, std::nullopt, {}, fixed_clock());
    Curator cur(st, config(Mode::Individual));
    cur.run(pool);
    CHECK(cur.resolve_pending_with_agent() == 8);
    CHECK(st.pending().empty());
    for (const auto& e : pool) CHECK(st.decision_for(e.id)->source == DecisionSource::Agent);
    // Before warm-up the midpoint of the review band (0.625) decides.
    CHECK_FALSE(st.decision_for(pool[0].id)->kept);
    CHECK(st.decision_for(pool[1].id)->kept);
}

TEST_CASE("re-running over a replayed log adds no decisions") {
    const auto h = four_labels();
    auto pool = testing::pool_from_fixture(testing::make_cluster_fixture(4, 3, 4), h, 0.95, 4);
    for (std::size_t i = 0; i < pool.size(); i += 3) pool[i].result.confidence = 0.6;
    const auto dir = fs::temp_directory_path() / ("mnistgen_modes_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    std::size_t first_records = 0;
    {
        ReviewState st(h, dir / "d.jsonl", {}, fixed_clock());
        Curator cur(st, config(Mode::Smart));
        cur.run(pool);
        HumanDecision d;
        d.image_id = pool[0].id;
        d.verdict = Verdict::Discard;
        st.submit(d);
        first_records = st.records().size();
    }
    ReviewState st(h, dir / "d.jsonl", {}, fixed_clock());
    Curator cur(st, config(Mode::Smart));
    cur.run(pool);
    CHECK(st.records().size() == first_records);
    CHECK(st.pending().size() == 3);  // pool[0] is resolved already
    CHECK_FALSE(st.decision_for(pool[0].id)->kept);
    fs::remove_all(dir);
}

TEST_CASE("duplicate ids in a pool are rejected") {
    const auto h = four_labels();
    auto pool = testing::pool_from_fixture(testing::make_cluster_fixture(6, 1, 2), h, 0.6, 6);
    pool[1].id = pool[0].id;
    ReviewState st(h, std::nullopt, {}, fixed_clock());
    Curator cur(st, config(Mode::Individual));
    CHECK_THROWS_AS(cur.run(pool), UserError);
}
