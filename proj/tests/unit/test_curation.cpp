#include "mnistgen/curation.hpp"
#include "mnistgen/error.hpp"

#include "oracles.hpp"
#include "synthetic.hpp"

#include <doctest.h>

#include <random>

using namespace mnistgen;

TEST_CASE("routing boundaries") {
    CHECK(route_confidence(0.85) == Route::HumanReview);
    CHECK(route_confidence(std::nextafter(0.85, 1.0)) == Route::AutoCategorize);
    CHECK(route_confidence(0.4) == Route::HumanReview);
    CHECK(route_confidence(std::nextafter(0.4, 0.0)) == Route::AutoRemove);
    CHECK(route_confidence(1.0) == Route::AutoCategorize);
    CHECK(route_confidence(0.0) == Route::AutoRemove);
}

TEST_CASE("routing with custom thresholds") {
    const RoutingThresholds t{0.7, 0.2};
    CHECK(route_confidence(0.71, t) == Route::AutoCategorize);
    CHECK(route_confidence(0.2, t) == Route::HumanReview);
    CHECK(route_confidence(0.19, t) == Route::AutoRemove);
}

TEST_CASE("reward matches a straight-line evaluation") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t k = 1 + rng() % 6;
        ClassDistribution d;
        for (std::size_t i = 0; i < k; ++i) d.counts.push_back(static_cast<std::int64_t>(rng() % 20));
        d.counts[rng() % k] += 1;
        const double conf = u(rng), acc = u(rng), red = u(rng);
        CHECK(compute_reward(conf, d, acc, red) == doctest::Approx(oracle::reward(conf, d.counts, acc, red)).epsilon(1e-12));
    }
}

TEST_CASE("reward extremes") {
    ClassDistribution balanced{{5, 5}};
    CHECK(compute_reward(1.0, balanced, 1.0, 0.0) == doctest::Approx(0.9));
    ClassDistribution single{{7, 0}};
    CHECK(compute_reward(0.0, single, 0.0, 1.0) == doctest::Approx(-0.1));
}

TEST_CASE("reward inputs outside [0,1] are rejected") {
    ClassDistribution d{{1, 1}};
    CHECK_THROWS_AS(compute_reward(1.1, d, 0.5, 0.5), UserError);
    CHECK_THROWS_AS(compute_reward(0.5, d, -0.1, 0.5), UserError);
    CHECK_THROWS_AS(compute_reward(0.5, ClassDistribution{{0, 0}}, 0.5, 0.5), UserError);
}

TEST_CASE("normalized entropy") {
    CHECK(class_entropy(ClassDistribution{{3, 3, 3}}) == doctest::Approx(1.0));
    CHECK(class_entropy(ClassDistribution{{0, 4, 0}}) == doctest::Approx(0.0));
    CHECK(class_entropy(ClassDistribution{{9}}) == 0.0);
    CHECK(class_entropy(ClassDistribution{{1, 3}}) ==
          doctest::Approx((-(0.25 * std::log(0.25)) - 0.75 * std::log(0.75)) / std::log(2.0)));
}

TEST_CASE("reward weights must be valid") {
    RewardWeights w;
    CHECK_NOTHROW(w.validate());
    w.lambda2 = -0.1;
    CHECK_THROWS_AS(w.validate(), UserError);
}

TEST_CASE("action confidence") {
    CHECK(action_confidence(CurationAction::Keep, 0.8) == 0.8);
    CHECK(action_confidence(CurationAction::Discard, 0.8) == doctest::Approx(0.2));
    CHECK(action_confidence(CurationAction::Review, 0.8) == 0.5);
}

TEST_CASE("redundancy is the max mapped cosine to kept samples") {
    StubProvider p;
    const auto a = p.embed_text("apple"), b = p.embed_text("pear"), c = p.embed_text("apple tree");
    CHECK(redundancy(a, {}) == 0.0);
    CHECK(redundancy(a, {b, a}) == doctest::Approx(1.0));
    CHECK(redundancy(c, {a, b}) == doctest::Approx(std::max(mapped_cosine(c, a), mapped_cosine(c, b))));
}

TEST_CASE("state layout") {
    StubProvider p;
    StateProjector proj(7);
    const auto s = make_state(proj, p.embed_text("x"), VisualAttributes{0.1, 0.2, 0.3}, 0.9, 0.25, 0.6);
    CHECK(s.features[16] == 0.1);
    CHECK(s.features[18] == 0.3);
    CHECK(s.confidence() == 0.9);
    CHECK(s.class_fraction() == 0.25);
    CHECK(s.redundancy() == 0.6);
    const auto again = make_state(StateProjector(7), p.embed_text("x"), VisualAttributes{0.1, 0.2, 0.3}, 0.9, 0.25, 0.6);
    CHECK(again == s);
}

TEST_CASE("clustering recovers tight groups") {
    const auto f = testing::make_cluster_fixture(3, 6, 5);
    const auto clusters = cluster_embeddings(f.embeddings, kDefaultClusterThreshold);
    REQUIRE(clusters.size() == 6);
    for (const auto& c : clusters) {
        CHECK(c.size() == 5);
        CHECK(std::is_sorted(c.begin(), c.end()));
        for (auto i : c) CHECK(f.labels[i] == f.labels[c.front()]);
    }
    // Ties on size order by smallest member.
    for (std::size_t i = 1; i < clusters.size(); ++i) CHECK(clusters[i - 1].front() < clusters[i].front());
}

TEST_CASE("clustering edge cases") {
    CHECK(cluster_embeddings({}, 0.9).empty());
    StubProvider p;
    const auto one = cluster_embeddings({p.embed_text("a")}, 0.9);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == std::vector<std::size_t>{0});
    // Threshold 1 keeps every item alone; 0 merges everything.
    const auto f = testing::make_cluster_fixture(1, 3, 2);
    CHECK(cluster_embeddings(f.embeddings, 1.0).size() == 6);
    CHECK(cluster_embeddings(f.embeddings, 0.0).size() == 1);
}

TEST_CASE("average linkage, not single linkage") {
    // b sits between a and c; average linkage refuses {a,b} + {c} while
    // single linkage would chain them.
    auto unit = [](double x, double y) {
        std::vector<double> v(kEmbeddingDim, 0.0);
        v[0] = x;
        v[1] = y;
        return Embedding::normalized(std::move(v));
    };
    const double t = 0.6;
    const std::vector<Embedding> es = {unit(1, 0), unit(std::cos(t), std::sin(t)), unit(std::cos(2 * t), std::sin(2 * t))};
    const double thr = (std::cos(t) + 1) / 2 - 1e-9;  // exactly admits neighbours
    const auto clusters = cluster_embeddings(es, thr);
    CHECK(clusters.size() == 2);
}
