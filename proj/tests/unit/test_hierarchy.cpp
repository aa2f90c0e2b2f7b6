#include "mnistgen/error.hpp"
#include "mnistgen/hierarchy.hpp"

#include <doctest.h>

using namespace mnistgen;
using nlohmann::json;

namespace {

json two_by_two() {
    return json::parse(R"({
      "version": "1",
      "categories": [
        {"name": "fruit", "description": "", "subcategories": [
          {"name": "apple", "description": "", "characteristics": ["red", "round", "stem"]},
          {"name": "banana", "description": "", "characteristics": ["yellow", "curved", "peel"]}]},
        {"name": "veg", "description": "", "subcategories": [
          {"name": "carrot", "description": "", "characteristics": ["orange", "long", "root"]}]}
      ]})");
}

}  // namespace

TEST_CASE("flattening is dense and ordered") {
    const auto h = hierarchy_from_json(two_by_two());
    REQUIRE(h.subcategory_count() == 3);
    const auto& l = h.labels();
    CHECK(l[0].flat_index == 0);
    CHECK(l[1].sub_name == "banana");
    CHECK(l[2].main_index == 1);
    CHECK(l[2].sub_index == 0);
    CHECK(h.flat_index(1, 0) == 2);
    CHECK(h.find("fruit", "banana")->flat_index == 1);
    CHECK_FALSE(h.find("fruit", "carrot"));
}

TEST_CASE("serialize then parse is the identity") {
    for (const auto& h : {hierarchy_from_json(two_by_two()), food_template(), tree_template()}) {
        CHECK(parse_hierarchy(serialize_hierarchy(h)) == h);
    }
}

TEST_CASE("expected_visual survives a round trip") {
    auto j = two_by_two();
    j["categories"][0]["subcategories"][0]["expected_visual"] = {
        {"brightness", 0.5}, {"contrast", 0.2}, {"edge_density", 0.1}};
    const auto h = hierarchy_from_json(j);
    REQUIRE(h.categories()[0].subcategories[0].expected_visual);
    CHECK(parse_hierarchy(serialize_hierarchy(h)) == h);
}

TEST_CASE("invalid hierarchies are rejected") {
    SUBCASE("duplicate main name") {
        auto j = two_by_two();
        j["categories"][1]["name"] = "fruit";
        CHECK_THROWS_AS(hierarchy_from_json(j), UserError);
    }
    SUBCASE("duplicate sub name within a parent") {
        auto j = two_by_two();
        j["categories"][0]["subcategories"][1]["name"] = "apple";
        CHECK_THROWS_AS(hierarchy_from_json(j), UserError);
    }
    SUBCASE("empty subcategory list") {
        auto j = two_by_two();
        j["categories"][1]["subcategories"] = json::array();
        CHECK_THROWS_AS(hierarchy_from_json(j), UserError);
    }
    SUBCASE("no categories") {
        auto j = two_by_two();
        j["categories"] = json::array();
        CHECK_THROWS_AS(hierarchy_from_json(j), UserError);
    }
    SUBCASE("blank characteristic") {
        auto j = two_by_two();
        j["categories"][0]["subcategories"][0]["characteristics"][1] = "  ";
        CHECK_THROWS_AS(hierarchy_from_json(j), UserError);
    }
    SUBCASE("repeated characteristic") {
        auto j = two_by_two();
        j["categories"][0]["subcategories"][0]["characteristics"][1] = "red";
        CHECK_THROWS_AS(hierarchy_from_json(j), UserError);
    }
    SUBCASE("unknown key") {
        auto j = two_by_two();
        j["colour"] = "blue";
        CHECK_THROWS_AS(hierarchy_from_json(j), UserError);
    }
    SUBCASE("malformed json") { CHECK_THROWS_AS(parse_hierarchy("{\"version\": "), UserError); }
}

TEST_CASE("few characteristics only warn") {
    auto j = two_by_two();
    j["categories"][1]["subcategories"][0]["characteristics"] = {"orange"};
    std::vector<std::string> warnings;
    const auto h = hierarchy_from_json(j, &warnings);
    CHECK(h.subcategory_count() == 3);
    CHECK(warnings.size() == 1);
}

TEST_CASE("prompts put the templates first") {
    const auto h = hierarchy_from_json(two_by_two());
    const auto p = build_prompts(h.categories()[0].subcategories[1], h.categories()[0]);
    REQUIRE(p.size() == kTemplatePromptCount + 3);
    CHECK(p[0] == "A photo of fruit");
    CHECK(p[1] == "This is a banana");
    CHECK(p[2].find("yellow") != std::string::npos);
}
