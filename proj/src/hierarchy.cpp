#include "mnistgen/hierarchy.hpp"

#include "mnistgen/error.hpp"

#include <algorithm>
#include <set>

namespace mnistgen {

using nlohmann::json;

CategoryHierarchy::CategoryHierarchy(std::string version, std::vector<MainCategory> categories)
    : version_(std::move(version)), categories_(std::move(categories)) {
    int flat = 0;
    for (std::size_t m = 0; m < categories_.size(); ++m) {
        offsets_.push_back(flat);
        const auto& main = categories_[m];
        for (std::size_t s = 0; s < main.subcategories.size(); ++s) {
            labels_.push_back({static_cast<int>(m), static_cast<int>(s), flat++, main.name,
                               main.subcategories[s].name});
        }
    }
}

int CategoryHierarchy::flat_index(int main_index, int sub_index) const {
    if (main_index < 0 || static_cast<std::size_t>(main_index) >= categories_.size()) {
        throw UserError("main index out of range: " + std::to_string(main_index));
    }
    const auto& subs = categories_[static_cast<std::size_t>(main_index)].subcategories;
    if (sub_index < 0 || static_cast<std::size_t>(sub_index) >= subs.size()) {
        throw UserError("sub index out of range: " + std::to_string(sub_index));
    }
    return offsets_[static_cast<std::size_t>(main_index)] + sub_index;
}

std::optional<LabelEntry> CategoryHierarchy::find(std::string_view main_name,
                                                  std::string_view sub_name) const {
    for (const auto& l : labels_) {
        if (l.main_name == main_name && l.sub_name == sub_name) return l;
    }
    return std::nullopt;
}

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
    if (!obj.is_object()) throw UserError(where + ": expected an object");
    for (const auto& [key, _] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw UserError(where + ": unknown key \"" + key + "\"");
        }
    }
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
        throw UserError(where + ": missing string field \"" + key + "\"");
    }
    return it->get<std::string>();
}

std::string optional_string(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) return {};
    if (!it->is_string()) throw UserError(where + ": field \"" + key + "\" must be a string");
    return it->get<std::string>();
}

double unit_number(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_number()) {
        throw UserError(where + ": missing numeric field \"" + key + "\"");
    }
    double v = it->get<double>();
    if (!(v >= 0.0 && v <= 1.0)) throw UserError(where + ": \"" + key + "\" must lie in [0,1]");
    return v;
}

Subcategory parse_subcategory(const json& j, const std::string& where,
                              std::vector<std::string>* warnings) {
    check_keys(j, {"name", "description", "characteristics", "expected_visual"}, where);
    Subcategory sub;
    sub.name = trim(require_string(j, "name", where));
    if (sub.name.empty()) throw UserError(where + ": empty name");
    const std::string here = where + " \"" + sub.name + "\"";
    sub.description = optional_string(j, "description", here);

    auto chars = j.find("characteristics");
    if (chars == j.end() || !chars->is_array()) {
        throw UserError(here + ": missing array \"characteristics\"");
    }
    if (chars->empty()) throw UserError(here + ": empty characteristics");
    std::set<std::string> seen;
    for (const auto& c : *chars) {
        if (!c.is_string()) throw UserError(here + ": characteristics must be strings");
        std::string phrase = trim(c.get<std::string>());
        if (phrase.empty()) throw UserError(here + ": blank characteristic phrase");
        if (!seen.insert(phrase).second) {
            throw UserError(here + ": duplicate characteristic \"" + phrase + "\"");
        }
        sub.characteristics.push_back(std::move(phrase));
    }
    if (sub.characteristics.size() < 3 && warnings) {
        warnings->push_back(here + ": only " + std::to_string(sub.characteristics.size()) +
                            " characteristic(s); 3 or more recommended");
    }

    if (auto ev = j.find("expected_visual"); ev != j.end()) {
        const std::string evw = here + ".expected_visual";
        check_keys(*ev, {"brightness", "contrast", "edge_density"}, evw);
        sub.expected_visual = VisualProfile{unit_number(*ev, "brightness", evw),
                                            unit_number(*ev, "contrast", evw),
                                            unit_number(*ev, "edge_density", evw)};
    }
    return sub;
}

}  // namespace

CategoryHierarchy hierarchy_from_json(const json& j, std::vector<std::string>* warnings) {
    check_keys(j, {"version", "categories"}, "hierarchy");
    std::string version = optional_string(j, "version", "hierarchy");
    auto cats = j.find("categories");
    if (cats == j.end() || !cats->is_array()) {
        throw UserError("hierarchy: missing array \"categories\"");
    }
    if (cats->empty()) throw UserError("empty hierarchy");

    std::vector<MainCategory> mains;
    std::set<std::string> main_names;
    for (std::size_t i = 0; i < cats->size(); ++i) {
        const auto& cj = (*cats)[i];
        const std::string where = "categories[" + std::to_string(i) + "]";
        check_keys(cj, {"name", "description", "subcategories"}, where);
        MainCategory main;
        main.name = trim(require_string(cj, "name", where));
        if (main.name.empty()) throw UserError(where + ": empty name");
        if (!main_names.insert(main.name).second) {
            throw UserError("duplicate category name \"" + main.name + "\"");
        }
        const std::string here = "category \"" + main.name + "\"";
        main.description = optional_string(cj, "description", here);
        auto subs = cj.find("subcategories");
        if (subs == cj.end() || !subs->is_array()) {
            throw UserError(here + ": missing array \"subcategories\"");
        }
        if (subs->empty()) throw UserError(here + ": empty subcategory list");
        std::set<std::string> sub_names;
        for (std::size_t s = 0; s < subs->size(); ++s) {
            auto sub = parse_subcategory((*subs)[s], here + " subcategory", warnings);
            if (!sub_names.insert(sub.name).second) {
                throw UserError(here + ": duplicate subcategory name \"" + sub.name + "\"");
            }
            main.subcategories.push_back(std::move(sub));
        }
        mains.push_back(std::move(main));
    }
    return CategoryHierarchy(std::move(version), std::move(mains));
}

CategoryHierarchy parse_hierarchy(std::string_view config_text,
                                  std::vector<std::string>* warnings) {
    json j;
    try {
        j = json::parse(config_text);
    } catch (const json::parse_error& e) {
        // Translate the byte offset into line/column for the message.
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < config_text.size(); ++i) {
            if (config_text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw UserError("hierarchy: JSON syntax error at line " + std::to_string(line) +
                        ", column " + std::to_string(col) + " (byte " +
                        std::to_string(e.byte) + ")");
    }
    return hierarchy_from_json(j, warnings);
}

json hierarchy_to_json(const CategoryHierarchy& h) {
    json cats = json::array();
    for (const auto& main : h.categories()) {
        json subs = json::array();
        for (const auto& sub : main.subcategories) {
            json sj = {{"name", sub.name},
                       {"description", sub.description},
                       {"characteristics", sub.characteristics}};
            if (sub.expected_visual) {
                sj["expected_visual"] = {{"brightness", sub.expected_visual->brightness},
                                         {"contrast", sub.expected_visual->contrast},
                                         {"edge_density", sub.expected_visual->edge_density}};
            }
            subs.push_back(std::move(sj));
        }
        cats.push_back(
            {{"name", main.name}, {"description", main.description}, {"subcategories", subs}});
    }
    return {{"version", h.version()}, {"categories", cats}};
}

std::string serialize_hierarchy(const CategoryHierarchy& h) {
    return hierarchy_to_json(h).dump(2) + "\n";
}

std::vector<LabelEntry> flatten_labels(const CategoryHierarchy& h) { return h.labels(); }

std::vector<std::string> build_prompts(const Subcategory& sub, const MainCategory& parent) {
    std::vector<std::string> prompts;
    prompts.reserve(kTemplatePromptCount + sub.characteristics.size());
    prompts.push_back("A photo of " + parent.name);
    prompts.push_back("This is a " + sub.name);
    for (const auto& c : sub.characteristics) prompts.push_back(c);
    return prompts;
}

namespace {

using SubSpec = std::pair<const char*, std::vector<std::string>>;

MainCategory make_main(const char* name, const char* desc, std::vector<SubSpec> subs) {
    MainCategory m{name, desc, {}};
    for (auto& [sub_name, chars] : subs) {
        m.subcategories.push_back({sub_name, std::string(sub_name) + " (" + name + ")",
                                   std::move(chars), std::nullopt});
    }
    return m;
}

}  // namespace

CategoryHierarchy food_template() {
    std::vector<MainCategory> mains;
    mains.push_back(make_main("Bread", "Baked bread products",
                              {{"Sliced Bread", {"rectangular slices", "uniform thickness", "soft crumb"}},
                               {"Whole Loaves", {"crusty exterior", "round or oval shape", "scored top"}},
                               {"Rolls and Buns", {"individual portions", "soft texture", "golden top"}}}));
    mains.push_back(make_main("Dairy Product", "Milk-based foods",
                              {{"Milk and Liquid Dairy", {"white liquid", "containers", "glass or carton"}},
                               {"Cheese", {"yellow or white blocks", "slices", "firm texture"}},
                               {"Yogurt and Cream", {"thick consistency", "creamy texture", "spooned in a bowl"}}}));
    mains.push_back(make_main("Dessert", "Sweet dishes",
                              {{"Cakes and Pastries", {"frosted layers", "colorful icing", "flaky pastry"}},
                               {"Ice Cream and Frozen", {"frozen scoops", "cold treats", "cone or cup"}},
                               {"Cookies and Small Sweets", {"bite-sized", "chocolate pieces", "round cookies"}}}));
    mains.push_back(make_main("Egg", "Egg preparations",
                              {{"Whole Eggs", {"oval shape", "visible shells", "white shell"}},
                               {"Fried and Scrambled", {"yellow yolk", "cooked texture", "pan fried"}},
                               {"Egg Dishes", {"omelets", "prepared mixtures", "folded egg"}}}));
    mains.push_back(make_main("Fried Food", "Deep or pan fried foods",
                              {{"Fried Chicken and Poultry", {"golden coating", "crispy texture", "drumsticks"}},
                               {"French Fries and Chips", {"stick shape", "potato color", "thin slices"}},
                               {"Other Fried Foods", {"crispy batter", "oil-cooked", "golden brown"}}}));
    mains.push_back(make_main("Meat", "Meat products",
                              {{"Raw Meat", {"red color", "butcher cuts", "marbled fat"}},
                               {"Grilled and Roasted", {"brown cooked", "grill marks", "roasted crust"}},
                               {"Processed Meat", {"sausage shape", "deli cuts", "cured slices"}}}));
    mains.push_back(make_main("Noodles-Pasta", "Noodle and pasta dishes",
                              {{"Long Pasta and Noodles", {"long strands", "twirled on fork", "sauce coated"}},
                               {"Short Pasta Shapes", {"tube shapes", "spiral pieces", "baked pasta"}},
                               {"Asian Noodle Soups", {"broth bowl", "chopsticks", "sliced toppings"}}}));
    mains.push_back(make_main("Rice", "Rice dishes",
                              {{"Plain Cooked Rice", {"white grains", "steamed bowl", "fluffy texture"}},
                               {"Fried Rice", {"mixed vegetables", "browned grains", "wok tossed"}},
                               {"Rice Dishes", {"risotto", "paella pan", "rice with toppings"}}}));
    mains.push_back(make_main("Seafood", "Fish and shellfish",
                              {{"Fish Fillets and Steaks", {"flaky flesh", "fillet cut", "seared surface"}},
                               {"Shellfish and Crustaceans", {"hard shells", "shrimp", "claws"}},
                               {"Whole Fish", {"fish head", "fins and scales", "whole body"}}}));
    mains.push_back(make_main("Vegetable-Fruit", "Produce",
                              {{"Fresh Vegetables", {"green leaves", "raw produce", "crisp texture"}},
                               {"Fresh Fruits", {"bright colors", "round fruit", "glossy skin"}},
                               {"Cooked Vegetables", {"steamed vegetables", "roasted vegetables", "soft texture"}}}));
    return CategoryHierarchy("1.0", std::move(mains));
}

CategoryHierarchy tree_template() {
    std::vector<MainCategory> mains;
    mains.push_back(make_main("Broadleaf Tree", "Trees with broad flat leaves",
                              {{"Deciduous Broadleaf", {"seasonal leaf drop", "broad canopy", "autumn colors"}},
                               {"Evergreen Broadleaf", {"year-round foliage", "glossy leaves", "dense canopy"}},
                               {"Flowering Broadleaf", {"visible blooms", "ornamental features", "colorful appearance"}}}));
    mains.push_back(make_main("Cactus", "Succulent desert plants",
                              {{"Columnar Cactus", {"tall vertical stems", "ribbed surface", "minimal branching"}},
                               {"Barrel and Round Cactus", {"compact spherical form", "clustered spines", "ribbed globe"}},
                               {"Branching and Pad Cactus", {"segmented structure", "flat surfaces", "complex growth"}}}));
    mains.push_back(make_main("Coniferous Tree", "Cone-bearing needle trees",
                              {{"Pine and Fir Trees", {"needle leaves", "conical shape", "pyramid form"}},
                               {"Spruce and Cedar", {"dense clusters", "drooping branches", "aromatic wood"}},
                               {"Juniper and Cypress", {"varied needles", "irregular shape", "drought tolerance"}}}));
    mains.push_back(make_main("Palm", "Palm trees",
                              {{"Fan Palm", {"radiating fronds", "palmate structure", "umbrella canopy"}},
                               {"Feather Palm", {"pinnate leaves", "graceful arching", "flowing appearance"}},
                               {"Coconut and Date Palm", {"tall curved trunks", "fruit clusters", "coastal adaptation"}}}));
    return CategoryHierarchy("1.0", std::move(mains));
}

}  // namespace mnistgen
