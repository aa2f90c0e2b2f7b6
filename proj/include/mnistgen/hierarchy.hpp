#pragma once

#include <json.hpp>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mnistgen {

// Expected visual profile for a subcategory; all values in [0,1].
struct VisualProfile {
    double brightness = 0.0;
    double contrast = 0.0;
    double edge_density = 0.0;

    friend bool operator==(const VisualProfile&, const VisualProfile&) = default;
};

struct Subcategory {
    std::string name;
    std::string description;
    std::vector<std::string> characteristics;
    std::optional<VisualProfile> expected_visual;

    friend bool operator==(const Subcategory&, const Subcategory&) = default;
};

struct MainCategory {
    std::string name;
    std::string description;
    std::vector<Subcategory> subcategories;

    friend bool operator==(const MainCategory&, const MainCategory&) = default;
};

struct LabelEntry {
    int main_index = 0;
    int sub_index = 0;       // position within the parent
    int flat_index = 0;      // dense 0..total-1 over the whole hierarchy
    std::string main_name;
    std::string sub_name;

    friend bool operator==(const LabelEntry&, const LabelEntry&) = default;
};

// Immutable after construction.
class CategoryHierarchy {
public:
    CategoryHierarchy() = default;
    CategoryHierarchy(std::string version, std::vector<MainCategory> categories);

    const std::string& version() const noexcept { return version_; }
    const std::vector<MainCategory>& categories() const noexcept { return categories_; }
    std::size_t main_count() const noexcept { return categories_.size(); }
    std::size_t subcategory_count() const noexcept { return labels_.size(); }

    const std::vector<LabelEntry>& labels() const noexcept { return labels_; }
    int flat_index(int main_index, int sub_index) const;
    std::optional<LabelEntry> find(std::string_view main_name, std::string_view sub_name) const;

    friend bool operator==(const CategoryHierarchy& a, const CategoryHierarchy& b) {
        return a.version_ == b.version_ && a.categories_ == b.categories_;
    }

private:
    std::string version_;
    std::vector<MainCategory> categories_;
    std::vector<LabelEntry> labels_;
    std::vector<int> offsets_;
};

// Strict parser: unknown keys, duplicate names, empty lists and blank or
// repeated characteristics are rejected with UserError. Fewer than three
// characteristics on a subcategory produces a warning only.
CategoryHierarchy parse_hierarchy(std::string_view config_text,
                                  std::vector<std::string>* warnings = nullptr);
CategoryHierarchy hierarchy_from_json(const nlohmann::json& j,
                                      std::vector<std::string>* warnings = nullptr);
nlohmann::json hierarchy_to_json(const CategoryHierarchy& h);
std::string serialize_hierarchy(const CategoryHierarchy& h);

std::vector<LabelEntry> flatten_labels(const CategoryHierarchy& h);

// "A photo of {main}", "This is a {sub}", then one prompt per characteristic.
std::vector<std::string> build_prompts(const Subcategory& sub, const MainCategory& parent);
inline constexpr std::size_t kTemplatePromptCount = 2;

// Built-in templates used by `init-config`.
CategoryHierarchy food_template();
CategoryHierarchy tree_template();

}  // namespace mnistgen
