#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mnistgen {

// Rows are actual classes, columns predicted.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes = 0);
    static ConfusionMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows);

    std::size_t classes() const noexcept { return k_; }
    std::int64_t& at(std::size_t actual, std::size_t predicted) { return counts_[actual * k_ + predicted]; }
    std::int64_t at(std::size_t actual, std::size_t predicted) const { return counts_[actual * k_ + predicted]; }
    std::int64_t total() const;
    std::int64_t support(std::size_t cls) const;  // row sum

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t k_ = 0;
    std::vector<std::int64_t> counts_;
};

ConfusionMatrix confusion(const std::vector<int>& actual, const std::vector<int>& predicted,
                          std::size_t classes);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::int64_t support = 0;
};

struct MetricsReport {
    double accuracy = 0.0;
    double weighted_precision = 0.0;
    double weighted_recall = 0.0;
    double weighted_f1 = 0.0;
    std::vector<ClassMetrics> per_class;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

// Weighted averages use support/total as weights; a zero denominator in a
// per-class precision, recall or F1 contributes 0 and adds a warning.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

// CSV of "actual,predicted" rows, or bare "predicted" rows (actual then
// stays empty). A non-numeric first line is treated as a header.
struct PredictionPairs {
    std::vector<int> actual;
    std::vector<int> predicted;
};
PredictionPairs read_predictions_csv(const std::filesystem::path& path);

}  // namespace mnistgen
