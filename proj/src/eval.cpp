#include "mnistgen/eval.hpp"

#include "mnistgen/error.hpp"
#include "mnistgen/image.hpp"

#include <sstream>

namespace mnistgen {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::int64_t>>& rows) {
    ConfusionMatrix cm(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows.size()) throw UserError("confusion matrix must be square");
        for (std::size_t c = 0; c < rows.size(); ++c) {
            if (rows[r][c] < 0) throw UserError("confusion counts must be non-negative");
            cm.at(r, c) = rows[r][c];
        }
    }
    return cm;
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
}

std::int64_t ConfusionMatrix::support(std::size_t cls) const {
    std::int64_t s = 0;
    for (std::size_t p = 0; p < k_; ++p) s += at(cls, p);
    return s;
}

ConfusionMatrix confusion(const std::vector<int>& actual, const std::vector<int>& predicted,
                          std::size_t classes) {
    if (actual.size() != predicted.size()) {
        throw UserError("length mismatch: " + std::to_string(actual.size()) + " actual labels vs " +
                        std::to_string(predicted.size()) + " predictions");
    }
    if (actual.empty()) throw UserError("confusion: no labels");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < actual.size(); ++i) {
        for (int v : {actual[i], predicted[i]}) {
            if (v < 0 || static_cast<std::size_t>(v) >= classes) {
                throw UserError("label " + std::to_string(v) + " out of range [0," + std::to_string(classes) + ")");
            }
        }
        ++cm.at(static_cast<std::size_t>(actual[i]), static_cast<std::size_t>(predicted[i]));
    }
    return cm;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    const std::int64_t n = cm.total();
    if (cm.classes() == 0 || n < 1) throw UserError("empty confusion matrix");
    MetricsReport r;
    std::int64_t diag = 0;
    for (std::size_t i = 0; i < cm.classes(); ++i) {
        const std::int64_t tp = cm.at(i, i);
        diag += tp;
        std::int64_t col = 0;
        for (std::size_t a = 0; a < cm.classes(); ++a) col += cm.at(a, i);
        ClassMetrics m;
        m.support = cm.support(i);
        if (col > 0) {
            m.precision = static_cast<double>(tp) / static_cast<double>(col);
        } else if (m.support > 0) {
            r.warnings.push_back("class " + std::to_string(i) + " was never predicted; precision set to 0");
        }
        if (m.support > 0) m.recall = static_cast<double>(tp) / static_cast<double>(m.support);
        if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
        const double weight = static_cast<double>(m.support) / static_cast<double>(n);
        r.weighted_precision += weight * m.precision;
        r.weighted_recall += weight * m.recall;
        r.weighted_f1 += weight * m.f1;
        r.per_class.push_back(m);
    }
    r.accuracy = static_cast<double>(diag) / static_cast<double>(n);
    return r;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t i = 0; i < per_class.size(); ++i) {
        classes.push_back({{"class", i},
                           {"precision", per_class[i].precision},
                           {"recall", per_class[i].recall},
                           {"f1", per_class[i].f1},
                           {"support", per_class[i].support}});
    }
    return {{"accuracy", accuracy},
            {"weighted_precision", weighted_precision},
            {"weighted_recall", weighted_recall},
            {"weighted_f1", weighted_f1},
            {"per_class", classes},
            {"warnings", warnings}};
}

PredictionPairs read_predictions_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    PredictionPairs out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto comma = line.find(',');
        const bool pair = comma != std::string::npos;
        if (!out.predicted.empty() && pair == out.actual.empty()) {
            throw UserError(path.string() + ":" + std::to_string(line_no) + ": mixed one- and two-column rows");
        }
        try {
            if (pair) {
                const int a = std::stoi(line.substr(0, comma));
                const int p = std::stoi(line.substr(comma + 1));
                out.actual.push_back(a);
                out.predicted.push_back(p);
            } else {
                out.predicted.push_back(std::stoi(line));
            }
        } catch (const std::exception&) {
            if (line_no == 1 && out.predicted.empty()) continue;  // header
            throw UserError(path.string() + ":" + std::to_string(line_no) + ": non-integer label");
        }
    }
    return out;
}

}  // namespace mnistgen
