#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rigline/classifier.hpp"
#include "rigline/dataset.hpp"
#include "rigline/error.hpp"
#include "rigline/text_io.hpp"

namespace rigline {

/// counts[actual][predicted].
struct ConfusionMatrix {
    std::array<std::array<std::size_t, kClassCount>, kClassCount> counts{};

    std::size_t total() const {
        std::size_t n = 0;
        for (auto& r : counts)
            for (auto c : r) n += c;
        return n;
    }
    std::size_t actual(std::size_t k) const {
        std::size_t n = 0;
        for (auto c : counts[k]) n += c;
        return n;
    }
    std::size_t tp(std::size_t k) const { return counts[k][k]; }
    std::size_t fn(std::size_t k) const { return actual(k) - tp(k); }
    std::size_t fp(std::size_t k) const {
        std::size_t n = 0;
        for (std::size_t a = 0; a < kClassCount; ++a) {
            if (a != k) n += counts[a][k];
        }
        return n;
    }
    std::size_t tn(std::size_t k) const { return total() - tp(k) - fn(k) - fp(k); }
};

struct ClassMetrics {
    double tp_rate = 0.0;
    double fp_rate = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f_measure = 0.0;
    std::optional<double> roc_auc;
};

/// One column of a comparison table: weighted summary plus per-class rows.
struct EvalReport {
    ClassMetrics weighted;
    std::array<ClassMetrics, kClassCount> per_class{};
    std::array<double, kClassCount> class_weights{};
    ConfusionMatrix confusion;
};

namespace detail {
inline double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }
}  // namespace detail

inline ConfusionMatrix confusion(const Classifier& m, const Dataset& test) {
    if (test.empty()) throw EmptyDatasetError("cannot evaluate on an empty test set");
    test.require_labels();
    if (test.arity() != m.arity()) throw ShapeError("test set arity does not match the model");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < test.rows(); ++i) {
        ++cm.counts[static_cast<std::size_t>(test.label(i))][static_cast<std::size_t>(m.predict(test.row(i)))];
    }
    return cm;
}

/// Per-class rates from the standard definitions and their weighted average.
/// Zero denominators yield 0. AUC is left empty.
inline EvalReport metrics(const ConfusionMatrix& cm, std::span<const double> class_weights) {
    if (class_weights.size() != kClassCount) throw ShapeError("need one weight per class");
    EvalReport rep;
    rep.confusion = cm;
    for (std::size_t k = 0; k < kClassCount; ++k) {
        auto& m = rep.per_class[k];
        const double tp = static_cast<double>(cm.tp(k));
        const double fp = static_cast<double>(cm.fp(k));
        const double fn = static_cast<double>(cm.fn(k));
        const double tn = static_cast<double>(cm.tn(k));
        m.tp_rate = detail::ratio(tp, tp + fn);
        m.recall = m.tp_rate;
        m.fp_rate = detail::ratio(fp, fp + tn);
        m.precision = detail::ratio(tp, tp + fp);
        m.f_measure = detail::ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
        rep.class_weights[k] = class_weights[k];
    }
    auto& w = rep.weighted;
    for (std::size_t k = 0; k < kClassCount; ++k) {
        const double wk = class_weights[k];
        w.tp_rate += wk * rep.per_class[k].tp_rate;
        w.fp_rate += wk * rep.per_class[k].fp_rate;
        w.precision += wk * rep.per_class[k].precision;
        w.f_measure += wk * rep.per_class[k].f_measure;
    }
    w.recall = w.tp_rate;
    return rep;
}

/// Instance fractions of each class in a labeled dataset.
inline std::array<double, kClassCount> class_fractions(const Dataset& d) {
    auto counts = d.class_counts();
    std::array<double, kClassCount> w{};
    for (std::size_t k = 0; k < kClassCount; ++k) {
        w[k] = d.empty() ? 0.0 : static_cast<double>(counts[k]) / static_cast<double>(d.rows());
    }
    return w;
}

struct ScoredLabel {
    double score = 0.0;
    int label = 1;  // +1 positive, -1 negative
};

/// P(score+ > score-) + P(tie)/2 via the Mann-Whitney rank sum, with tied
/// scores sharing their average rank.
inline double roc_auc(std::span<const ScoredLabel> scored) {
    std::vector<ScoredLabel> s(scored.begin(), scored.end());
    std::size_t n_pos = 0;
    for (auto& x : s) n_pos += x.label > 0 ? 1 : 0;
    const std::size_t n_neg = s.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw LabelError("AUC is undefined unless both classes are present");
    std::sort(s.begin(), s.end(), [](const ScoredLabel& a, const ScoredLabel& b) { return a.score < b.score; });
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < s.size()) {
        std::size_t j = i;
        while (j < s.size() && s[j].score == s[i].score) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k) {
            if (s[k].label > 0) rank_sum += avg_rank;
        }
        i = j;
    }
    const double np = static_cast<double>(n_pos);
    const double u = rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * static_cast<double>(n_neg));
}

/// Full report. Predictions come from the model's decision rule (argmax, or
/// minimum expected cost for cost-sensitive wrappers); per-class AUC scores
/// each class by its own predicted probability; the summary weights every
/// measure by the test set's class fractions.
inline EvalReport evaluate(const Classifier& m, const Dataset& test) {
    auto cm = confusion(m, test);
    auto weights = class_fractions(test);
    auto rep = metrics(cm, weights);
    std::vector<ProbVector> probs(test.rows());
    for (std::size_t i = 0; i < test.rows(); ++i) probs[i] = m.predict_proba(test.row(i));
    double auc = 0.0;
    for (std::size_t k = 0; k < kClassCount; ++k) {
        std::vector<ScoredLabel> scored(test.rows());
        for (std::size_t i = 0; i < test.rows(); ++i) {
            scored[i] = {probs[i][k], test.label(i) == static_cast<int>(k) ? 1 : -1};
        }
        rep.per_class[k].roc_auc = roc_auc(scored);
        auc += weights[k] * *rep.per_class[k].roc_auc;
    }
    rep.weighted.roc_auc = auc;
    return rep;
}

inline EvalReport evaluate(const TrainedModel& m, const Dataset& test) { return evaluate(*m, test); }

// ---------------------------------------------------------------------------
// Comparison tables

inline constexpr std::array<std::string_view, 6> kMeasureNames{"TP Rate",   "FP Rate",   "Precision",
                                                               "Recall",    "F-Measure", "ROC"};

inline std::array<double, 6> measure_values(const ClassMetrics& m) {
    return {m.tp_rate, m.fp_rate, m.precision, m.recall, m.f_measure, m.roc_auc.value_or(0.0)};
}

struct TableColumn {
    std::string name;
    std::optional<EvalReport> report;
    std::string error;  // set when the cell failed
};

/// Measures as rows, techniques as columns, values rounded to 3 decimals.
struct ComparisonTable {
    std::vector<TableColumn> columns;

    std::string to_csv() const {
        std::ostringstream os;
        os << "Measure";
        for (auto& c : columns) os << ',' << c.name;
        os << '\n';
        for (std::size_t r = 0; r < kMeasureNames.size(); ++r) {
            os << kMeasureNames[r];
            for (auto& c : columns) {
                os << ',';
                if (c.report) os << format_fixed(measure_values(c.report->weighted)[r], 3);
                else os << "ERROR";
            }
            os << '\n';
        }
        return os.str();
    }
};

inline ComparisonTable compare_table(const std::vector<std::pair<std::string, TrainedModel>>& models,
                                     const Dataset& test) {
    if (models.empty()) throw ConfigError("comparison table needs at least one model");
    ComparisonTable t;
    for (auto& [name, m] : models) t.columns.push_back({name, evaluate(*m, test), {}});
    return t;
}

/// Reads a table CSV back into (name, six values) columns; "ERROR" cells become NaN.
inline std::vector<std::pair<std::string, std::array<double, 6>>> parse_table_csv(const std::string& csv) {
    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line)) throw ParseError("empty table");
    auto header = split(line, ',');
    if (header.empty() || header[0] != "Measure") throw ParseError("table header must start with 'Measure'");
    std::vector<std::pair<std::string, std::array<double, 6>>> cols;
    for (std::size_t c = 1; c < header.size(); ++c) cols.push_back({header[c], {}});
    for (std::size_t r = 0; r < kMeasureNames.size(); ++r) {
        if (!std::getline(is, line)) throw ParseError("table is missing measure rows");
        auto cells = split(line, ',');
        if (cells.size() != header.size() || cells[0] != kMeasureNames[r]) throw ParseError("malformed table row");
        for (std::size_t c = 1; c < cells.size(); ++c) {
            cols[c - 1].second[r] =
                cells[c] == "ERROR" ? std::numeric_limits<double>::quiet_NaN() : parse_double(cells[c], "table cell");
        }
    }
    return cols;
}

/// Confusion matrix and per-class measures as plain text.
inline void write_detail(std::ostream& os, const std::string& name, const EvalReport& rep) {
    os << "model: " << name << '\n';
    os << "confusion matrix (rows = actual, columns = predicted)\n";
    os << "          ";
    for (auto n : kClassNames) os << ' ' << n;
    os << '\n';
    for (std::size_t a = 0; a < kClassCount; ++a) {
        os << kClassNames[a];
        for (std::size_t p = 0; p < kClassCount; ++p) os << ' ' << rep.confusion.counts[a][p];
        os << '\n';
    }
    os << "class,weight,tp_rate,fp_rate,precision,recall,f_measure,roc\n";
    auto line = [&](std::string_view label, double weight, const ClassMetrics& m) {
        os << label << ',' << format_fixed(weight, 3);
        for (double v : measure_values(m)) os << ',' << format_fixed(v, 3);
        os << '\n';
    };
    for (std::size_t k = 0; k < kClassCount; ++k) line(kClassNames[k], rep.class_weights[k], rep.per_class[k]);
    line("weighted", 1.0, rep.weighted);
}

}  // namespace rigline
