#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rigline/classifier.hpp"
#include "rigline/dataset.hpp"
#include "rigline/error.hpp"
#include "rigline/random.hpp"
#include "rigline/text_io.hpp"

namespace rigline {

struct SmoteConfig {
    std::size_t k_neighbors = 5;
    /// Desired minority / majority count ratio after oversampling.
    double target_ratio = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (k_neighbors < 1) throw ConfigError("SMOTE: k_neighbors must be at least 1");
        if (!(target_ratio > 0.0 && target_ratio <= 1.0)) throw ConfigError("SMOTE: target_ratio must lie in (0, 1]");
    }
};

/// Where one synthetic row came from: row indices into the input dataset
/// and the interpolation gap, so the row equals p + gap * (n - p).
struct SmoteSample {
    std::size_t base = 0;
    std::size_t neighbor = 0;
    double gap = 0.0;
};

struct SmoteResult {
    Dataset data;
    std::vector<SmoteSample> provenance;  // one per appended row, in order
};

namespace detail {

struct ClassRoles {
    int minority = kFailure;
    int majority = kNormal;
    std::size_t minority_count = 0;
    std::size_t majority_count = 0;
};

inline ClassRoles class_roles(const Dataset& d) {
    auto counts = d.class_counts();
    if (counts[0] == 0 || counts[1] == 0) throw LabelError("resampling needs both classes present");
    ClassRoles r;
    // Equal counts: failure is treated as the minority.
    r.minority = counts[kFailure] <= counts[kNormal] ? kFailure : kNormal;
    r.majority = 1 - r.minority;
    r.minority_count = counts[static_cast<std::size_t>(r.minority)];
    r.majority_count = counts[static_cast<std::size_t>(r.majority)];
    return r;
}

}  // namespace detail

/// Synthetic Minority Over-sampling. Appends round(target_ratio * majority)
/// - minority synthetic rows after the original rows. Each one interpolates
/// a random minority row p towards one of its k nearest minority neighbours
/// (Euclidean distance on standardized features, ties by row index) with a
/// uniform gap in [0, 1]. Synthetic rows carry the minority label.
inline SmoteResult smote_with_provenance(const Dataset& d, const SmoteConfig& cfg) {
    cfg.validate();
    auto roles = detail::class_roles(d);
    if (roles.minority_count <= cfg.k_neighbors) {
        throw ConfigError("SMOTE: minority class has " + std::to_string(roles.minority_count) +
                          " rows, needs more than k_neighbors = " + std::to_string(cfg.k_neighbors));
    }
    const auto target = static_cast<std::size_t>(
        std::llround(cfg.target_ratio * static_cast<double>(roles.majority_count)));
    const std::size_t needed = target > roles.minority_count ? target - roles.minority_count : 0;
    if (needed == 0) return {d, {}};

    const auto minority = d.indices_of(roles.minority);
    const auto scaler = Standardizer::fit(d);
    const auto m = minority.size();
    const auto dim = d.arity();
    // Raw differences divided by the column scale: equal to standardized
    // distances, but exact raw-space ties stay exact.
    std::vector<double> z(m * dim);
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t j = 0; j < dim; ++j) z[a * dim + j] = d.row(minority[a])[j];
    }

    // k nearest minority neighbours of every minority row.
    std::vector<std::vector<std::size_t>> knn(m);
    std::vector<std::pair<double, std::size_t>> dist;
    for (std::size_t a = 0; a < m; ++a) {
        dist.clear();
        for (std::size_t b = 0; b < m; ++b) {
            if (a == b) continue;
            double s = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                double diff = (z[a * dim + j] - z[b * dim + j]) / scaler.scale()[j];
                s += diff * diff;
            }
            dist.emplace_back(s, minority[b]);
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(cfg.k_neighbors), dist.end());
        for (std::size_t k = 0; k < cfg.k_neighbors; ++k) knn[a].push_back(dist[k].second);
    }

    auto rng = make_rng(cfg.seed);
    std::vector<double> extra;
    extra.reserve(needed * dim);
    std::vector<SmoteSample> prov;
    prov.reserve(needed);
    for (std::size_t s = 0; s < needed; ++s) {
        const auto a = uniform_index(rng, m);
        const auto nb = knn[a][uniform_index(rng, cfg.k_neighbors)];
        const double gap = uniform01(rng);
        auto p = d.row(minority[a]);
        auto q = d.row(nb);
        for (std::size_t j = 0; j < dim; ++j) extra.push_back(p[j] + gap * (q[j] - p[j]));
        prov.push_back({minority[a], nb, gap});
    }
    std::vector<int> labels(needed, roles.minority);
    return {d.append_rows(extra, labels), std::move(prov)};
}

inline Dataset smote(const Dataset& d, const SmoteConfig& cfg) { return smote_with_provenance(d, cfg).data; }

/// Random undersampling: keeps a seeded uniform subset of the majority class
/// the size of the minority class. Surviving rows keep their original order.
inline Dataset undersample(const Dataset& d, std::uint64_t seed) {
    auto roles = detail::class_roles(d);
    if (roles.minority_count == roles.majority_count) return d;
    auto majority = d.indices_of(roles.majority);
    auto rng = make_rng(seed);
    shuffle_in_place(majority, rng);
    std::vector<bool> keep(d.rows(), false);
    for (std::size_t k = 0; k < roles.minority_count; ++k) keep[majority[k]] = true;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < d.rows(); ++i) {
        if (d.label(i) == roles.minority || keep[i]) idx.push_back(i);
    }
    return d.subset(idx);
}

// ---------------------------------------------------------------------------
// Cost-sensitive prediction

/// cost[actual][predicted]; the diagonal is normally zero.
struct CostMatrix {
    std::array<std::array<double, kClassCount>, kClassCount> cost{{{0.0, 1.0}, {1.0, 0.0}}};

    void validate() const {
        bool any = false;
        for (std::size_t a = 0; a < kClassCount; ++a) {
            for (std::size_t p = 0; p < kClassCount; ++p) {
                if (!std::isfinite(cost[a][p])) throw ConfigError("cost matrix entries must be finite");
                if (a != p && cost[a][p] < 0.0) throw ConfigError("off-diagonal costs must be nonnegative");
                if (a != p && cost[a][p] > 0.0) any = true;
            }
        }
        if (!any) throw ConfigError("cost matrix has no positive misclassification cost");
    }

    /// Off-diagonal form: `normal_as_failure` = cost[normal][failure],
    /// `failure_as_normal` = cost[failure][normal].
    static CostMatrix off_diagonal(double normal_as_failure, double failure_as_normal) {
        CostMatrix cm;
        cm.cost = {{{0.0, normal_as_failure}, {failure_as_normal, 0.0}}};
        cm.validate();
        return cm;
    }

    /// Missing a failure costs majority/minority; a false alarm costs 1.
    static CostMatrix balanced_for(const Dataset& train) {
        auto counts = train.class_counts();
        if (counts[kFailure] == 0 || counts[kNormal] == 0) return off_diagonal(1.0, 1.0);
        auto roles = detail::class_roles(train);
        const double ratio = static_cast<double>(roles.majority_count) / static_cast<double>(roles.minority_count);
        return roles.minority == kFailure ? off_diagonal(1.0, ratio) : off_diagonal(ratio, 1.0);
    }

    std::string to_string() const {
        return format_double(cost[0][0]) + " " + format_double(cost[0][1]) + "\n" + format_double(cost[1][0]) + " " +
               format_double(cost[1][1]) + "\n";
    }
};

/// "a,b" -> off_diagonal(a, b).
inline CostMatrix parse_cost_pair(std::string_view s) {
    auto parts = split(s, ',');
    if (parts.size() != 2) throw ParseError("cost spec must be 'a,b', got '" + std::string(s) + "'");
    return CostMatrix::off_diagonal(parse_double(parts[0], "cost"), parse_double(parts[1], "cost"));
}

/// Two lines of two numbers: row = actual class, column = predicted class.
inline CostMatrix read_cost_matrix(std::istream& in) {
    CostMatrix cm;
    std::string line;
    std::size_t row = 0;
    while (row < kClassCount && std::getline(in, line)) {
        auto t = trim(line);
        if (t.empty()) continue;
        std::vector<double> vals;
        std::string cell;
        std::istringstream ls{std::string(t)};
        while (ls >> cell) vals.push_back(parse_double(cell, "cost matrix"));
        if (vals.size() != kClassCount) throw ParseError("cost matrix rows need two numbers");
        cm.cost[row][0] = vals[0];
        cm.cost[row][1] = vals[1];
        ++row;
    }
    if (row != kClassCount) throw ParseError("cost matrix needs two rows");
    cm.validate();
    return cm;
}

inline CostMatrix load_cost_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open cost matrix '" + path + "'");
    return read_cost_matrix(in);
}

/// Predicts the class with the lowest expected cost under the wrapped
/// model's posterior; probabilities pass through unchanged.
class CostSensitiveModel final : public Classifier {
public:
    CostSensitiveModel(TrainedModel base, CostMatrix cm) : base_(std::move(base)), cm_(cm) { cm_.validate(); }

    std::string_view kind() const override { return "cost"; }
    std::size_t arity() const override { return base_->arity(); }
    ProbVector predict_proba(std::span<const double> x) const override { return base_->predict_proba(x); }

    int predict(std::span<const double> x) const override {
        const auto p = base_->predict_proba(x);
        int best = 0;
        double best_cost = expected_cost(p, 0);
        for (std::size_t c = 1; c < kClassCount; ++c) {
            double v = expected_cost(p, c);
            if (v < best_cost) {
                best_cost = v;
                best = static_cast<int>(c);
            }
        }
        return best;
    }

    double expected_cost(const ProbVector& p, std::size_t predicted) const {
        double s = 0.0;
        for (std::size_t a = 0; a < kClassCount; ++a) s += p[a] * cm_.cost[a][predicted];
        return s;
    }

    const CostMatrix& costs() const { return cm_; }
    const TrainedModel& base() const { return base_; }

    void write_body(TokenWriter& w) const override {
        w.key("costs").num(cm_.cost[0][0]).num(cm_.cost[0][1]).num(cm_.cost[1][0]).num(cm_.cost[1][1]).end();
        base_->write(w);
    }

    static TrainedModel read_body(TokenReader& r, const ModelReader& read_child) {
        r.expect("costs");
        CostMatrix cm;
        cm.cost[0][0] = r.num();
        cm.cost[0][1] = r.num();
        cm.cost[1][0] = r.num();
        cm.cost[1][1] = r.num();
        auto base = read_child(r);
        return std::make_shared<CostSensitiveModel>(std::move(base), cm);
    }

private:
    TrainedModel base_;
    CostMatrix cm_;
};

inline TrainedModel cost_sensitive_wrap(TrainedModel base, const CostMatrix& cm) {
    return std::make_shared<CostSensitiveModel>(std::move(base), cm);
}

/// Learner whose model predicts by minimum expected cost. Without an
/// explicit matrix the costs come from the training class ratio.
inline Learner cost_sensitive(Learner base, std::optional<CostMatrix> cm = std::nullopt) {
    auto train = [inner = base.train, cm](const Dataset& d, std::uint64_t seed) -> TrainedModel {
        auto matrix = cm ? *cm : CostMatrix::balanced_for(d);
        return cost_sensitive_wrap(inner(d, seed), matrix);
    };
    return Learner{base.id, std::move(train)};
}

}  // namespace rigline
