#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rigline/classifier.hpp"
#include "rigline/dataset.hpp"
#include "rigline/error.hpp"
#include "rigline/random.hpp"
#include "rigline/text_io.hpp"

namespace rigline {

struct TreeConfig {
    std::size_t max_depth = 0;  // 0 = unlimited
    std::size_t min_leaf = 1;
    /// Candidate features drawn per node; 0 or >= arity means all features.
    std::size_t features_per_split = 0;

    void validate() const {
        if (min_leaf < 1) throw ConfigError("tree: min_leaf must be at least 1");
    }
};

/// Split node (feature >= 0) or leaf (feature == -1). Rows with
/// x[feature] <= threshold go left.
struct TreeNode {
    std::int64_t feature = -1;
    double threshold = 0.0;
    std::size_t left = 0;
    std::size_t right = 0;
    std::array<double, kClassCount> counts{};

    bool leaf() const { return feature < 0; }
};

/// Laplace-smoothed class probabilities (c + 1) / (n + 2).
inline ProbVector laplace(const std::array<double, kClassCount>& counts) {
    const double n = counts[0] + counts[1];
    return {(counts[0] + 1.0) / (n + 2.0), (counts[1] + 1.0) / (n + 2.0)};
}

inline double gini_impurity(const std::array<double, kClassCount>& counts) {
    const double n = counts[0] + counts[1];
    if (n <= 0.0) return 0.0;
    const double p0 = counts[0] / n;
    const double p1 = counts[1] / n;
    return 1.0 - p0 * p0 - p1 * p1;
}

class TreeModel final : public Classifier {
public:
    TreeModel(std::size_t dims, std::vector<TreeNode> nodes) : dims_(dims), nodes_(std::move(nodes)) {
        if (nodes_.empty()) throw ShapeError("tree has no nodes");
        for (auto& n : nodes_) {
            if (n.leaf()) continue;
            if (static_cast<std::size_t>(n.feature) >= dims_ || n.left >= nodes_.size() ||
                n.right >= nodes_.size() || !std::isfinite(n.threshold)) {
                throw ShapeError("malformed tree node");
            }
        }
    }

    std::string_view kind() const override { return "cart"; }
    std::size_t arity() const override { return dims_; }

    std::size_t leaf_index(std::span<const double> x) const {
        check_arity(x);
        std::size_t k = 0;
        while (!nodes_[k].leaf()) {
            const auto& n = nodes_[k];
            k = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return k;
    }

    ProbVector predict_proba(std::span<const double> x) const override { return laplace(nodes_[leaf_index(x)].counts); }

    const std::vector<TreeNode>& nodes() const { return nodes_; }
    const TreeNode& root() const { return nodes_.front(); }

    std::size_t depth() const { return depth_from(0); }

    void write_body(TokenWriter& w) const override {
        w.key("dims").count(dims_).end();
        w.key("nodes").count(nodes_.size()).end();
        for (auto& n : nodes_) {
            w.key("n").integer(n.feature).num(n.threshold).count(n.left).count(n.right).num(n.counts[0]).num(
                n.counts[1]);
            w.end();
        }
    }

    static std::shared_ptr<const TreeModel> read_tree(TokenReader& r) {
        r.expect("dims");
        const auto dims = r.count();
        r.expect("nodes");
        const auto count = r.count();
        std::vector<TreeNode> nodes(count);
        for (auto& n : nodes) {
            r.expect("n");
            n.feature = r.integer();
            n.threshold = r.num();
            n.left = r.count();
            n.right = r.count();
            n.counts[0] = r.num();
            n.counts[1] = r.num();
        }
        return std::make_shared<TreeModel>(dims, std::move(nodes));
    }

    static TrainedModel read_body(TokenReader& r) { return read_tree(r); }

private:
    std::size_t depth_from(std::size_t k) const {
        const auto& n = nodes_[k];
        if (n.leaf()) return 0;
        return 1 + std::max(depth_from(n.left), depth_from(n.right));
    }

    std::size_t dims_;
    std::vector<TreeNode> nodes_;
};

namespace detail {

struct SplitChoice {
    std::int64_t feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

/// Best Gini split over the candidate features. Thresholds are midpoints
/// between adjacent distinct sorted values; a candidate must improve the
/// best gain by more than 1e-12, so ties keep the lowest feature and then
/// the lowest threshold.
inline SplitChoice best_split(const Dataset& d, std::span<const std::size_t> rows,
                              std::span<const std::size_t> features, std::size_t min_leaf) {
    std::array<double, kClassCount> total{};
    for (auto i : rows) total[static_cast<std::size_t>(d.label(i))] += 1.0;
    const double n = static_cast<double>(rows.size());
    const double parent = gini_impurity(total);
    SplitChoice best;
    best.gain = -1.0;
    std::vector<std::pair<double, int>> col(rows.size());
    for (auto f : features) {
        for (std::size_t k = 0; k < rows.size(); ++k) col[k] = {d.row(rows[k])[f], d.label(rows[k])};
        std::sort(col.begin(), col.end());
        std::array<double, kClassCount> left{};
        for (std::size_t k = 0; k + 1 < col.size(); ++k) {
            left[static_cast<std::size_t>(col[k].second)] += 1.0;
            if (!(col[k].first < col[k + 1].first)) continue;
            const std::size_t nl = k + 1;
            const std::size_t nr = col.size() - nl;
            if (nl < min_leaf || nr < min_leaf) continue;
            const std::array<double, kClassCount> right{total[0] - left[0], total[1] - left[1]};
            const double gain = parent - (static_cast<double>(nl) / n) * gini_impurity(left) -
                                (static_cast<double>(nr) / n) * gini_impurity(right);
            if (gain > best.gain + 1e-12) {
                const double a = col[k].first;
                const double b = col[k + 1].first;
                best = {static_cast<std::int64_t>(f), a + (b - a) / 2.0, gain};
            }
        }
    }
    return best;
}

class TreeBuilder {
public:
    TreeBuilder(const Dataset& d, const TreeConfig& cfg, Rng& rng) : d_(d), cfg_(cfg), rng_(rng) {
        all_features_ = iota_indices(d.arity());
    }

    std::vector<TreeNode> build(std::vector<std::size_t> rows) {
        nodes_.clear();
        grow(std::move(rows), 0);
        return std::move(nodes_);
    }

private:
    std::vector<std::size_t> candidates() {
        const auto D = d_.arity();
        const auto m = cfg_.features_per_split;
        if (m == 0 || m >= D) return all_features_;
        auto f = all_features_;
        for (std::size_t k = 0; k < m; ++k) std::swap(f[k], f[k + uniform_index(rng_, D - k)]);
        f.resize(m);
        std::sort(f.begin(), f.end());
        return f;
    }

    std::size_t grow(std::vector<std::size_t> rows, std::size_t depth) {
        const std::size_t id = nodes_.size();
        nodes_.emplace_back();
        std::array<double, kClassCount> counts{};
        for (auto i : rows) counts[static_cast<std::size_t>(d_.label(i))] += 1.0;
        nodes_[id].counts = counts;
        const bool pure = counts[0] == 0.0 || counts[1] == 0.0;
        const bool depth_cap = cfg_.max_depth != 0 && depth >= cfg_.max_depth;
        if (pure || depth_cap || rows.size() < 2 * cfg_.min_leaf) return id;

        const auto feats = candidates();
        const auto split = best_split(d_, rows, feats, cfg_.min_leaf);
        if (split.feature < 0 || split.gain <= 1e-12) return id;

        std::vector<std::size_t> left, right;
        const auto f = static_cast<std::size_t>(split.feature);
        for (auto i : rows) (d_.row(i)[f] <= split.threshold ? left : right).push_back(i);
        rows.clear();
        rows.shrink_to_fit();
        const auto l = grow(std::move(left), depth + 1);
        const auto r = grow(std::move(right), depth + 1);
        nodes_[id].feature = split.feature;
        nodes_[id].threshold = split.threshold;
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    const Dataset& d_;
    const TreeConfig& cfg_;
    Rng& rng_;
    std::vector<std::size_t> all_features_;
    std::vector<TreeNode> nodes_;
};

}  // namespace detail

/// Greedy Gini CART grown on `rows` (indices into `d`, repeats allowed).
/// Feature subsampling draws from `rng`.
inline std::shared_ptr<const TreeModel> grow_tree(const Dataset& d, std::vector<std::size_t> rows,
                                                  const TreeConfig& cfg, Rng& rng) {
    cfg.validate();
    d.require_labels();
    if (d.empty()) throw EmptyDatasetError("cannot grow a tree on an empty dataset");
    detail::TreeBuilder builder(d, cfg, rng);
    return std::make_shared<TreeModel>(d.arity(), builder.build(std::move(rows)));
}

inline std::shared_ptr<const TreeModel> train_cart(const Dataset& d, const TreeConfig& cfg = {},
                                                   std::uint64_t seed = 0) {
    auto rng = make_rng(seed);
    return grow_tree(d, iota_indices(d.rows()), cfg, rng);
}

inline std::shared_ptr<const TreeModel> train_cart(const Dataset& d, std::size_t max_depth, std::size_t min_leaf) {
    return train_cart(d, TreeConfig{max_depth, min_leaf, 0});
}

// ---------------------------------------------------------------------------
// Random forest

struct ForestConfig {
    std::size_t n_trees = 100;
    std::size_t features_per_split = 0;  // 0 = ceil(sqrt(arity))
    std::size_t max_depth = 0;
    std::size_t min_leaf = 1;
    bool bootstrap = true;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_trees < 1) throw ConfigError("forest: n_trees must be at least 1");
        if (min_leaf < 1) throw ConfigError("forest: min_leaf must be at least 1");
    }
};

class ForestModel final : public Classifier {
public:
    ForestModel(std::size_t dims, std::vector<std::shared_ptr<const TreeModel>> trees,
                std::vector<std::string> warnings = {})
        : dims_(dims), trees_(std::move(trees)), warnings_(std::move(warnings)) {
        if (trees_.empty()) throw ShapeError("forest has no trees");
        for (auto& t : trees_) {
            if (t->arity() != dims_) throw ShapeError("forest tree arity mismatch");
        }
    }

    std::string_view kind() const override { return "forest"; }
    std::size_t arity() const override { return dims_; }

    ProbVector predict_proba(std::span<const double> x) const override {
        check_arity(x);
        ProbVector p{};
        for (auto& t : trees_) {
            auto q = t->predict_proba(x);
            p[0] += q[0];
            p[1] += q[1];
        }
        const double n = static_cast<double>(trees_.size());
        return {p[0] / n, p[1] / n};
    }

    const std::vector<std::shared_ptr<const TreeModel>>& trees() const { return trees_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    void write_body(TokenWriter& w) const override {
        w.key("dims").count(dims_).end();
        w.key("trees").count(trees_.size()).end();
        for (auto& t : trees_) t->write(w);
    }

    static TrainedModel read_body(TokenReader& r) {
        r.expect("dims");
        const auto dims = r.count();
        r.expect("trees");
        const auto count = r.count();
        std::vector<std::shared_ptr<const TreeModel>> trees;
        trees.reserve(count);
        for (std::size_t t = 0; t < count; ++t) {
            r.expect("model");
            r.expect("cart");
            trees.push_back(TreeModel::read_tree(r));
            r.expect("end");
            r.expect("cart");
        }
        return std::make_shared<ForestModel>(dims, std::move(trees));
    }

private:
    std::size_t dims_;
    std::vector<std::shared_ptr<const TreeModel>> trees_;
    std::vector<std::string> warnings_;
};

inline std::size_t default_features_per_split(std::size_t arity) {
    return static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(arity))));
}

/// Bagged CART trees with per-node feature subsampling. Tree t uses the
/// seed derive_seed(cfg.seed, t) for both its bootstrap and its feature
/// draws, so the result does not depend on training order.
inline std::shared_ptr<const ForestModel> train_random_forest(const Dataset& d, const ForestConfig& cfg) {
    cfg.validate();
    d.require_labels();
    if (d.empty()) throw EmptyDatasetError("cannot train a forest on an empty dataset");
    std::vector<std::string> warnings;
    std::size_t m = cfg.features_per_split == 0 ? default_features_per_split(d.arity()) : cfg.features_per_split;
    if (m > d.arity()) {
        warnings.push_back("features_per_split " + std::to_string(m) + " exceeds arity " +
                           std::to_string(d.arity()) + "; clamped");
        m = d.arity();
    }
    const TreeConfig tree_cfg{cfg.max_depth, cfg.min_leaf, m};
    std::vector<std::shared_ptr<const TreeModel>> trees;
    trees.reserve(cfg.n_trees);
    const auto n = d.rows();
    for (std::size_t t = 0; t < cfg.n_trees; ++t) {
        auto rng = make_rng(derive_seed(cfg.seed, t));
        std::vector<std::size_t> rows;
        if (cfg.bootstrap) {
            rows.resize(n);
            for (auto& r : rows) r = uniform_index(rng, n);
        } else {
            rows = iota_indices(n);
        }
        trees.push_back(grow_tree(d, std::move(rows), tree_cfg, rng));
    }
    return std::make_shared<ForestModel>(d.arity(), std::move(trees), std::move(warnings));
}

inline std::shared_ptr<const ForestModel> train_random_forest(const Dataset& d, std::size_t n_trees,
                                                              std::size_t features_per_split, std::uint64_t seed) {
    ForestConfig cfg;
    cfg.n_trees = n_trees;
    cfg.features_per_split = features_per_split;
    cfg.seed = seed;
    return train_random_forest(d, cfg);
}

inline Learner cart_learner(TreeConfig cfg = {}) {
    return Learner{"tree", [cfg](const Dataset& d, std::uint64_t seed) -> TrainedModel {
                       return train_cart(d, cfg, seed);
                   }};
}

inline Learner forest_learner(ForestConfig cfg = {}) {
    return Learner{"rf", [cfg](const Dataset& d, std::uint64_t seed) -> TrainedModel {
                       ForestConfig c = cfg;
                       c.seed = seed;
                       return train_random_forest(d, c);
                   }};
}

}  // namespace rigline
