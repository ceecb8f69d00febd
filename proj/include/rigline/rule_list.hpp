#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "rigline/classifier.hpp"
#include "rigline/dataset.hpp"
#include "rigline/error.hpp"
#include "rigline/random.hpp"
#include "rigline/text_io.hpp"
#include "rigline/tree.hpp"

namespace rigline {

/// x[feature] <= threshold when `less_equal`, x[feature] > threshold otherwise.
struct Condition {
    std::size_t feature = 0;
    double threshold = 0.0;
    bool less_equal = true;

    bool holds(std::span<const double> x) const {
        return less_equal ? x[feature] <= threshold : x[feature] > threshold;
    }
};

/// Conjunction of conditions with the class counts of the rows it took.
/// An empty condition list always matches.
struct Rule {
    std::vector<Condition> conditions;
    std::array<double, kClassCount> counts{};

    bool matches(std::span<const double> x) const {
        for (auto& c : conditions) {
            if (!c.holds(x)) return false;
        }
        return true;
    }
};

struct RuleListConfig {
    std::size_t max_depth = 3;  // depth of each partial tree
    std::size_t min_leaf = 2;
    std::size_t max_rules = 64;  // excluding the default rule

    void validate() const {
        if (max_depth < 1) throw ConfigError("rule list: max_depth must be at least 1");
        if (min_leaf < 1) throw ConfigError("rule list: min_leaf must be at least 1");
    }
};

/// Ordered decision list; the last rule is the unconditional default.
class RuleListModel final : public Classifier {
public:
    RuleListModel(std::size_t dims, std::vector<Rule> rules) : dims_(dims), rules_(std::move(rules)) {
        if (rules_.empty() || !rules_.back().conditions.empty()) {
            throw ShapeError("rule list must end with an unconditional default rule");
        }
        for (auto& r : rules_) {
            for (auto& c : r.conditions) {
                if (c.feature >= dims_) throw ShapeError("rule condition feature out of range");
            }
        }
    }

    std::string_view kind() const override { return "part"; }
    std::size_t arity() const override { return dims_; }

    std::size_t first_match(std::span<const double> x) const {
        check_arity(x);
        for (std::size_t k = 0; k < rules_.size(); ++k) {
            if (rules_[k].matches(x)) return k;
        }
        return rules_.size() - 1;
    }

    ProbVector predict_proba(std::span<const double> x) const override { return laplace(rules_[first_match(x)].counts); }

    const std::vector<Rule>& rules() const { return rules_; }

    void write_body(TokenWriter& w) const override {
        w.key("dims").count(dims_).end();
        w.key("rules").count(rules_.size()).end();
        for (auto& r : rules_) {
            w.key("rule").count(r.conditions.size()).num(r.counts[0]).num(r.counts[1]);
            for (auto& c : r.conditions) w.count(c.feature).word(c.less_equal ? "<=" : ">").num(c.threshold);
            w.end();
        }
    }

    static TrainedModel read_body(TokenReader& r) {
        r.expect("dims");
        const auto dims = r.count();
        r.expect("rules");
        const auto count = r.count();
        std::vector<Rule> rules(count);
        for (auto& rule : rules) {
            r.expect("rule");
            const auto nc = r.count();
            rule.counts[0] = r.num();
            rule.counts[1] = r.num();
            rule.conditions.resize(nc);
            for (auto& c : rule.conditions) {
                c.feature = r.count();
                const auto op = r.word();
                if (op != "<=" && op != ">") throw ParseError("rule condition operator must be '<=' or '>'");
                c.less_equal = op == "<=";
                c.threshold = r.num();
            }
        }
        return std::make_shared<RuleListModel>(dims, std::move(rules));
    }

private:
    std::size_t dims_;
    std::vector<Rule> rules_;
};

namespace detail {

struct LeafPath {
    std::size_t node = 0;
    std::vector<Condition> conditions;
};

inline void collect_leaves(const TreeModel& t, std::size_t k, std::vector<Condition>& path,
                           std::vector<LeafPath>& out) {
    const auto& n = t.nodes()[k];
    if (n.leaf()) {
        out.push_back({k, path});
        return;
    }
    const auto f = static_cast<std::size_t>(n.feature);
    path.push_back({f, n.threshold, true});
    collect_leaves(t, n.left, path, out);
    path.back().less_equal = false;
    collect_leaves(t, n.right, path, out);
    path.pop_back();
}

}  // namespace detail

/// Separate-and-conquer: grow a depth-limited tree on the uncovered rows,
/// keep its leaf covering the most rows (first in depth-first order on
/// ties) as a rule, drop the rows it covers, repeat. Stops when the
/// remainder is pure, the tree cannot split, or max_rules is reached. The
/// default rule carries the counts of whatever remains (of the full data
/// if nothing remains).
inline std::shared_ptr<const RuleListModel> train_rule_list(const Dataset& d, const RuleListConfig& cfg = {}) {
    cfg.validate();
    d.require_labels();
    if (d.empty()) throw EmptyDatasetError("cannot train a rule list on an empty dataset");
    const TreeConfig tree_cfg{cfg.max_depth, cfg.min_leaf, 0};
    auto rng = make_rng(0);  // all features are candidates, so no draws happen
    std::vector<std::size_t> remaining = iota_indices(d.rows());
    std::vector<Rule> rules;
    while (!remaining.empty() && rules.size() < cfg.max_rules) {
        auto tree = grow_tree(d, remaining, tree_cfg, rng);
        if (tree->root().leaf()) break;
        std::vector<detail::LeafPath> leaves;
        std::vector<Condition> path;
        detail::collect_leaves(*tree, 0, path, leaves);
        const detail::LeafPath* best = nullptr;
        double best_cover = -1.0;
        for (auto& lp : leaves) {
            const auto& c = tree->nodes()[lp.node].counts;
            const double cover = c[0] + c[1];
            if (cover > best_cover) {
                best_cover = cover;
                best = &lp;
            }
        }
        Rule rule{best->conditions, tree->nodes()[best->node].counts};
        std::vector<std::size_t> rest;
        for (auto i : remaining) {
            if (!rule.matches(d.row(i))) rest.push_back(i);
        }
        remaining = std::move(rest);
        rules.push_back(std::move(rule));
    }
    Rule fallback;
    const auto& source = remaining.empty() ? iota_indices(d.rows()) : remaining;
    for (auto i : source) fallback.counts[static_cast<std::size_t>(d.label(i))] += 1.0;
    rules.push_back(std::move(fallback));
    return std::make_shared<RuleListModel>(d.arity(), std::move(rules));
}

inline Learner rule_list_learner(RuleListConfig cfg = {}) {
    return Learner{"part", [cfg](const Dataset& d, std::uint64_t) -> TrainedModel { return train_rule_list(d, cfg); }};
}

}  // namespace rigline
