#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "rigline/classifier.hpp"
#include "rigline/error.hpp"
#include "rigline/mlp.hpp"
#include "rigline/naive_bayes.hpp"
#include "rigline/rule_list.hpp"
#include "rigline/svm.hpp"
#include "rigline/tree.hpp"

namespace rigline {

/// Hyperparameters for every registry learner. Seeds inside are ignored:
/// the seed passed to Learner::train wins.
struct LearnerSettings {
    TreeConfig tree;
    ForestConfig forest;
    RuleListConfig rules;
    MlpConfig mlp;
    SmoConfig smo;
    /// SMO used as a stack meta learner: linear, since its inputs are
    /// already class probabilities.
    SmoConfig meta_smo = linear_smo();
    std::size_t calibration_folds = 5;

    static SmoConfig linear_smo() {
        SmoConfig c;
        c.kernel.kind = KernelKind::linear;
        return c;
    }
};

inline constexpr std::array<std::string_view, 6> kLearnerIds{"tree", "part", "mlp", "nb", "rf", "smo"};

inline bool is_learner_id(std::string_view id) {
    for (auto k : kLearnerIds) {
        if (k == id) return true;
    }
    return false;
}

/// Column heading used in comparison tables.
inline std::string learner_display_name(std::string_view id) {
    if (id == "tree") return "Tree";
    if (id == "part") return "PART";
    if (id == "mlp") return "MLP";
    if (id == "nb") return "NB";
    if (id == "rf") return "RF";
    if (id == "smo") return "SMO";
    return std::string(id);
}

/// Learner by identifier. MLP and SMO see standardized features.
inline Learner make_learner(std::string_view id, const LearnerSettings& s = {}) {
    if (id == "nb") return naive_bayes_learner();
    if (id == "tree") return cart_learner(s.tree);
    if (id == "rf") return forest_learner(s.forest);
    if (id == "part") return rule_list_learner(s.rules);
    if (id == "mlp") return mlp_learner(s.mlp);
    if (id == "smo") return standardized(smo_learner(s.smo, s.calibration_folds));
    throw ConfigError("unknown learner '" + std::string(id) + "' (expected one of tree, part, mlp, nb, rf, smo)");
}

}  // namespace rigline
