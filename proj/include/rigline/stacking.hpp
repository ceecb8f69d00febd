#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rigline/classifier.hpp"
#include "rigline/dataset.hpp"
#include "rigline/error.hpp"
#include "rigline/learners.hpp"
#include "rigline/random.hpp"
#include "rigline/svm.hpp"
#include "rigline/text_io.hpp"

namespace rigline {

/// Base learners (in order), meta learner and fold count, by registry id.
struct StackSpec {
    std::vector<std::string> base;
    std::string meta = "smo";
    std::size_t folds = 5;

    void validate() const {
        if (base.empty()) throw ConfigError("stack needs at least one base learner");
        if (folds < 2) throw ConfigError("stack fold count must be at least 2");
        for (auto& b : base) {
            if (!is_learner_id(b)) throw ConfigError("unknown base learner '" + b + "'");
        }
        if (!is_learner_id(meta)) throw ConfigError("unknown meta learner '" + meta + "'");
    }

    /// Canonical spec string, accepted back by parse_stack_spec.
    std::string to_string() const {
        std::string s = "stack:meta=" + meta + ";base=";
        for (std::size_t k = 0; k < base.size(); ++k) s += (k ? "," : "") + base[k];
        return s + ";folds=" + std::to_string(folds);
    }

    bool operator==(const StackSpec&) const = default;
};

/// Named presets Model I .. Model V, each with an SMO meta learner.
inline StackSpec stack_preset(int model) {
    switch (model) {
        case 1: return {{"tree", "mlp"}, "smo", 5};
        case 2: return {{"rf", "nb"}, "smo", 5};
        case 3: return {{"part", "mlp", "nb"}, "smo", 5};
        case 4: return {{"rf", "part"}, "smo", 5};
        case 5: return {{"rf", "nb", "mlp"}, "smo", 5};
        default: throw ConfigError("stack preset must be model1 .. model5");
    }
}

inline std::string stack_preset_name(int model) {
    static constexpr std::array<std::string_view, 5> roman{"I", "II", "III", "IV", "V"};
    if (model < 1 || model > 5) throw ConfigError("stack preset must be model1 .. model5");
    return "Model " + std::string(roman[static_cast<std::size_t>(model - 1)]);
}

/// "model1" .. "model5", or "stack:meta=smo;base=part,mlp,nb;folds=5"
/// (meta and folds optional).
inline StackSpec parse_stack_spec(std::string_view text) {
    const auto t = trim(text);
    if (t.size() == 6 && t.substr(0, 5) == "model" && t[5] >= '1' && t[5] <= '5') return stack_preset(t[5] - '0');
    if (t.substr(0, 6) != "stack:") throw ConfigError("stack spec must be model1..model5 or start with 'stack:'");
    StackSpec spec;
    spec.base.clear();
    bool saw_base = false;
    for (auto& part : split(t.substr(6), ';')) {
        const auto item = trim(part);
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string_view::npos) throw ConfigError("stack spec item '" + std::string(item) + "' lacks '='");
        const auto key = trim(item.substr(0, eq));
        const auto value = trim(item.substr(eq + 1));
        if (key == "meta") {
            spec.meta = std::string(value);
        } else if (key == "base") {
            saw_base = true;
            for (auto& b : split(value, ',')) {
                auto id = trim(b);
                if (!id.empty()) spec.base.emplace_back(id);
            }
        } else if (key == "folds") {
            const auto v = parse_int(value, "stack folds");
            if (v < 2) throw ConfigError("stack fold count must be at least 2");
            spec.folds = static_cast<std::size_t>(v);
        } else {
            throw ConfigError("unknown stack spec key '" + std::string(key) + "'");
        }
    }
    if (!saw_base) throw ConfigError("stack spec needs base=...");
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------

/// Level-1 training data plus the bookkeeping that proves it is out-of-fold.
struct MetaFeatures {
    Dataset data;                   // rows aligned with the input, arity 2 * base count
    std::vector<std::size_t> fold;  // fold index of each input row
    std::size_t folds_used = 0;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<Column> meta_schema(std::span<const Learner> base) {
    std::vector<Column> cols;
    for (std::size_t t = 0; t < base.size(); ++t) {
        for (auto name : kClassNames) cols.push_back({base[t].id + "_" + std::to_string(t) + "_p_" + std::string(name), ""});
    }
    return cols;
}

inline std::uint64_t base_seed(std::uint64_t seed, std::size_t t, std::size_t fold_plus_one) {
    return derive_seed(derive_seed(seed, 0xba5e0000ULL + t), fold_plus_one);
}

}  // namespace detail

/// Stratified k-fold out-of-fold predictions: row i's meta-features come
/// from base models trained on every fold except fold[i]. When the smaller
/// class has fewer rows than `folds`, the fold count drops to that size
/// (with a warning); fewer than 2 rows of a class is an error.
inline MetaFeatures build_meta_features(const Dataset& d, std::span<const Learner> base, std::size_t folds,
                                        std::uint64_t seed) {
    d.require_labels();
    if (base.empty()) throw ConfigError("stack needs at least one base learner");
    if (folds < 2) throw ConfigError("stack fold count must be at least 2");
    const auto counts = d.class_counts();
    const auto smallest = std::min(counts[0], counts[1]);
    if (smallest < 2) throw LabelError("stacking needs at least two rows of each class");
    MetaFeatures out;
    out.folds_used = std::min(folds, smallest);
    if (out.folds_used < folds) {
        out.warnings.push_back("fold count reduced from " + std::to_string(folds) + " to " +
                               std::to_string(out.folds_used) + " (smallest class has " + std::to_string(smallest) +
                               " rows)");
    }
    out.fold = stratified_folds(d, out.folds_used, derive_seed(seed, 0xf01d));
    const auto width = kClassCount * base.size();
    std::vector<double> values(d.rows() * width, 0.0);
    for (std::size_t k = 0; k < out.folds_used; ++k) {
        std::vector<std::size_t> train_idx, test_idx;
        for (std::size_t i = 0; i < d.rows(); ++i) (out.fold[i] == k ? test_idx : train_idx).push_back(i);
        const auto part = d.subset(train_idx);
        for (std::size_t t = 0; t < base.size(); ++t) {
            const auto model = base[t].train(part, detail::base_seed(seed, t, k + 1));
            for (auto i : test_idx) {
                const auto p = model->predict_proba(d.row(i));
                for (std::size_t c = 0; c < kClassCount; ++c) values[i * width + t * kClassCount + c] = p[c];
            }
        }
    }
    out.data = Dataset(detail::meta_schema(base), std::move(values), d.labels(), {}, d.row_ids());
    return out;
}

/// Base models refit on all training rows feeding a meta model trained on
/// their out-of-fold probabilities.
class StackedModel final : public Classifier {
public:
    StackedModel(std::vector<std::string> base_ids, std::vector<TrainedModel> bases, TrainedModel meta,
                 std::vector<std::string> warnings = {})
        : base_ids_(std::move(base_ids)), bases_(std::move(bases)), meta_(std::move(meta)),
          warnings_(std::move(warnings)) {
        if (bases_.empty() || bases_.size() != base_ids_.size()) throw ShapeError("stack base list mismatch");
        for (auto& b : bases_) {
            if (b->arity() != bases_.front()->arity()) throw ShapeError("stack base models disagree on arity");
        }
        if (meta_->arity() != kClassCount * bases_.size()) {
            throw ShapeError("meta model arity must be 2 x base count");
        }
    }

    std::string_view kind() const override { return "stack"; }
    std::size_t arity() const override { return bases_.front()->arity(); }

    /// Concatenated base probability vectors in base order.
    std::vector<double> meta_row(std::span<const double> x) const {
        check_arity(x);
        std::vector<double> z;
        z.reserve(kClassCount * bases_.size());
        for (auto& b : bases_) {
            const auto p = b->predict_proba(x);
            z.insert(z.end(), p.begin(), p.end());
        }
        return z;
    }

    ProbVector predict_proba(std::span<const double> x) const override { return meta_->predict_proba(meta_row(x)); }
    int predict(std::span<const double> x) const override { return meta_->predict(meta_row(x)); }

    const std::vector<std::string>& base_ids() const { return base_ids_; }
    const std::vector<TrainedModel>& bases() const { return bases_; }
    const TrainedModel& meta() const { return meta_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    void write_body(TokenWriter& w) const override {
        w.key("bases").count(bases_.size()).end();
        for (std::size_t t = 0; t < bases_.size(); ++t) {
            w.key("base").word(base_ids_[t]).end();
            bases_[t]->write(w);
        }
        w.key("meta").end();
        meta_->write(w);
    }

    static TrainedModel read_body(TokenReader& r, const ModelReader& read_child) {
        r.expect("bases");
        const auto n = r.count();
        std::vector<std::string> ids;
        std::vector<TrainedModel> bases;
        for (std::size_t t = 0; t < n; ++t) {
            r.expect("base");
            ids.push_back(r.word());
            bases.push_back(read_child(r));
        }
        r.expect("meta");
        auto meta = read_child(r);
        return std::make_shared<StackedModel>(std::move(ids), std::move(bases), std::move(meta));
    }

private:
    std::vector<std::string> base_ids_;
    std::vector<TrainedModel> bases_;
    TrainedModel meta_;
    std::vector<std::string> warnings_;
};

/// Meta learner on build_meta_features output, then every base learner
/// refit on all of `d`. Deterministic per seed.
inline std::shared_ptr<const StackedModel> train_stack(const Dataset& d, std::span<const Learner> base,
                                                       const Learner& meta, std::size_t folds, std::uint64_t seed) {
    auto mf = build_meta_features(d, base, folds, seed);
    auto meta_model = meta.train(mf.data, derive_seed(seed, 0x3e7a));
    std::vector<std::string> ids;
    std::vector<TrainedModel> bases;
    for (std::size_t t = 0; t < base.size(); ++t) {
        ids.push_back(base[t].id);
        bases.push_back(base[t].train(d, detail::base_seed(seed, t, 0)));
    }
    return std::make_shared<StackedModel>(std::move(ids), std::move(bases), std::move(meta_model),
                                          std::move(mf.warnings));
}

inline std::shared_ptr<const StackedModel> train_stack(const Dataset& d, const StackSpec& spec, std::uint64_t seed,
                                                       const LearnerSettings& settings = {}) {
    spec.validate();
    std::vector<Learner> base;
    for (auto& id : spec.base) base.push_back(make_learner(id, settings));
    auto meta_settings = settings;
    meta_settings.smo = settings.meta_smo;
    return train_stack(d, base, make_learner(spec.meta, meta_settings), spec.folds, seed);
}

inline Learner stack_learner(StackSpec spec, LearnerSettings settings = {}) {
    spec.validate();
    return Learner{"stack", [spec, settings](const Dataset& d, std::uint64_t seed) -> TrainedModel {
                       return train_stack(d, spec, seed, settings);
                   }};
}

}  // namespace rigline
