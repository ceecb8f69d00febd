#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rigline/classifier.hpp"
#include "rigline/dataset.hpp"
#include "rigline/random.hpp"

namespace testutil {

inline rigline::Dataset make_dataset(std::vector<double> values, std::vector<int> labels, std::size_t arity) {
    std::vector<rigline::Column> schema;
    for (std::size_t j = 0; j < arity; ++j) schema.push_back({"x" + std::to_string(j), ""});
    return rigline::Dataset(schema, std::move(values), std::move(labels));
}

/// Two Gaussian blobs in `dim` dimensions; failure rows are shifted by `gap`.
inline rigline::Dataset blobs(std::uint64_t seed, std::size_t normal, std::size_t failure, std::size_t dim,
                              double gap = 3.0) {
    auto rng = rigline::make_rng(seed);
    std::normal_distribution<double> g;
    std::vector<double> v;
    std::vector<int> l;
    for (std::size_t i = 0; i < normal + failure; ++i) {
        const bool fail = i >= normal;
        for (std::size_t j = 0; j < dim; ++j) v.push_back(g(rng) + (fail ? gap : 0.0));
        l.push_back(fail ? rigline::kFailure : rigline::kNormal);
    }
    return make_dataset(v, l, dim);
}

/// Returns a fixed posterior read from the first feature: P(failure) = x[0].
class FeatureProbability final : public rigline::Classifier {
public:
    explicit FeatureProbability(std::size_t arity = 1) : arity_(arity) {}
    std::string_view kind() const override { return "feature_probability"; }
    std::size_t arity() const override { return arity_; }
    rigline::ProbVector predict_proba(std::span<const double> x) const override { return {1.0 - x[0], x[0]}; }
    void write_body(rigline::TokenWriter& w) const override { w.key("arity").count(arity_).end(); }

private:
    std::size_t arity_;
};

}  // namespace testutil
