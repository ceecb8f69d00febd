#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "rigline/classifier.hpp"
#include "rigline/dataset.hpp"
#include "rigline/error.hpp"
#include "rigline/text_io.hpp"

namespace rigline {

/// Gaussian naive Bayes: class priors and one normal density per
/// (class, feature).
class NaiveBayesModel final : public Classifier {
public:
    NaiveBayesModel(std::size_t dims, std::array<double, kClassCount> priors, std::vector<double> means,
                    std::vector<double> variances)
        : dims_(dims), priors_(priors), means_(std::move(means)), variances_(std::move(variances)) {
        if (means_.size() != kClassCount * dims_ || variances_.size() != kClassCount * dims_) {
            throw ShapeError("naive Bayes parameter size mismatch");
        }
    }

    std::string_view kind() const override { return "nb"; }
    std::size_t arity() const override { return dims_; }

    /// log prior + sum of log densities, per class.
    std::array<double, kClassCount> joint_log_likelihood(std::span<const double> x) const {
        check_arity(x);
        std::array<double, kClassCount> lp{};
        for (std::size_t c = 0; c < kClassCount; ++c) {
            double s = priors_[c] > 0.0 ? std::log(priors_[c]) : -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < dims_; ++j) {
                const double var = variances_[c * dims_ + j];
                const double diff = x[j] - means_[c * dims_ + j];
                s += -0.5 * std::log(2.0 * std::numbers::pi * var) - diff * diff / (2.0 * var);
            }
            lp[c] = s;
        }
        return lp;
    }

    ProbVector predict_proba(std::span<const double> x) const override {
        const auto lp = joint_log_likelihood(x);
        const double mx = std::max(lp[0], lp[1]);
        const double e0 = std::exp(lp[0] - mx);
        const double e1 = std::exp(lp[1] - mx);
        return {e0 / (e0 + e1), e1 / (e0 + e1)};
    }

    const std::array<double, kClassCount>& priors() const { return priors_; }
    std::span<const double> mean(std::size_t c) const { return {means_.data() + c * dims_, dims_}; }
    std::span<const double> variance(std::size_t c) const { return {variances_.data() + c * dims_, dims_}; }

    void write_body(TokenWriter& w) const override {
        w.key("dims").count(dims_).end();
        w.key("priors").nums(priors_).end();
        w.key("means").nums(means_).end();
        w.key("variances").nums(variances_).end();
    }

    static TrainedModel read_body(TokenReader& r) {
        r.expect("dims");
        const auto dims = r.count();
        r.expect("priors");
        auto p = r.nums(kClassCount);
        r.expect("means");
        auto means = r.nums(kClassCount * dims);
        r.expect("variances");
        auto vars = r.nums(kClassCount * dims);
        return std::make_shared<NaiveBayesModel>(dims, std::array<double, kClassCount>{p[0], p[1]}, std::move(means),
                                                 std::move(vars));
    }

private:
    std::size_t dims_;
    std::array<double, kClassCount> priors_;
    std::vector<double> means_;      // class-major, kClassCount x dims
    std::vector<double> variances_;  // class-major, kClassCount x dims
};

/// Relative variance floor: per-class variances are kept at or above this
/// fraction of the column's overall variance (and an absolute 1e-12).
inline constexpr double kNaiveBayesVarianceFloor = 1e-9;

/// Maximum-likelihood means and variances per class; priors are class
/// frequencies.
inline std::shared_ptr<const NaiveBayesModel> train_naive_bayes(const Dataset& d) {
    d.require_labels();
    const auto counts = d.class_counts();
    if (counts[0] == 0 || counts[1] == 0) throw LabelError("naive Bayes needs at least one row of each class");
    const auto D = d.arity();
    const double n = static_cast<double>(d.rows());

    std::vector<double> col_mean(D, 0.0), col_var(D, 0.0);
    std::vector<double> means(kClassCount * D, 0.0), vars(kClassCount * D, 0.0);
    for (std::size_t i = 0; i < d.rows(); ++i) {
        const auto c = static_cast<std::size_t>(d.label(i));
        for (std::size_t j = 0; j < D; ++j) {
            col_mean[j] += d.row(i)[j];
            means[c * D + j] += d.row(i)[j];
        }
    }
    for (std::size_t j = 0; j < D; ++j) col_mean[j] /= n;
    for (std::size_t c = 0; c < kClassCount; ++c) {
        for (std::size_t j = 0; j < D; ++j) means[c * D + j] /= static_cast<double>(counts[c]);
    }
    for (std::size_t i = 0; i < d.rows(); ++i) {
        const auto c = static_cast<std::size_t>(d.label(i));
        for (std::size_t j = 0; j < D; ++j) {
            const double a = d.row(i)[j] - col_mean[j];
            const double b = d.row(i)[j] - means[c * D + j];
            col_var[j] += a * a;
            vars[c * D + j] += b * b;
        }
    }
    for (std::size_t c = 0; c < kClassCount; ++c) {
        for (std::size_t j = 0; j < D; ++j) {
            const double floor = std::max(1e-12, kNaiveBayesVarianceFloor * col_var[j] / n);
            vars[c * D + j] = std::max(vars[c * D + j] / static_cast<double>(counts[c]), floor);
        }
    }
    std::array<double, kClassCount> priors{static_cast<double>(counts[0]) / n, static_cast<double>(counts[1]) / n};
    return std::make_shared<NaiveBayesModel>(D, priors, std::move(means), std::move(vars));
}

inline Learner naive_bayes_learner() {
    return Learner{"nb", [](const Dataset& d, std::uint64_t) -> TrainedModel { return train_naive_bayes(d); }};
}

}  // namespace rigline
