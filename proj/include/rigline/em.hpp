#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "rigline/dataset.hpp"
#include "rigline/error.hpp"
#include "rigline/random.hpp"
#include "rigline/text_io.hpp"

namespace rigline {

/// Diagonal-covariance Gaussian mixture.
struct GaussianMixtureModel {
    std::size_t components = 0;
    std::size_t dims = 0;
    std::vector<double> weights;    // K
    std::vector<double> means;      // K x D, row-major
    std::vector<double> variances;  // K x D, row-major
    std::vector<double> loglik_trace;
    bool converged = false;
    std::vector<std::string> warnings;

    std::span<const double> mean(std::size_t k) const { return {means.data() + k * dims, dims}; }
    std::span<const double> variance(std::size_t k) const { return {variances.data() + k * dims, dims}; }
};

struct EmConfig {
    std::size_t components = 2;
    std::uint64_t seed = 0;
    double tol = 1e-6;  // relative change in log-likelihood
    std::size_t max_iter = 200;
};

/// Row-major N x K posterior component memberships.
struct Responsibilities {
    std::size_t rows = 0;
    std::size_t components = 0;
    std::vector<double> values;

    std::span<const double> row(std::size_t i) const { return {values.data() + i * components, components}; }
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double x : v) hi = std::max(hi, x);
    if (!std::isfinite(hi)) return hi;
    double s = 0.0;
    for (double x : v) s += std::exp(x - hi);
    return hi + std::log(s);
}

/// log(pi_k) + log N(x; mu_k, diag(var_k)) for every component.
inline void weighted_log_densities(const GaussianMixtureModel& m, std::span<const double> x, std::span<double> out) {
    constexpr double log_2pi = 1.8378770664093453;  // log(2 pi)
    for (std::size_t k = 0; k < m.components; ++k) {
        auto mu = m.mean(k);
        auto var = m.variance(k);
        double acc = std::log(m.weights[k]);
        for (std::size_t j = 0; j < m.dims; ++j) {
            double diff = x[j] - mu[j];
            acc -= 0.5 * (log_2pi + std::log(var[j]) + diff * diff / var[j]);
        }
        out[k] = acc;
    }
}

inline void check_model_arity(const GaussianMixtureModel& m, const Dataset& d) {
    if (m.dims != d.arity()) {
        throw ShapeError("mixture has " + std::to_string(m.dims) + " dimensions, dataset has " +
                         std::to_string(d.arity()));
    }
}

/// E-step. Fills responsibilities and returns the observed-data log-likelihood.
inline double expectation(const GaussianMixtureModel& m, const Dataset& d, Responsibilities& resp) {
    const auto n = d.rows();
    const auto k = m.components;
    resp.rows = n;
    resp.components = k;
    resp.values.assign(n * k, 0.0);
    std::vector<double> logp(k);
    double loglik = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        weighted_log_densities(m, d.row(i), logp);
        double lse = log_sum_exp(logp);
        loglik += lse;
        for (std::size_t c = 0; c < k; ++c) resp.values[i * k + c] = std::exp(logp[c] - lse);
    }
    return loglik;
}

inline std::vector<double> column_variances(const Dataset& d) {
    const auto n = d.rows();
    const auto dim = d.arity();
    std::vector<double> mean(dim, 0.0), var(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dim; ++j) mean[j] += d.row(i)[j];
    }
    for (auto& v : mean) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            double diff = d.row(i)[j] - mean[j];
            var[j] += diff * diff;
        }
    }
    for (auto& v : var) v /= static_cast<double>(n);
    return var;
}

}  // namespace detail

inline Responsibilities em_responsibilities(const GaussianMixtureModel& m, const Dataset& d) {
    detail::check_model_arity(m, d);
    Responsibilities r;
    detail::expectation(m, d, r);
    return r;
}

/// Sum over rows of log sum_k pi_k N(x_i; mu_k, sigma_k^2).
inline double em_loglik(const GaussianMixtureModel& m, const Dataset& d) {
    detail::check_model_arity(m, d);
    std::vector<double> logp(m.components);
    double total = 0.0;
    for (std::size_t i = 0; i < d.rows(); ++i) {
        detail::weighted_log_densities(m, d.row(i), logp);
        total += detail::log_sum_exp(logp);
    }
    return total;
}

/// Fits a K-component diagonal Gaussian mixture by expectation maximization.
///
/// Means start at K distinct rows picked by a seeded farthest-point sweep
/// (distances scaled by column variance), weights start uniform and every
/// variance starts at its column variance. Variances never drop below
/// 1e-6 times the column variance. Iteration stops when the relative change
/// of the log-likelihood falls below `tol` or after `max_iter` M-steps.
/// loglik_trace[0] is the initial log-likelihood; each later entry follows
/// one M-step, and the last entry is the log-likelihood of the returned model.
inline GaussianMixtureModel em_fit(const Dataset& d, const EmConfig& cfg) {
    const auto n = d.rows();
    const auto dim = d.arity();
    const auto K = cfg.components;
    if (K == 0) throw ConfigError("mixture needs at least one component");
    if (K > n) {
        throw ConfigError("mixture with " + std::to_string(K) + " components needs at least that many rows, got " +
                          std::to_string(n));
    }
    if (dim == 0) throw ShapeError("mixture needs at least one feature");
    if (!(cfg.tol >= 0.0)) throw ConfigError("EM tolerance must be nonnegative");

    const auto col_var = detail::column_variances(d);
    std::vector<double> floor(dim);
    for (std::size_t j = 0; j < dim; ++j) floor[j] = col_var[j] > 0.0 ? 1e-6 * col_var[j] : 1e-12;
    auto scaled_dist2 = [&](std::span<const double> a, std::span<const double> b) {
        double s = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            double diff = a[j] - b[j];
            s += diff * diff / std::max(col_var[j], 1e-300);
        }
        return s;
    };

    auto rng = make_rng(cfg.seed);
    GaussianMixtureModel m;
    m.components = K;
    m.dims = dim;
    m.weights.assign(K, 1.0 / static_cast<double>(K));
    m.means.resize(K * dim);
    m.variances.resize(K * dim);

    std::vector<std::size_t> centers{uniform_index(rng, n)};
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::vector<bool> chosen(n, false);
    chosen[centers[0]] = true;
    while (centers.size() < K) {
        const auto last = d.row(centers.back());
        std::size_t best = n;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], scaled_dist2(d.row(i), last));
            if (!chosen[i] && nearest[i] > best_d) {
                best_d = nearest[i];
                best = i;
            }
        }
        chosen[best] = true;
        centers.push_back(best);
    }
    for (std::size_t k = 0; k < K; ++k) {
        std::copy_n(d.row(centers[k]).begin(), dim, m.means.begin() + static_cast<std::ptrdiff_t>(k * dim));
        for (std::size_t j = 0; j < dim; ++j) m.variances[k * dim + j] = std::max(col_var[j], floor[j]);
    }

    Responsibilities resp;
    double loglik = detail::expectation(m, d, resp);
    m.loglik_trace.push_back(loglik);

    std::vector<double> mass(K);
    for (std::size_t iter = 0; iter < cfg.max_iter; ++iter) {
        // M-step. Sums run in fixed row order so results do not depend on scheduling.
        std::fill(mass.begin(), mass.end(), 0.0);
        std::vector<double> mean_acc(K * dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto r = resp.row(i);
            auto x = d.row(i);
            for (std::size_t k = 0; k < K; ++k) {
                mass[k] += r[k];
                for (std::size_t j = 0; j < dim; ++j) mean_acc[k * dim + j] += r[k] * x[j];
            }
        }
        for (std::size_t k = 0; k < K; ++k) {
            if (mass[k] < 1e-8) continue;
            for (std::size_t j = 0; j < dim; ++j) m.means[k * dim + j] = mean_acc[k * dim + j] / mass[k];
        }
        std::vector<double> var_acc(K * dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto r = resp.row(i);
            auto x = d.row(i);
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t j = 0; j < dim; ++j) {
                    double diff = x[j] - m.means[k * dim + j];
                    var_acc[k * dim + j] += r[k] * diff * diff;
                }
            }
        }
        double total_mass = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            if (mass[k] < 1e-8) {
                auto pick = uniform_index(rng, n);
                std::copy_n(d.row(pick).begin(), dim, m.means.begin() + static_cast<std::ptrdiff_t>(k * dim));
                for (std::size_t j = 0; j < dim; ++j) m.variances[k * dim + j] = std::max(col_var[j], floor[j]);
                mass[k] = 1.0;
                m.warnings.push_back("iteration " + std::to_string(iter + 1) + ": component " + std::to_string(k) +
                                     " collapsed and was re-seeded at row " + std::to_string(pick));
            } else {
                for (std::size_t j = 0; j < dim; ++j) {
                    m.variances[k * dim + j] = std::max(var_acc[k * dim + j] / mass[k], floor[j]);
                }
            }
            total_mass += mass[k];
        }
        for (std::size_t k = 0; k < K; ++k) m.weights[k] = mass[k] / total_mass;

        double next = detail::expectation(m, d, resp);
        m.loglik_trace.push_back(next);
        double change = std::abs(next - loglik) / std::max(std::abs(next), 1e-300);
        loglik = next;
        if (change < cfg.tol) {
            m.converged = true;
            break;
        }
    }
    return m;
}

/// Most responsible component per row; ties go to the lower index.
inline std::vector<std::size_t> em_assign_clusters(const GaussianMixtureModel& m, const Dataset& d) {
    detail::check_model_arity(m, d);
    std::vector<double> logp(m.components);
    std::vector<std::size_t> out(d.rows());
    for (std::size_t i = 0; i < d.rows(); ++i) {
        detail::weighted_log_densities(m, d.row(i), logp);
        out[i] = static_cast<std::size_t>(std::max_element(logp.begin(), logp.end()) - logp.begin());
    }
    return out;
}

/// Labels every row with its most responsible component of a two-component
/// mixture. The component that claims more rows becomes "normal" and the
/// other "failure"; equal sizes name component 0 "normal".
inline Dataset em_assign_labels(const GaussianMixtureModel& m, const Dataset& d) {
    if (m.components != 2) {
        throw ConfigError("label assignment needs a two-component mixture, got " + std::to_string(m.components));
    }
    auto clusters = em_assign_clusters(m, d);
    std::size_t size0 = static_cast<std::size_t>(std::count(clusters.begin(), clusters.end(), std::size_t{0}));
    std::size_t size1 = clusters.size() - size0;
    const std::size_t normal_cluster = size1 > size0 ? 1 : 0;
    std::vector<int> labels(clusters.size());
    for (std::size_t i = 0; i < clusters.size(); ++i) labels[i] = clusters[i] == normal_cluster ? kNormal : kFailure;
    return d.with_labels(std::move(labels));
}

inline void write_mixture(std::ostream& os, const GaussianMixtureModel& m) {
    TokenWriter w(os);
    w.key("mixture").word("diagonal").end();
    w.key("components").count(m.components).end();
    w.key("dims").count(m.dims).end();
    w.key("converged").count(m.converged ? 1 : 0).end();
    w.key("weights").nums(m.weights).end();
    for (std::size_t k = 0; k < m.components; ++k) w.key("mean").nums(m.mean(k)).end();
    for (std::size_t k = 0; k < m.components; ++k) w.key("variance").nums(m.variance(k)).end();
    w.key("trace").count(m.loglik_trace.size()).nums(m.loglik_trace).end();
    w.key("end").word("mixture").end();
}

inline GaussianMixtureModel read_mixture(std::istream& is) {
    TokenReader r(is);
    GaussianMixtureModel m;
    r.expect("mixture");
    r.expect("diagonal");
    r.expect("components");
    m.components = r.count();
    r.expect("dims");
    m.dims = r.count();
    r.expect("converged");
    m.converged = r.count() != 0;
    r.expect("weights");
    m.weights = r.nums(m.components);
    for (std::size_t k = 0; k < m.components; ++k) {
        r.expect("mean");
        auto v = r.nums(m.dims);
        m.means.insert(m.means.end(), v.begin(), v.end());
    }
    for (std::size_t k = 0; k < m.components; ++k) {
        r.expect("variance");
        auto v = r.nums(m.dims);
        for (double x : v) {
            if (!(x > 0.0)) throw ParseError("mixture document: variances must be positive");
        }
        m.variances.insert(m.variances.end(), v.begin(), v.end());
    }
    r.expect("trace");
    m.loglik_trace = r.nums(r.count());
    r.expect("end");
    r.expect("mixture");
    return m;
}

}  // namespace rigline
