#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <list>
#include <map>
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

enum class KernelKind { linear, rbf, polynomial };

inline std::string_view kernel_name(KernelKind k) {
    switch (k) {
        case KernelKind::linear: return "linear";
        case KernelKind::rbf: return "rbf";
        case KernelKind::polynomial: return "polynomial";
    }
    return "?";
}

inline KernelKind parse_kernel_kind(std::string_view s) {
    if (s == "linear") return KernelKind::linear;
    if (s == "rbf") return KernelKind::rbf;
    if (s == "polynomial" || s == "poly") return KernelKind::polynomial;
    throw ParseError("unknown kernel '" + std::string(s) + "'");
}

/// k(a, b). A gamma of 0 means "1 / feature count", resolved at training time.
struct KernelSpec {
    KernelKind kind = KernelKind::rbf;
    double gamma = 0.0;
    int degree = 3;
    double coef0 = 0.0;

    void validate() const {
        if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("kernel gamma must be positive");
        if (kind == KernelKind::polynomial && degree < 1) throw ConfigError("polynomial degree must be >= 1");
        if (!std::isfinite(coef0)) throw ConfigError("kernel coef0 must be finite");
    }

    KernelSpec resolved(std::size_t dims) const {
        KernelSpec k = *this;
        if (k.gamma == 0.0) k.gamma = 1.0 / static_cast<double>(std::max<std::size_t>(dims, 1));
        return k;
    }

    double operator()(std::span<const double> a, std::span<const double> b) const {
        switch (kind) {
            case KernelKind::linear: {
                double s = 0.0;
                for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
                return s;
            }
            case KernelKind::rbf: {
                double s = 0.0;
                for (std::size_t j = 0; j < a.size(); ++j) {
                    double diff = a[j] - b[j];
                    s += diff * diff;
                }
                return std::exp(-gamma * s);
            }
            case KernelKind::polynomial: {
                double s = 0.0;
                for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
                return std::pow(gamma * s + coef0, degree);
            }
        }
        return 0.0;
    }
};

struct SmoConfig {
    double C = 1.0;
    double kkt_tol = 1e-3;
    double eps = 1e-6;
    KernelSpec kernel{};
    /// Cap on outer-loop sweeps (all-points or non-bound) before giving up.
    std::size_t max_passes = 10000;
    std::uint64_t seed = 0;
    std::size_t cache_bytes = std::size_t{64} << 20;

    void validate() const {
        if (!(C > 0.0) || !std::isfinite(C)) throw ConfigError("SMO: C must be positive");
        if (!(kkt_tol > 0.0)) throw ConfigError("SMO: kkt_tol must be positive");
        if (!(eps > 0.0)) throw ConfigError("SMO: eps must be positive");
        if (max_passes == 0) throw ConfigError("SMO: max_passes must be positive");
        kernel.validate();
    }
};

/// Trained two-class SVM: f(x) = sum_i alpha_i y_i k(sv_i, x) + b.
/// Only multipliers with alpha_i > 0 are kept.
struct SvmModel {
    KernelSpec kernel;
    double C = 1.0;
    double b = 0.0;
    std::size_t dims = 0;
    std::vector<double> alpha;
    std::vector<int> y;                 // +1 / -1
    std::vector<double> support;        // row-major, alpha.size() x dims
    double dual_objective = 0.0;
    bool converged = true;
    std::size_t sweeps = 0;

    std::size_t support_count() const { return alpha.size(); }
    std::span<const double> support_vector(std::size_t i) const { return {support.data() + i * dims, dims}; }

    double decision_value(std::span<const double> x) const {
        if (x.size() != dims) {
            throw ShapeError("svm: expected " + std::to_string(dims) + " features, got " + std::to_string(x.size()));
        }
        double f = b;
        for (std::size_t i = 0; i < alpha.size(); ++i) f += alpha[i] * y[i] * kernel(support_vector(i), x);
        return f;
    }
};

inline double decision_value(const SvmModel& m, std::span<const double> x) { return m.decision_value(x); }

namespace detail {

/// Least-recently-used cache of full kernel rows under a byte budget.
/// Always holds at least two rows so a pair fetched back to back stays valid.
class KernelRowCache {
public:
    KernelRowCache(std::size_t n, std::size_t bytes) : rows_(n), where_(n) {
        std::size_t per_row = std::max<std::size_t>(n, 1) * sizeof(double);
        capacity_ = std::max<std::size_t>(2, bytes / per_row);
    }

    template <typename Fill>
    const std::vector<double>& get(std::size_t i, Fill&& fill) {
        if (!rows_[i].empty()) {
            lru_.splice(lru_.begin(), lru_, where_[i]);
            ++hits_;
            return rows_[i];
        }
        if (lru_.size() >= capacity_) {
            auto victim = lru_.back();
            lru_.pop_back();
            std::vector<double>().swap(rows_[victim]);
        }
        rows_[i].resize(rows_.size());
        fill(i, rows_[i]);
        lru_.push_front(i);
        where_[i] = lru_.begin();
        ++misses_;
        return rows_[i];
    }

    std::size_t hits() const { return hits_; }
    std::size_t misses() const { return misses_; }

private:
    std::vector<std::vector<double>> rows_;
    std::vector<std::list<std::size_t>::iterator> where_;
    std::list<std::size_t> lru_;
    std::size_t capacity_ = 2;
    std::size_t hits_ = 0;
    std::size_t misses_ = 0;
};

}  // namespace detail

/// Sequential Minimal Optimization over the SVM dual
///
///   max W(a) = sum_i a_i - 1/2 sum_ij y_i y_j k(x_i, x_j) a_i a_j
///   s.t. 0 <= a_i <= C,  sum_i y_i a_i = 0.
///
/// Each step optimizes two multipliers analytically along the segment the
/// box and equality constraints leave them. Pair selection follows Platt's
/// two-loop scheme. Errors E_i = f(x_i) - y_i are cached for non-bound
/// multipliers only; bound ones are recomputed from a kernel row on demand.
class SmoSolver {
public:
    SmoSolver(std::vector<double> x, std::size_t dims, std::vector<int> y, const SmoConfig& cfg)
        : x_(std::move(x)),
          dims_(dims),
          y_(std::move(y)),
          cfg_(cfg),
          n_(y_.size()),
          alpha_(n_, 0.0),
          err_(n_, 0.0),
          err_valid_(n_, false),
          cache_(n_, cfg.cache_bytes),
          rng_(make_rng(cfg.seed)) {
        cfg_.validate();
        cfg_.kernel = cfg_.kernel.resolved(dims_);
        if (x_.size() != n_ * dims_) throw ShapeError("SMO: feature matrix does not match label count");
        bool pos = false, neg = false;
        for (int t : y_) {
            if (t == 1) pos = true;
            else if (t == -1) neg = true;
            else throw LabelError("SMO: targets must be +1 or -1");
        }
        if (!pos || !neg) throw LabelError("SMO: training data must contain both classes");
        diag_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) diag_[i] = cfg_.kernel(point(i), point(i));
    }

    std::size_t size() const { return n_; }
    const SmoConfig& config() const { return cfg_; }
    std::span<const double> alphas() const { return alpha_; }
    double bias() const { return b_; }
    std::span<const int> targets() const { return y_; }
    std::span<const double> point(std::size_t i) const { return {x_.data() + i * dims_, dims_}; }

    double kernel(std::size_t i, std::size_t j) { return row(i)[j]; }

    bool non_bound(std::size_t i) const { return alpha_[i] > 0.0 && alpha_[i] < cfg_.C; }

    /// f(x_i) computed from scratch.
    double output(std::size_t i) {
        const auto& k = row(i);
        double f = b_;
        for (std::size_t j = 0; j < n_; ++j) {
            if (alpha_[j] > 0.0) f += alpha_[j] * y_[j] * k[j];
        }
        return f;
    }

    /// E_i; served from the cache for non-bound multipliers.
    double error(std::size_t i) {
        if (non_bound(i) && err_valid_[i]) return err_[i];
        double e = output(i) - y_[i];
        if (non_bound(i)) {
            err_[i] = e;
            err_valid_[i] = true;
        }
        return e;
    }

    /// Largest |cached E_i - recomputed E_i| over non-bound multipliers.
    double error_cache_deviation() {
        double worst = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
            if (non_bound(i) && err_valid_[i]) worst = std::max(worst, std::abs(err_[i] - (output(i) - y_[i])));
        }
        return worst;
    }

    double equality_residual() const {
        double s = 0.0;
        for (std::size_t i = 0; i < n_; ++i) s += alpha_[i] * y_[i];
        return s;
    }

    double dual_objective() {
        double lin = 0.0, quad = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
            if (alpha_[i] == 0.0) continue;
            lin += alpha_[i];
            const auto& k = row(i);
            for (std::size_t j = 0; j < n_; ++j) {
                if (alpha_[j] != 0.0) quad += alpha_[i] * alpha_[j] * y_[i] * y_[j] * k[j];
            }
        }
        return lin - 0.5 * quad;
    }

    /// Jointly optimizes alpha[i1], alpha[i2]. Returns false (state untouched)
    /// when the pair cannot make progress.
    bool take_step(std::size_t i1, std::size_t i2) {
        if (i1 == i2) return false;
        const double C = cfg_.C;
        const double a1_old = alpha_[i1];
        const double a2_old = alpha_[i2];
        const int y1 = y_[i1];
        const int y2 = y_[i2];
        const double s = y1 * y2;

        double lo = 0.0, hi = 0.0;
        if (y1 != y2) {
            lo = std::max(0.0, a2_old - a1_old);
            hi = std::min(C, C + a2_old - a1_old);
        } else {
            lo = std::max(0.0, a1_old + a2_old - C);
            hi = std::min(C, a1_old + a2_old);
        }
        if (!(lo < hi)) return false;

        const double e1 = error(i1);
        const double e2 = error(i2);
        const double k11 = diag_[i1];
        const double k22 = diag_[i2];
        const double k12 = kernel(i1, i2);
        const double eta = k11 + k22 - 2.0 * k12;

        double a2 = 0.0;
        if (eta > 0.0) {
            a2 = std::clamp(a2_old + y2 * (e1 - e2) / eta, lo, hi);
        } else {
            // Objective restricted to the segment, as a function of a2.
            const double v1 = e1 + y1 - b_ - a1_old * y1 * k11 - a2_old * y2 * k12;
            const double v2 = e2 + y2 - b_ - a1_old * y1 * k12 - a2_old * y2 * k22;
            auto segment_objective = [&](double a2c) {
                double a1c = a1_old + s * (a2_old - a2c);
                return a1c + a2c - 0.5 * (k11 * a1c * a1c + k22 * a2c * a2c + 2.0 * s * k12 * a1c * a2c) -
                       y1 * a1c * v1 - y2 * a2c * v2;
            };
            const double lobj = segment_objective(lo);
            const double hobj = segment_objective(hi);
            if (lobj > hobj + cfg_.eps) a2 = lo;
            else if (lobj < hobj - cfg_.eps) a2 = hi;
            else a2 = a2_old;
        }
        const double snap = 1e-12 * C;
        if (a2 < snap) a2 = 0.0;
        else if (a2 > C - snap) a2 = C;

        if (std::abs(a2 - a2_old) < cfg_.eps * (a2 + a2_old + cfg_.eps)) return false;

        double a1 = a1_old + s * (a2_old - a2);
        if (a1 < snap) {
            a2 += s * a1;
            a1 = 0.0;
        } else if (a1 > C - snap) {
            a2 += s * (a1 - C);
            a1 = C;
        }
        if (a2 < snap) a2 = 0.0;
        else if (a2 > C - snap) a2 = C;

        const double d1 = y1 * (a1 - a1_old);
        const double d2 = y2 * (a2 - a2_old);
        const double b1 = b_ - e1 - d1 * k11 - d2 * k12;
        const double b2 = b_ - e2 - d1 * k12 - d2 * k22;
        double b_new = 0.0;
        if (a1 > 0.0 && a1 < C) b_new = b1;
        else if (a2 > 0.0 && a2 < C) b_new = b2;
        else b_new = 0.5 * (b1 + b2);
        const double db = b_new - b_;

        // Refresh cached errors of non-bound points (including the pair).
        // The cache keeps at least two rows, so r1 survives fetching r2.
        const auto& r1 = row(i1);
        const auto& r2 = row(i2);
        alpha_[i1] = a1;
        alpha_[i2] = a2;
        b_ = b_new;
        for (std::size_t i = 0; i < n_; ++i) {
            if (i == i1 || i == i2) continue;
            if (non_bound(i) && err_valid_[i]) err_[i] += d1 * r1[i] + d2 * r2[i] + db;
        }
        err_[i1] = e1 + d1 * k11 + d2 * k12 + db;
        err_[i2] = e2 + d1 * k12 + d2 * k22 + db;
        err_valid_[i1] = non_bound(i1);
        err_valid_[i2] = non_bound(i2);
        ++steps_;
        return true;
    }

    /// Checks i2 against the KKT conditions and, when violated, searches
    /// for a partner: largest |E1 - E2| among non-bound points, then every
    /// non-bound point from a random start, then every point from a random start.
    bool examine_example(std::size_t i2) {
        const int y2 = y_[i2];
        const double a2 = alpha_[i2];
        const double e2 = error(i2);
        const double r2 = e2 * y2;
        const double tol = cfg_.kkt_tol;
        if (!((r2 < -tol && a2 < cfg_.C) || (r2 > tol && a2 > 0.0))) return false;

        std::size_t nb_count = 0;
        std::size_t best = n_;
        double best_gap = -1.0;
        for (std::size_t i = 0; i < n_; ++i) {
            if (!non_bound(i)) continue;
            ++nb_count;
            double gap = std::abs(error(i) - e2);
            if (gap > best_gap) {
                best_gap = gap;
                best = i;
            }
        }
        if (nb_count > 1 && best != n_ && take_step(best, i2)) return true;

        if (nb_count > 0) {
            const auto start = uniform_index(rng_, n_);
            for (std::size_t k = 0; k < n_; ++k) {
                auto i1 = (start + k) % n_;
                if (non_bound(i1) && take_step(i1, i2)) return true;
            }
        }
        const auto start = uniform_index(rng_, n_);
        for (std::size_t k = 0; k < n_; ++k) {
            if (take_step((start + k) % n_, i2)) return true;
        }
        return false;
    }

    /// Outer loop: alternate full sweeps and non-bound sweeps until a full
    /// sweep changes nothing. Returns false if max_passes ran out first.
    bool run() {
        bool examine_all = true;
        std::size_t changed = 0;
        while (changed > 0 || examine_all) {
            if (sweeps_ >= cfg_.max_passes) {
                converged_ = false;
                return false;
            }
            ++sweeps_;
            changed = 0;
            for (std::size_t i = 0; i < n_; ++i) {
                if (examine_all || non_bound(i)) changed += examine_example(i) ? 1 : 0;
            }
            if (examine_all && changed == 0 && refit_bias()) {
                // b moved into its KKT-consistent range; sweep everything once more.
                continue;
            }
            if (examine_all) examine_all = false;
            else if (changed == 0) examine_all = true;
        }
        converged_ = true;
        return true;
    }

    /// With every multiplier at a bound, the step rule leaves b anywhere in a
    /// range of equally optimal values, and some of them break the KKT
    /// conditions of bound points. Moves b to the middle of the range
    /// implied by the current multipliers. Returns true if b changed.
    bool refit_bias() {
        double lo = -std::numeric_limits<double>::infinity();
        double hi = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n_; ++i) {
            const double g = output(i) - b_;
            const int y = y_[i];
            if (non_bound(i)) return false;
            if ((alpha_[i] <= 0.0) == (y > 0)) lo = std::max(lo, y - g);
            else hi = std::min(hi, y - g);
        }
        if (!(lo <= hi) || (b_ >= lo && b_ <= hi)) return false;
        const double mid = std::isfinite(lo) && std::isfinite(hi) ? 0.5 * (lo + hi) : (std::isfinite(lo) ? lo : hi);
        if (mid == b_) return false;
        b_ = mid;
        std::fill(err_valid_.begin(), err_valid_.end(), false);
        return true;
    }

    std::size_t steps() const { return steps_; }
    std::size_t sweeps() const { return sweeps_; }

    SvmModel model() {
        SvmModel m;
        m.kernel = cfg_.kernel;
        m.C = cfg_.C;
        m.b = b_;
        m.dims = dims_;
        for (std::size_t i = 0; i < n_; ++i) {
            if (alpha_[i] <= 0.0) continue;
            m.alpha.push_back(alpha_[i]);
            m.y.push_back(y_[i]);
            auto p = point(i);
            m.support.insert(m.support.end(), p.begin(), p.end());
        }
        m.dual_objective = dual_objective();
        m.converged = converged_;
        m.sweeps = sweeps_;
        return m;
    }

private:
    const std::vector<double>& row(std::size_t i) {
        return cache_.get(i, [this](std::size_t r, std::vector<double>& out) {
            auto xr = point(r);
            for (std::size_t j = 0; j < n_; ++j) out[j] = cfg_.kernel(xr, point(j));
        });
    }

    std::vector<double> x_;
    std::size_t dims_;
    std::vector<int> y_;
    SmoConfig cfg_;
    std::size_t n_;
    std::vector<double> alpha_;
    double b_ = 0.0;
    std::vector<double> err_;
    std::vector<bool> err_valid_;
    std::vector<double> diag_;
    detail::KernelRowCache cache_;
    Rng rng_;
    std::size_t steps_ = 0;
    std::size_t sweeps_ = 0;
    bool converged_ = false;
};

inline std::vector<int> svm_targets(const Dataset& d) {
    d.require_labels();
    std::vector<int> y(d.rows());
    for (std::size_t i = 0; i < d.rows(); ++i) y[i] = svm_target(d.label(i));
    return y;
}

/// Trains on a labeled dataset (normal -> +1, failure -> -1).
inline SvmModel smo_train(const Dataset& d, const SmoConfig& cfg) {
    auto counts = d.class_counts();
    if (counts[0] == 0 || counts[1] == 0) throw LabelError("SMO: training data must contain both classes");
    SmoSolver solver(d.values(), d.arity(), svm_targets(d), cfg);
    solver.run();
    return solver.model();
}

/// Rows violating each KKT implication beyond tol:
///   alpha = 0      => y f(x) >= 1
///   0 < alpha < C  => y f(x) == 1
///   alpha = C      => y f(x) <= 1
struct KktReport {
    std::size_t at_lower = 0;
    std::size_t interior = 0;
    std::size_t at_upper = 0;

    std::size_t total() const { return at_lower + interior + at_upper; }
};

/// Checks the training set `d` against a model. Rows are matched to support
/// vectors by identical (features, class); unmatched rows have alpha = 0.
inline KktReport kkt_report(const SvmModel& m, const Dataset& d, double tol) {
    if (d.arity() != m.dims) throw ShapeError("kkt_report: dataset arity does not match the model");
    std::map<std::pair<int, std::vector<double>>, std::vector<double>> pool;
    for (std::size_t i = 0; i < m.support_count(); ++i) {
        auto sv = m.support_vector(i);
        pool[{m.y[i], std::vector<double>(sv.begin(), sv.end())}].push_back(m.alpha[i]);
    }
    KktReport rep;
    for (std::size_t i = 0; i < d.rows(); ++i) {
        const int y = svm_target(d.label(i));
        auto x = d.row(i);
        double a = 0.0;
        auto it = pool.find({y, std::vector<double>(x.begin(), x.end())});
        if (it != pool.end() && !it->second.empty()) {
            a = it->second.back();
            it->second.pop_back();
        }
        const double r = y * m.decision_value(x) - 1.0;
        if (a <= 0.0) {
            if (r < -tol) ++rep.at_lower;
        } else if (a >= m.C) {
            if (r > tol) ++rep.at_upper;
        } else if (std::abs(r) > tol) {
            ++rep.interior;
        }
    }
    return rep;
}

inline void write_svm(TokenWriter& w, const SvmModel& m) {
    w.key("kernel").word(kernel_name(m.kernel.kind)).num(m.kernel.gamma).integer(m.kernel.degree).num(m.kernel.coef0);
    w.end();
    w.key("C").num(m.C).end();
    w.key("b").num(m.b).end();
    w.key("dual_objective").num(m.dual_objective).end();
    w.key("converged").count(m.converged ? 1 : 0).count(m.sweeps).end();
    w.key("dims").count(m.dims).end();
    w.key("support_vectors").count(m.support_count()).end();
    for (std::size_t i = 0; i < m.support_count(); ++i) {
        w.key("sv").num(m.alpha[i]).integer(m.y[i]).nums(m.support_vector(i)).end();
    }
}

inline SvmModel read_svm(TokenReader& r) {
    SvmModel m;
    r.expect("kernel");
    m.kernel.kind = parse_kernel_kind(r.word());
    m.kernel.gamma = r.num();
    m.kernel.degree = static_cast<int>(r.integer());
    m.kernel.coef0 = r.num();
    r.expect("C");
    m.C = r.num();
    r.expect("b");
    m.b = r.num();
    r.expect("dual_objective");
    m.dual_objective = r.num();
    r.expect("converged");
    m.converged = r.count() != 0;
    m.sweeps = r.count();
    r.expect("dims");
    m.dims = r.count();
    r.expect("support_vectors");
    const auto n = r.count();
    for (std::size_t i = 0; i < n; ++i) {
        r.expect("sv");
        m.alpha.push_back(r.num());
        auto y = r.integer();
        if (y != 1 && y != -1) throw ParseError("svm document: targets must be +1 or -1");
        m.y.push_back(static_cast<int>(y));
        auto v = r.nums(m.dims);
        m.support.insert(m.support.end(), v.begin(), v.end());
    }
    return m;
}

// ---------------------------------------------------------------------------
// Probability calibration

/// P(+1 | f) = 1 / (1 + exp(A f + B)).
struct Sigmoid {
    double A = 0.0;
    double B = 0.0;

    double operator()(double f) const {
        double z = A * f + B;
        return z >= 0.0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
    }
};

/// Negative log-likelihood of a sigmoid against Platt's smoothed targets
/// ((N+ + 1)/(N+ + 2) for positives, 1/(N- + 2) for negatives).
inline double sigmoid_nll(const Sigmoid& s, std::span<const double> f, std::span<const int> y) {
    double n_pos = 0, n_neg = 0;
    for (int t : y) (t > 0 ? n_pos : n_neg) += 1;
    const double hi = (n_pos + 1.0) / (n_pos + 2.0);
    const double lo = 1.0 / (n_neg + 2.0);
    double nll = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double t = y[i] > 0 ? hi : lo;
        const double z = s.A * f[i] + s.B;
        // -[t log p + (1-t) log(1-p)] with p = 1/(1+exp(z)), written stably.
        nll += z >= 0.0 ? t * z + std::log1p(std::exp(-z)) : (t - 1.0) * z + std::log1p(std::exp(z));
    }
    return nll;
}

/// Maximum-likelihood sigmoid fit (Newton's method with backtracking).
inline Sigmoid fit_sigmoid(std::span<const double> f, std::span<const int> y) {
    double n_pos = 0, n_neg = 0;
    for (int t : y) (t > 0 ? n_pos : n_neg) += 1;
    const double hi = (n_pos + 1.0) / (n_pos + 2.0);
    const double lo = 1.0 / (n_neg + 2.0);
    std::vector<double> t(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) t[i] = y[i] > 0 ? hi : lo;

    Sigmoid s{0.0, std::log((n_neg + 1.0) / (n_pos + 1.0))};
    double fval = sigmoid_nll(s, f, y);
    constexpr double min_step = 1e-10;
    constexpr double sigma = 1e-12;
    for (int it = 0; it < 100; ++it) {
        double h11 = sigma, h22 = sigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double z = f[i] * s.A + s.B;
            double p = 0.0, q = 0.0;
            if (z >= 0.0) {
                p = std::exp(-z) / (1.0 + std::exp(-z));
                q = 1.0 / (1.0 + std::exp(-z));
            } else {
                p = 1.0 / (1.0 + std::exp(z));
                q = std::exp(z) / (1.0 + std::exp(z));
            }
            const double d2 = p * q;
            h11 += f[i] * f[i] * d2;
            h22 += d2;
            h21 += f[i] * d2;
            const double d1 = t[i] - p;
            g1 += f[i] * d1;
            g2 += d1;
        }
        if (std::abs(g1) < 1e-5 && std::abs(g2) < 1e-5) break;
        const double det = h11 * h22 - h21 * h21;
        const double dA = -(h22 * g1 - h21 * g2) / det;
        const double dB = -(-h21 * g1 + h11 * g2) / det;
        const double gd = g1 * dA + g2 * dB;
        double step = 1.0;
        bool moved = false;
        while (step >= min_step) {
            Sigmoid cand{s.A + step * dA, s.B + step * dB};
            double nf = sigmoid_nll(cand, f, y);
            if (nf < fval + 1e-4 * step * gd) {
                s = cand;
                fval = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if (!moved) break;
    }
    return s;
}

/// Deterministic stratified fold assignment: each class is shuffled and dealt
/// round-robin, so every fold gets floor/ceil of each class count.
inline std::vector<std::size_t> stratified_folds(const Dataset& d, std::size_t folds, std::uint64_t seed) {
    if (folds < 2) throw ConfigError("fold count must be at least 2");
    std::vector<std::size_t> fold(d.rows(), 0);
    auto rng = make_rng(seed);
    std::size_t offset = 0;
    for (std::size_t c = 0; c < kClassCount; ++c) {
        auto idx = d.indices_of(static_cast<int>(c));
        shuffle_in_place(idx, rng);
        for (std::size_t k = 0; k < idx.size(); ++k) fold[idx[k]] = (offset + k) % folds;
        offset += idx.size();
    }
    return fold;
}

/// SVM plus a probability sigmoid over its decision value.
class CalibratedSvm final : public Classifier {
public:
    CalibratedSvm(SvmModel svm, Sigmoid sigmoid, bool sign_only = false)
        : svm_(std::move(svm)), sigmoid_(sigmoid), sign_only_(sign_only) {}

    std::string_view kind() const override { return "svm"; }
    std::size_t arity() const override { return svm_.dims; }

    ProbVector predict_proba(std::span<const double> x) const override {
        check_arity(x);
        const double f = svm_.decision_value(x);
        const double p = sign_only_ ? (f >= 0.0 ? 1.0 : 0.0) : sigmoid_(f);
        return {p, 1.0 - p};
    }

    const SvmModel& svm() const { return svm_; }
    const Sigmoid& sigmoid() const { return sigmoid_; }
    /// True when calibration fell back to hard {0, 1} probabilities.
    bool sign_only() const { return sign_only_; }

    void write_body(TokenWriter& w) const override {
        write_svm(w, svm_);
        w.key("sigmoid").num(sigmoid_.A).num(sigmoid_.B).count(sign_only_ ? 1 : 0).end();
    }

    static TrainedModel read_body(TokenReader& r) {
        auto svm = read_svm(r);
        r.expect("sigmoid");
        Sigmoid s;
        s.A = r.num();
        s.B = r.num();
        bool sign_only = r.count() != 0;
        return std::make_shared<CalibratedSvm>(std::move(svm), s, sign_only);
    }

private:
    SvmModel svm_;
    Sigmoid sigmoid_;
    bool sign_only_;
};

/// Fits the probability sigmoid for `m` on out-of-fold decision values:
/// `d` is split into stratified folds, an SVM is trained (with `cfg`) on
/// each fold's complement and scores the held-out rows. If some fold
/// complement holds only one class the model falls back to sign-based
/// {0, 1} probabilities and is flagged.
inline std::shared_ptr<const CalibratedSvm> calibrate_probability(const SvmModel& m, const Dataset& d,
                                                                  const SmoConfig& cfg, std::size_t folds = 5) {
    d.require_labels();
    auto counts = d.class_counts();
    const std::size_t usable = std::min({folds, counts[0], counts[1]});
    if (usable < 2) return std::make_shared<CalibratedSvm>(m, Sigmoid{}, true);
    auto fold = stratified_folds(d, usable, derive_seed(cfg.seed, 0xca11b));
    std::vector<double> f(d.rows(), 0.0);
    for (std::size_t k = 0; k < usable; ++k) {
        std::vector<std::size_t> train_idx, test_idx;
        for (std::size_t i = 0; i < d.rows(); ++i) (fold[i] == k ? test_idx : train_idx).push_back(i);
        auto part = d.subset(train_idx);
        auto pc = part.class_counts();
        if (pc[0] == 0 || pc[1] == 0) return std::make_shared<CalibratedSvm>(m, Sigmoid{}, true);
        SmoConfig fold_cfg = cfg;
        fold_cfg.seed = derive_seed(cfg.seed, k + 1);
        auto fold_model = smo_train(part, fold_cfg);
        for (auto i : test_idx) f[i] = fold_model.decision_value(d.row(i));
    }
    auto y = svm_targets(d);
    return std::make_shared<CalibratedSvm>(m, fit_sigmoid(f, y), false);
}

/// SMO learner with probability output (features are used as given).
inline Learner smo_learner(SmoConfig cfg = {}, std::size_t calibration_folds = 5) {
    return Learner{"smo", [cfg, calibration_folds](const Dataset& d, std::uint64_t seed) -> TrainedModel {
                       SmoConfig c = cfg;
                       c.seed = seed;
                       auto m = smo_train(d, c);
                       return calibrate_probability(m, d, c, calibration_folds);
                   }};
}

}  // namespace rigline
