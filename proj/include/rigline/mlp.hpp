#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rigline/classifier.hpp"
#include "rigline/dataset.hpp"
#include "rigline/error.hpp"
#include "rigline/random.hpp"
#include "rigline/text_io.hpp"

namespace rigline {

struct MlpConfig {
    std::size_t hidden = 0;  // 0 = ceil((features + classes) / 2)
    double learning_rate = 0.3;
    double momentum = 0.2;
    std::size_t epochs = 200;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
            throw ConfigError("MLP: learning_rate must be positive");
        }
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("MLP: momentum must lie in [0, 1)");
        if (epochs < 1) throw ConfigError("MLP: epochs must be at least 1");
        if (batch_size < 1) throw ConfigError("MLP: batch_size must be at least 1");
    }

    std::size_t resolved_hidden(std::size_t features) const {
        return hidden != 0 ? hidden : (features + kClassCount + 1) / 2;
    }
};

/// Parameter layout, flat: W1 (hidden x inputs), b1 (hidden),
/// W2 (classes x hidden), b2 (classes).
struct MlpShape {
    std::size_t inputs = 0;
    std::size_t hidden = 0;

    std::size_t w1() const { return 0; }
    std::size_t b1() const { return hidden * inputs; }
    std::size_t w2() const { return b1() + hidden; }
    std::size_t b2() const { return w2() + kClassCount * hidden; }
    std::size_t param_count() const { return b2() + kClassCount; }
};

namespace detail {
inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}
}  // namespace detail

/// Softmax output for one input; `hidden_out` receives the hidden activations.
inline ProbVector mlp_forward(const MlpShape& s, std::span<const double> p, std::span<const double> x,
                              std::span<double> hidden_out) {
    for (std::size_t k = 0; k < s.hidden; ++k) {
        double z = p[s.b1() + k];
        const double* w = p.data() + s.w1() + k * s.inputs;
        for (std::size_t j = 0; j < s.inputs; ++j) z += w[j] * x[j];
        hidden_out[k] = detail::sigmoid(z);
    }
    std::array<double, kClassCount> o{};
    for (std::size_t c = 0; c < kClassCount; ++c) {
        double z = p[s.b2() + c];
        const double* w = p.data() + s.w2() + c * s.hidden;
        for (std::size_t k = 0; k < s.hidden; ++k) z += w[k] * hidden_out[k];
        o[c] = z;
    }
    const double mx = std::max(o[0], o[1]);
    const double e0 = std::exp(o[0] - mx);
    const double e1 = std::exp(o[1] - mx);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

/// Mean cross-entropy over `rows` of `d`; writes its gradient into `grad`.
inline double mlp_loss_gradient(const MlpShape& s, std::span<const double> p, const Dataset& d,
                                std::span<const std::size_t> rows, std::span<double> grad) {
    if (p.size() != s.param_count() || grad.size() != s.param_count()) throw ShapeError("MLP parameter size mismatch");
    std::fill(grad.begin(), grad.end(), 0.0);
    std::vector<double> h(s.hidden), dh(s.hidden);
    double loss = 0.0;
    for (auto i : rows) {
        const auto x = d.row(i);
        const auto y = static_cast<std::size_t>(d.label(i));
        const auto prob = mlp_forward(s, p, x, h);
        loss -= std::log(std::max(prob[y], 1e-300));
        std::array<double, kClassCount> dout{prob[0], prob[1]};
        dout[y] -= 1.0;
        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t c = 0; c < kClassCount; ++c) {
            grad[s.b2() + c] += dout[c];
            double* g = grad.data() + s.w2() + c * s.hidden;
            const double* w = p.data() + s.w2() + c * s.hidden;
            for (std::size_t k = 0; k < s.hidden; ++k) {
                g[k] += dout[c] * h[k];
                dh[k] += dout[c] * w[k];
            }
        }
        for (std::size_t k = 0; k < s.hidden; ++k) {
            const double dz = dh[k] * h[k] * (1.0 - h[k]);
            grad[s.b1() + k] += dz;
            double* g = grad.data() + s.w1() + k * s.inputs;
            for (std::size_t j = 0; j < s.inputs; ++j) g[j] += dz * x[j];
        }
    }
    const double n = static_cast<double>(rows.size());
    for (auto& g : grad) g /= n;
    return loss / n;
}

class MlpModel final : public Classifier {
public:
    MlpModel(MlpShape shape, std::vector<double> params) : shape_(shape), params_(std::move(params)) {
        if (params_.size() != shape_.param_count()) throw ShapeError("MLP parameter count mismatch");
        if (shape_.hidden < 1) throw ShapeError("MLP needs at least one hidden unit");
    }

    std::string_view kind() const override { return "mlp"; }
    std::size_t arity() const override { return shape_.inputs; }

    ProbVector predict_proba(std::span<const double> x) const override {
        check_arity(x);
        std::vector<double> h(shape_.hidden);
        return mlp_forward(shape_, params_, x, h);
    }

    const MlpShape& shape() const { return shape_; }
    const std::vector<double>& params() const { return params_; }

    void write_body(TokenWriter& w) const override {
        w.key("shape").count(shape_.inputs).count(shape_.hidden).end();
        w.key("params").nums(params_).end();
    }

    static TrainedModel read_body(TokenReader& r) {
        r.expect("shape");
        MlpShape s;
        s.inputs = r.count();
        s.hidden = r.count();
        r.expect("params");
        return std::make_shared<MlpModel>(s, r.nums(s.param_count()));
    }

private:
    MlpShape shape_;
    std::vector<double> params_;
};

/// Uniform Glorot-style initialisation per layer.
inline std::vector<double> mlp_initial_params(const MlpShape& s, std::uint64_t seed) {
    auto rng = make_rng(seed);
    std::vector<double> p(s.param_count(), 0.0);
    const double r1 = std::sqrt(6.0 / static_cast<double>(s.inputs + s.hidden));
    const double r2 = std::sqrt(6.0 / static_cast<double>(s.hidden + kClassCount));
    for (std::size_t i = s.w1(); i < s.b1(); ++i) p[i] = r1 * (2.0 * uniform01(rng) - 1.0);
    for (std::size_t i = s.w2(); i < s.b2(); ++i) p[i] = r2 * (2.0 * uniform01(rng) - 1.0);
    return p;
}

/// One sigmoid hidden layer, softmax output, cross-entropy loss; mini-batch
/// gradient descent with momentum over seeded row shuffles. Inputs are used
/// as given (the registry learner standardizes them first).
/// Warm start: `params` seeds the weights (layout of MlpShape for this data).
inline std::shared_ptr<const MlpModel> train_mlp(const Dataset& d, const MlpConfig& cfg, std::vector<double> params) {
    cfg.validate();
    d.require_labels();
    if (d.empty()) throw EmptyDatasetError("cannot train an MLP on an empty dataset");
    const MlpShape s{d.arity(), cfg.resolved_hidden(d.arity())};
    if (params.size() != s.param_count()) throw ShapeError("MLP initial parameter count mismatch");
    std::vector<double> velocity(params.size(), 0.0), grad(params.size(), 0.0);
    auto order = iota_indices(d.rows());
    auto rng = make_rng(derive_seed(cfg.seed, 2));
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_in_place(order, rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const auto len = std::min(cfg.batch_size, order.size() - start);
            std::span<const std::size_t> batch(order.data() + start, len);
            epoch_loss += mlp_loss_gradient(s, params, d, batch, grad) * static_cast<double>(len);
            for (std::size_t i = 0; i < params.size(); ++i) {
                velocity[i] = cfg.momentum * velocity[i] - cfg.learning_rate * grad[i];
                params[i] += velocity[i];
            }
        }
        bool finite = std::isfinite(epoch_loss);
        for (double v : params) finite = finite && std::isfinite(v);
        if (!finite) {
            throw NumericError("MLP training diverged at epoch " + std::to_string(epoch + 1) +
                               " (non-finite loss or weights); lower the learning rate");
        }
    }
    return std::make_shared<MlpModel>(s, std::move(params));
}

inline std::shared_ptr<const MlpModel> train_mlp(const Dataset& d, const MlpConfig& cfg) {
    cfg.validate();
    const MlpShape s{d.arity(), cfg.resolved_hidden(d.arity())};
    return train_mlp(d, cfg, mlp_initial_params(s, derive_seed(cfg.seed, 1)));
}

/// Registry form: standardizes features, then trains the network.
inline Learner mlp_learner(MlpConfig cfg = {}) {
    return standardized(Learner{"mlp", [cfg](const Dataset& d, std::uint64_t seed) -> TrainedModel {
                                    MlpConfig c = cfg;
                                    c.seed = seed;
                                    return train_mlp(d, c);
                                }});
}

}  // namespace rigline
