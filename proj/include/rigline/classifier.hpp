#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include "rigline/dataset.hpp"
#include "rigline/error.hpp"
#include "rigline/text_io.hpp"

namespace rigline {

/// Posterior over {normal, failure}.
using ProbVector = std::array<double, kClassCount>;

inline int argmax_class(const ProbVector& p) {
    // Ties go to the lower class index.
    return p[1] > p[0] ? 1 : 0;
}

/// Uniform surface over every trained learner: probabilities, a hard
/// decision, and a tagged text serialization.
class Classifier {
public:
    virtual ~Classifier() = default;

    /// Document tag, e.g. "nb", "cart", "svm".
    virtual std::string_view kind() const = 0;
    /// Feature count expected by predict_proba.
    virtual std::size_t arity() const = 0;
    virtual ProbVector predict_proba(std::span<const double> x) const = 0;
    virtual int predict(std::span<const double> x) const { return argmax_class(predict_proba(x)); }
    /// Writes the body that follows the "model <kind>" line.
    virtual void write_body(TokenWriter& w) const = 0;

    void write(TokenWriter& w) const {
        w.key("model").word(kind()).end();
        write_body(w);
        w.key("end").word(kind()).end();
    }

protected:
    void check_arity(std::span<const double> x) const {
        if (x.size() != arity()) {
            throw ShapeError(std::string(kind()) + ": expected " + std::to_string(arity()) + " features, got " +
                             std::to_string(x.size()));
        }
    }
};

using TrainedModel = std::shared_ptr<const Classifier>;

/// Reads one complete model document (used by composite models for children).
using ModelReader = std::function<TrainedModel(TokenReader&)>;

/// A named training procedure. The seed drives every random choice the
/// learner makes, so (data, seed) -> model is a pure function.
struct Learner {
    std::string id;
    std::function<TrainedModel(const Dataset&, std::uint64_t seed)> train;
};

/// Applies a stored Standardizer before delegating to the wrapped model.
class StandardizedModel final : public Classifier {
public:
    StandardizedModel(Standardizer scaler, TrainedModel inner) : scaler_(std::move(scaler)), inner_(std::move(inner)) {
        if (scaler_.arity() != inner_->arity()) throw ShapeError("standardizer/model arity mismatch");
    }

    std::string_view kind() const override { return "standardized"; }
    std::size_t arity() const override { return scaler_.arity(); }

    ProbVector predict_proba(std::span<const double> x) const override {
        check_arity(x);
        return inner_->predict_proba(scaler_.apply(x));
    }
    int predict(std::span<const double> x) const override {
        check_arity(x);
        return inner_->predict(scaler_.apply(x));
    }

    const Standardizer& scaler() const { return scaler_; }
    const TrainedModel& inner() const { return inner_; }

    void write_body(TokenWriter& w) const override {
        scaler_.write(w);
        inner_->write(w);
    }

    static TrainedModel read_body(TokenReader& r, const ModelReader& read_child) {
        auto scaler = Standardizer::read(r);
        auto inner = read_child(r);
        return std::make_shared<StandardizedModel>(std::move(scaler), std::move(inner));
    }

private:
    Standardizer scaler_;
    TrainedModel inner_;
};

/// Wraps a learner so it is fitted (and later queried) on standardized features.
inline Learner standardized(Learner base) {
    auto train = [inner = base.train](const Dataset& d, std::uint64_t seed) -> TrainedModel {
        auto scaler = Standardizer::fit(d);
        auto model = inner(scaler.apply(d), seed);
        return std::make_shared<StandardizedModel>(std::move(scaler), std::move(model));
    };
    return Learner{base.id, std::move(train)};
}

}  // namespace rigline
