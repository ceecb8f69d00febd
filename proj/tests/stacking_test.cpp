#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "rigline/evaluation.hpp"
#include "rigline/model_io.hpp"
#include "rigline/stacking.hpp"
#include "test_util.hpp"

using namespace rigline;
using testutil::blobs;
using testutil::make_dataset;

namespace {

/// Emits P(failure) = 1 exactly when the row was in its training data.
class MembershipModel final : public Classifier {
public:
    MembershipModel(std::size_t arity, std::set<std::vector<double>> seen) : arity_(arity), seen_(std::move(seen)) {}
    std::string_view kind() const override { return "membership"; }
    std::size_t arity() const override { return arity_; }
    ProbVector predict_proba(std::span<const double> x) const override {
        const bool hit = seen_.count(std::vector<double>(x.begin(), x.end())) > 0;
        return hit ? ProbVector{0.0, 1.0} : ProbVector{1.0, 0.0};
    }
    void write_body(TokenWriter&) const override {}

private:
    std::size_t arity_;
    std::set<std::vector<double>> seen_;
};

Learner membership_learner() {
    return Learner{"spy", [](const Dataset& d, std::uint64_t) -> TrainedModel {
                       std::set<std::vector<double>> seen;
                       for (std::size_t i = 0; i < d.rows(); ++i) seen.insert({d.row(i).begin(), d.row(i).end()});
                       return std::make_shared<MembershipModel>(d.arity(), std::move(seen));
                   }};
}

/// Perfect plug-in: the last feature column carries the true class.
Learner label_column_learner() {
    return Learner{"oracle", [](const Dataset& d, std::uint64_t) -> TrainedModel {
                       struct Oracle final : Classifier {
                           std::size_t n;
                           explicit Oracle(std::size_t a) : n(a) {}
                           std::string_view kind() const override { return "oracle"; }
                           std::size_t arity() const override { return n; }
                           ProbVector predict_proba(std::span<const double> x) const override {
                               return x[n - 1] > 0.5 ? ProbVector{0.0, 1.0} : ProbVector{1.0, 0.0};
                           }
                           void write_body(TokenWriter&) const override {}
                       };
                       return std::make_shared<Oracle>(d.arity());
                   }};
}

Dataset with_label_column(const Dataset& d) {
    std::vector<double> v;
    for (std::size_t i = 0; i < d.rows(); ++i) {
        v.insert(v.end(), d.row(i).begin(), d.row(i).end());
        v.push_back(static_cast<double>(d.label(i)));
    }
    return make_dataset(v, d.labels(), d.arity() + 1);
}

double accuracy(const Classifier& m, const Dataset& d) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < d.rows(); ++i) ok += m.predict(d.row(i)) == d.label(i) ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(d.rows());
}

LearnerSettings fast_settings() {
    LearnerSettings s;
    s.forest.n_trees = 10;
    s.mlp.epochs = 20;
    return s;
}

}  // namespace

TEST(StackSpecParse, PresetsMatchModelDefinitions) {
    EXPECT_EQ(parse_stack_spec("model1").base, (std::vector<std::string>{"tree", "mlp"}));
    EXPECT_EQ(parse_stack_spec("model2").base, (std::vector<std::string>{"rf", "nb"}));
    EXPECT_EQ(parse_stack_spec("model3").base, (std::vector<std::string>{"part", "mlp", "nb"}));
    EXPECT_EQ(parse_stack_spec("model4").base, (std::vector<std::string>{"rf", "part"}));
    EXPECT_EQ(parse_stack_spec("model5").base, (std::vector<std::string>{"rf", "nb", "mlp"}));
    for (int k = 1; k <= 5; ++k) {
        auto s = stack_preset(k);
        EXPECT_EQ(s.meta, "smo");
        EXPECT_EQ(s.folds, 5u);
    }
    EXPECT_EQ(stack_preset_name(3), "Model III");
    EXPECT_THROW(stack_preset(6), ConfigError);
}

TEST(StackSpecParse, ExplicitStringsAndRoundTrip) {
    auto s = parse_stack_spec("stack:meta=smo;base=part,mlp,nb;folds=5");
    EXPECT_EQ(s, stack_preset(3));
    EXPECT_EQ(parse_stack_spec(s.to_string()), s);
    auto t = parse_stack_spec("stack:base=nb; folds=3");
    EXPECT_EQ(t.meta, "smo");
    EXPECT_EQ(t.folds, 3u);
    EXPECT_EQ(parse_stack_spec("stack:meta=nb;base=rf").meta, "nb");
}

TEST(StackSpecParse, Errors) {
    EXPECT_THROW(parse_stack_spec("model6"), ConfigError);
    EXPECT_THROW(parse_stack_spec("stack:meta=smo"), ConfigError);
    EXPECT_THROW(parse_stack_spec("stack:base="), ConfigError);
    EXPECT_THROW(parse_stack_spec("stack:base=j48"), ConfigError);
    EXPECT_THROW(parse_stack_spec("stack:base=nb;folds=1"), ConfigError);
    EXPECT_THROW(parse_stack_spec("stack:base=nb;colour=red"), ConfigError);
    EXPECT_THROW(parse_stack_spec("stack:base=nb;folds"), ConfigError);
    EXPECT_THROW(parse_stack_spec("bagging"), ConfigError);
}

TEST(MetaFeatures, ShapeAndCoverage) {
    auto d = blobs(1, 80, 25, 3, 2.0);
    std::vector<Learner> base{make_learner("nb"), make_learner("tree"), make_learner("part")};
    auto mf = build_meta_features(d, base, 5, 7);
    EXPECT_EQ(mf.data.arity(), 6u);
    EXPECT_EQ(mf.data.rows(), d.rows());
    EXPECT_EQ(mf.data.labels(), d.labels());
    EXPECT_EQ(mf.folds_used, 5u);
    EXPECT_TRUE(mf.warnings.empty());
    std::vector<std::size_t> per_fold(5, 0);
    for (auto f : mf.fold) {
        ASSERT_LT(f, 5u);
        ++per_fold[f];
    }
    for (auto c : per_fold) EXPECT_GE(c, 20u);
    for (std::size_t i = 0; i < mf.data.rows(); ++i) {
        for (std::size_t t = 0; t < 3; ++t) {
            EXPECT_NEAR(mf.data.row(i)[2 * t] + mf.data.row(i)[2 * t + 1], 1.0, 1e-9);
        }
    }
}

TEST(MetaFeatures, NoRowIsScoredByAModelThatSawIt) {
    auto d = blobs(2, 60, 20, 2);
    std::vector<Learner> base{membership_learner()};
    auto mf = build_meta_features(d, base, 5, 3);
    for (std::size_t i = 0; i < d.rows(); ++i) EXPECT_EQ(mf.data.row(i)[kFailure], 0.0) << "row " << i;
    // Sanity check of the spy: the refit base model has seen every row.
    auto stack = train_stack(d, base, make_learner("nb"), 5, 3);
    for (std::size_t i = 0; i < d.rows(); ++i) EXPECT_EQ(stack->meta_row(d.row(i))[kFailure], 1.0);
}

TEST(MetaFeatures, FoldsAreStratified) {
    auto d = blobs(3, 103, 17, 2);
    std::vector<Learner> base{make_learner("nb")};
    auto mf = build_meta_features(d, base, 5, 11);
    std::vector<std::array<std::size_t, 2>> counts(5, {0, 0});
    for (std::size_t i = 0; i < d.rows(); ++i) ++counts[mf.fold[i]][d.label(i)];
    for (auto& c : counts) {
        EXPECT_TRUE(c[0] == 20 || c[0] == 21);
        EXPECT_TRUE(c[1] == 3 || c[1] == 4);
    }
}

TEST(MetaFeatures, OraclePlugInSeparatesClasses) {
    auto d = with_label_column(blobs(4, 50, 15, 2, 0.0));
    std::vector<Learner> base{label_column_learner()};
    auto mf = build_meta_features(d, base, 5, 1);
    for (std::size_t i = 0; i < d.rows(); ++i) {
        EXPECT_EQ(mf.data.row(i)[kFailure], d.label(i) == kFailure ? 1.0 : 0.0);
    }
    auto stack = train_stack(d, base, make_learner("smo"), 5, 1);
    EXPECT_DOUBLE_EQ(accuracy(*stack, d), 1.0);
}

TEST(MetaFeatures, SmallClassReducesFoldCount) {
    auto d = blobs(5, 40, 3, 2);
    std::vector<Learner> base{make_learner("nb")};
    auto mf = build_meta_features(d, base, 5, 1);
    EXPECT_EQ(mf.folds_used, 3u);
    ASSERT_EQ(mf.warnings.size(), 1u);
    EXPECT_NE(mf.warnings[0].find("reduced"), std::string::npos);
    EXPECT_THROW(build_meta_features(blobs(6, 40, 1, 2), base, 5, 1), LabelError);
    EXPECT_THROW(build_meta_features(d, {}, 5, 1), ConfigError);
    EXPECT_THROW(build_meta_features(d, base, 1, 1), ConfigError);
}

TEST(Stack, DeterministicPerSeed) {
    auto d = blobs(7, 90, 30, 3, 1.5);
    auto a = train_stack(d, stack_preset(3), 5, fast_settings());
    auto b = train_stack(d, stack_preset(3), 5, fast_settings());
    for (std::size_t i = 0; i < d.rows(); ++i) ASSERT_EQ(a->predict_proba(d.row(i)), b->predict_proba(d.row(i)));
    std::ostringstream sa, sb;
    write_model(sa, *a);
    write_model(sb, *b);
    EXPECT_EQ(sa.str(), sb.str());
}

TEST(Stack, OutputsAreProbabilitiesAndArityIsChecked) {
    auto d = blobs(8, 80, 20, 3, 1.5);
    auto m = train_stack(d, stack_preset(2), 1, fast_settings());
    EXPECT_EQ(m->meta()->arity(), 4u);
    EXPECT_EQ(m->base_ids(), (std::vector<std::string>{"rf", "nb"}));
    for (std::size_t i = 0; i < d.rows(); ++i) {
        auto p = m->predict_proba(d.row(i));
        ASSERT_GE(p[0], 0.0);
        ASSERT_GE(p[1], 0.0);
        ASSERT_NEAR(p[0] + p[1], 1.0, 1e-9);
    }
    EXPECT_THROW(m->predict_proba(std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST(Stack, PermutedBaseOrderGivesSameOutputs) {
    // Seed-independent base learners isolate the ordering question. With a
    // naive Bayes meta the permutation is exact up to summation order; the
    // SMO meta stops at a KKT tolerance, so it agrees to solver accuracy.
    auto d = blobs(9, 90, 30, 2, 1.2);
    for (const std::string meta : {"nb", "smo"}) {
        SCOPED_TRACE(meta);
        const double tol = meta == "nb" ? 1e-12 : 5e-3;
        auto m1 = train_stack(d, StackSpec{{"nb", "part"}, meta, 5}, 4);
        auto m2 = train_stack(d, StackSpec{{"part", "nb"}, meta, 5}, 4);
        auto rng = make_rng(2);
        for (int k = 0; k < 200; ++k) {
            std::vector<double> x{uniform01(rng) * 6 - 2, uniform01(rng) * 6 - 2};
            auto r1 = m1->meta_row(x);
            auto r2 = m2->meta_row(x);
            ASSERT_EQ(r1[0], r2[2]);
            ASSERT_EQ(r1[1], r2[3]);
            ASSERT_EQ(r1[2], r2[0]);
            ASSERT_EQ(r1[3], r2[1]);
            EXPECT_NEAR(m1->predict_proba(x)[kFailure], m2->predict_proba(x)[kFailure], tol);
        }
    }
}

TEST(Stack, IdenticalBasesGiveDuplicatedBlocks) {
    auto d = blobs(10, 60, 20, 2);
    auto m = train_stack(d, StackSpec{{"nb", "nb", "nb"}, "smo", 5}, 1);
    for (std::size_t i = 0; i < d.rows(); i += 5) {
        auto z = m->meta_row(d.row(i));
        ASSERT_EQ(z.size(), 6u);
        EXPECT_EQ(z[0], z[2]);
        EXPECT_EQ(z[0], z[4]);
        EXPECT_EQ(z[1], z[3]);
        EXPECT_EQ(z[1], z[5]);
    }
}

TEST(Stack, SingleBaseStackTracksTheBaseLearner) {
    auto train = blobs(11, 500, 80, 3, 1.5);
    auto test = blobs(12, 500, 80, 3, 1.5);
    auto nb = make_learner("nb").train(train, 1);
    auto stack = train_stack(train, StackSpec{{"nb"}, "smo", 5}, 1);
    EXPECT_LE(std::abs(accuracy(*stack, test) - accuracy(*nb, test)), 0.02);
}

TEST(Stack, ModelDocumentRoundTrip) {
    auto d = blobs(13, 70, 25, 3, 1.5);
    auto m = train_stack(d, stack_preset(5), 2, fast_settings());
    std::stringstream ss;
    write_model(ss, *m);
    auto back = read_model(ss);
    EXPECT_EQ(back->kind(), "stack");
    for (std::size_t i = 0; i < d.rows(); ++i) ASSERT_EQ(back->predict_proba(d.row(i)), m->predict_proba(d.row(i)));
}
