#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "rigline/imbalance.hpp"
#include "test_util.hpp"

using namespace rigline;
using testutil::blobs;
using testutil::make_dataset;

namespace {

std::multiset<std::vector<double>> row_multiset(const Dataset& d) {
    std::multiset<std::vector<double>> s;
    for (std::size_t i = 0; i < d.rows(); ++i) s.insert({d.row(i).begin(), d.row(i).end()});
    return s;
}

}  // namespace

TEST(Smote, BalancesTheReferenceImbalance) {
    auto d = blobs(1, 870, 130, 3);
    auto out = smote(d, {5, 1.0, 7});
    auto counts = out.class_counts();
    EXPECT_EQ(counts[kNormal], 870u);
    EXPECT_EQ(counts[kFailure], 870u);
    EXPECT_EQ(out.rows() - d.rows(), 740u);
}

TEST(Smote, PartialRatioWithinOneRow) {
    auto d = blobs(2, 301, 40, 2);
    for (double ratio : {0.25, 0.5, 0.77, 1.0}) {
        auto out = smote(d, {5, ratio, 3});
        auto counts = out.class_counts();
        EXPECT_EQ(counts[kNormal], 301u);
        EXPECT_LE(std::abs(static_cast<double>(counts[kFailure]) - ratio * 301.0), 1.0) << ratio;
    }
    // Already at or above the target: nothing is added.
    EXPECT_EQ(smote(d, {5, 0.1, 3}).rows(), d.rows());
}

TEST(Smote, InputIsPrefixAndSyntheticRowsAreOnSegments) {
    auto d = blobs(3, 200, 30, 4);
    auto res = smote_with_provenance(d, {5, 1.0, 11});
    const auto& out = res.data;
    ASSERT_EQ(res.provenance.size(), out.rows() - d.rows());
    for (std::size_t i = 0; i < d.rows(); ++i) {
        ASSERT_EQ(out.label(i), d.label(i));
        for (std::size_t j = 0; j < d.arity(); ++j) ASSERT_EQ(out.row(i)[j], d.row(i)[j]);
    }
    for (std::size_t s = 0; s < res.provenance.size(); ++s) {
        const auto& pv = res.provenance[s];
        const auto syn = out.row(d.rows() + s);
        EXPECT_EQ(out.label(d.rows() + s), kFailure);
        EXPECT_EQ(d.label(pv.base), kFailure);
        EXPECT_EQ(d.label(pv.neighbor), kFailure);
        EXPECT_NE(pv.base, pv.neighbor);
        EXPECT_GE(pv.gap, 0.0);
        EXPECT_LE(pv.gap, 1.0);
        double err = 0.0;
        for (std::size_t j = 0; j < d.arity(); ++j) {
            const double p = d.row(pv.base)[j];
            const double n = d.row(pv.neighbor)[j];
            const double r = (syn[j] - p) - pv.gap * (n - p);
            err += r * r;
        }
        EXPECT_LT(std::sqrt(err), 1e-9);
    }
}

TEST(Smote, SyntheticRowsStayInMinorityBoundingBox) {
    auto d = blobs(4, 500, 60, 3, 1.0);
    auto out = smote(d, {5, 1.0, 5});
    std::vector<double> lo(3, 1e300), hi(3, -1e300);
    for (auto i : d.indices_of(kFailure)) {
        for (std::size_t j = 0; j < 3; ++j) {
            lo[j] = std::min(lo[j], d.row(i)[j]);
            hi[j] = std::max(hi[j], d.row(i)[j]);
        }
    }
    for (std::size_t i = d.rows(); i < out.rows(); ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_GE(out.row(i)[j], lo[j] - 1e-12);
            EXPECT_LE(out.row(i)[j], hi[j] + 1e-12);
        }
    }
}

TEST(Smote, NeighboursAreTheNearestMinorityRows) {
    // Minority points on a line; with k = 1 each point's neighbour is adjacent.
    std::vector<double> v;
    std::vector<int> l;
    for (int i = 0; i < 20; ++i) {
        v.push_back(100.0 + i);
        l.push_back(kNormal);
    }
    const std::vector<double> pos{0.0, 1.0, 3.0, 7.0, 15.0, 31.0};
    for (double x : pos) {
        v.push_back(x);
        l.push_back(kFailure);
    }
    auto d = make_dataset(v, l, 1);
    auto res = smote_with_provenance(d, {1, 1.0, 9});
    for (auto& pv : res.provenance) {
        const double p = d.row(pv.base)[0];
        const double n = d.row(pv.neighbor)[0];
        double best = 1e300;
        for (double x : pos) {
            if (x != p) best = std::min(best, std::abs(x - p));
        }
        EXPECT_DOUBLE_EQ(std::abs(n - p), best);
    }
}

TEST(Smote, DistanceTiesBreakByRowIndex) {
    // Rows 1 and 2 are equidistant from row 0; with k = 1 row 0 must pair with row 1.
    std::vector<double> v{0.0, -1.0, 1.0};
    std::vector<int> l{kFailure, kFailure, kFailure};
    for (int i = 0; i < 30; ++i) {
        v.push_back(10.0 + i);
        l.push_back(kNormal);
    }
    auto d = make_dataset(v, l, 1);
    auto res = smote_with_provenance(d, {1, 1.0, 0});
    std::size_t from_row0 = 0;
    for (auto& pv : res.provenance) {
        if (pv.base == 0) {
            ++from_row0;
            EXPECT_EQ(pv.neighbor, 1u);
        }
    }
    EXPECT_GT(from_row0, 0u);
}

TEST(Smote, DeterministicPerSeed) {
    auto d = blobs(5, 300, 40, 2);
    auto a = smote(d, {5, 1.0, 42});
    auto b = smote(d, {5, 1.0, 42});
    auto c = smote(d, {5, 1.0, 43});
    EXPECT_EQ(a.values(), b.values());
    EXPECT_NE(a.values(), c.values());
}

TEST(Smote, ZeroGapReturnsBase) {
    // Triangle identity of the construction: p + 0 * (n - p) = p.
    auto d = blobs(6, 50, 10, 2);
    auto res = smote_with_provenance(d, {3, 1.0, 1});
    for (std::size_t s = 0; s < res.provenance.size(); ++s) {
        auto pv = res.provenance[s];
        pv.gap = 0.0;
        for (std::size_t j = 0; j < 2; ++j) {
            const double p = d.row(pv.base)[j];
            EXPECT_EQ(p + pv.gap * (d.row(pv.neighbor)[j] - p), p);
        }
    }
}

TEST(Smote, Errors) {
    auto d = blobs(7, 50, 5, 2);
    EXPECT_THROW(smote(d, {5, 1.0, 0}), ConfigError);
    EXPECT_NO_THROW(smote(d, {4, 1.0, 0}));
    EXPECT_THROW(smote(d, {0, 1.0, 0}), ConfigError);
    EXPECT_THROW(smote(d, {3, 0.0, 0}), ConfigError);
    EXPECT_THROW(smote(d, {3, 1.5, 0}), ConfigError);
    auto single = make_dataset({1, 2, 3}, {kNormal, kNormal, kNormal}, 1);
    EXPECT_THROW(smote(single, {1, 1.0, 0}), LabelError);
    EXPECT_THROW(smote(d.without_labels(), {1, 1.0, 0}), LabelError);
}

TEST(Undersample, ReducesMajorityToMinorityCount) {
    auto d = blobs(8, 870, 130, 2);
    auto out = undersample(d, 3);
    auto counts = out.class_counts();
    EXPECT_EQ(counts[kNormal], 130u);
    EXPECT_EQ(counts[kFailure], 130u);
}

TEST(Undersample, SurvivorsAreOriginalRowsAndMinorityIsUntouched) {
    auto d = blobs(9, 400, 50, 3);
    auto out = undersample(d, 17);
    auto orig = row_multiset(d);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        std::vector<double> r(out.row(i).begin(), out.row(i).end());
        auto it = orig.find(r);
        ASSERT_NE(it, orig.end());
        orig.erase(it);
        const auto id = out.row_id(i);
        EXPECT_EQ(out.label(i), d.label(id));
    }
    auto kept_failures = out.indices_of(kFailure);
    ASSERT_EQ(kept_failures.size(), 50u);
    std::vector<std::size_t> ids;
    for (auto i : kept_failures) ids.push_back(out.row_id(i));
    EXPECT_EQ(ids, d.indices_of(kFailure));
}

TEST(Undersample, BalancedInputIsFixedPoint) {
    auto d = blobs(10, 60, 60, 2);
    auto out = undersample(d, 1);
    EXPECT_EQ(row_multiset(out), row_multiset(d));
}

TEST(Undersample, DeterministicAndSeedSensitive) {
    auto d = blobs(11, 300, 30, 2);
    EXPECT_EQ(undersample(d, 5).row_ids(), undersample(d, 5).row_ids());
    EXPECT_NE(undersample(d, 5).row_ids(), undersample(d, 6).row_ids());
}

TEST(Undersample, SingleClassIsAnError) {
    EXPECT_THROW(undersample(make_dataset({1, 2}, {kFailure, kFailure}, 1), 0), LabelError);
}

TEST(CostSensitive, ExpectedCostArithmetic) {
    auto base = std::make_shared<testutil::FeatureProbability>();
    CostMatrix cm;
    cm.cost = {{{0.0, 1.0}, {5.0, 0.0}}};
    CostSensitiveModel m(base, cm);
    const std::vector<double> x{0.3};
    const ProbVector p = m.predict_proba(x);
    EXPECT_NEAR(m.expected_cost(p, kNormal), 1.5, 1e-12);
    EXPECT_NEAR(m.expected_cost(p, kFailure), 0.7, 1e-12);
    EXPECT_EQ(m.predict(x), kFailure);
    EXPECT_EQ(base->predict(x), kNormal);
    const std::vector<double> zero{0.0};
    EXPECT_EQ(m.predict(zero), kNormal);
}

TEST(CostSensitive, UniformCostsMatchArgmaxOverGrid) {
    auto base = std::make_shared<testutil::FeatureProbability>();
    for (double c : {0.5, 1.0, 3.0}) {
        auto m = cost_sensitive_wrap(base, CostMatrix::off_diagonal(c, c));
        for (int k = 0; k <= 1000; ++k) {
            const std::vector<double> x{k / 1000.0};
            ASSERT_EQ(m->predict(x), base->predict(x)) << "p=" << x[0];
            ASSERT_EQ(m->predict_proba(x), base->predict_proba(x));
        }
    }
}

TEST(CostSensitive, DegenerateMatrixIsPermitted) {
    auto base = std::make_shared<testutil::FeatureProbability>();
    auto m = cost_sensitive_wrap(base, CostMatrix::off_diagonal(0.0, 1.0));
    // A false alarm is free, so failure wins whenever P(failure) > 0; at 0 both costs tie and normal wins.
    for (double p : {0.2, 0.9}) EXPECT_EQ(m->predict(std::vector<double>{p}), kFailure);
    EXPECT_EQ(m->predict(std::vector<double>{0.0}), kNormal);
}

TEST(CostSensitive, MatrixValidation) {
    EXPECT_THROW(CostMatrix::off_diagonal(0.0, 0.0), ConfigError);
    EXPECT_THROW(CostMatrix::off_diagonal(-1.0, 1.0), ConfigError);
    EXPECT_THROW(CostMatrix::off_diagonal(std::nan(""), 1.0), ConfigError);
}

TEST(CostSensitive, DefaultMatrixUsesClassRatio) {
    auto d = blobs(12, 870, 130, 1);
    auto cm = CostMatrix::balanced_for(d);
    EXPECT_DOUBLE_EQ(cm.cost[kFailure][kNormal], 870.0 / 130.0);
    EXPECT_DOUBLE_EQ(cm.cost[kNormal][kFailure], 1.0);
    EXPECT_EQ(cm.cost[0][0], 0.0);
    EXPECT_EQ(cm.cost[1][1], 0.0);
}

TEST(CostSensitive, ParsingForms) {
    auto pair = parse_cost_pair("1,5");
    EXPECT_EQ(pair.cost[kNormal][kFailure], 1.0);
    EXPECT_EQ(pair.cost[kFailure][kNormal], 5.0);
    EXPECT_THROW(parse_cost_pair("1"), ParseError);
    EXPECT_THROW(parse_cost_pair("1,x"), ParseError);

    std::istringstream file("0 2\n\n7.5 0\n");
    auto cm = read_cost_matrix(file);
    EXPECT_EQ(cm.cost[0][1], 2.0);
    EXPECT_EQ(cm.cost[1][0], 7.5);
    std::istringstream bad("0 1 2\n1 0\n");
    EXPECT_THROW(read_cost_matrix(bad), ParseError);
    std::istringstream short_file("0 1\n");
    EXPECT_THROW(read_cost_matrix(short_file), ParseError);
}

TEST(CostSensitive, LearnerWrapperDerivesCostsFromTrainingData) {
    Learner base{"fixed", [](const Dataset& d, std::uint64_t) -> TrainedModel {
                     return std::make_shared<testutil::FeatureProbability>(d.arity());
                 }};
    auto wrapped = cost_sensitive(base);
    auto model = wrapped.train(blobs(13, 90, 10, 1), 0);
    auto cs = std::dynamic_pointer_cast<const CostSensitiveModel>(model);
    ASSERT_TRUE(cs);
    EXPECT_DOUBLE_EQ(cs->costs().cost[kFailure][kNormal], 9.0);
    // Expected cost of predicting normal is 9 p, of failure 1 - p: threshold at p = 0.1.
    EXPECT_EQ(model->predict(std::vector<double>{0.09}), kNormal);
    EXPECT_EQ(model->predict(std::vector<double>{0.11}), kFailure);
}
