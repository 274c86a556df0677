#include "gtp/metrics/metrics.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace gtp::metrics;

namespace {

struct Instance {
    std::vector<double> a, b;
    std::vector<int> y;
};

Instance random_instance(std::mt19937_64& rng, std::size_t n, int levels = 0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Instance in;
    for (std::size_t i = 0; i < n; ++i) {
        int label = static_cast<int>(i % 2);
        if (i >= 4) label = u(rng) < 0.5;
        in.y.push_back(label);
        double a = u(rng) + 0.3 * label, b = u(rng) + 0.2 * label;
        if (levels) {
            a = std::round(a * levels) / levels;
            b = std::round(b * levels) / levels;
        }
        in.a.push_back(a);
        in.b.push_back(b);
    }
    return in;
}

} // namespace

TEST(Confusion, PerfectPredictions) {
    auto m = confusion_metrics({0, 1, 2, 2}, {0, 1, 2, 2});
    EXPECT_EQ(m.accuracy, 1.0);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(m.precision[c], 1.0);
        EXPECT_EQ(m.recall[c], 1.0);
        EXPECT_EQ(m.specificity[c], 1.0);
    }
}

TEST(Confusion, AllClassZeroOnBalancedLabels) {
    auto m = confusion_metrics({0, 1, 2, 0, 1, 2}, {0, 0, 0, 0, 0, 0});
    EXPECT_DOUBLE_EQ(m.accuracy, 1.0 / 3.0);
    EXPECT_TRUE(m.precision_undefined[1]);
    EXPECT_TRUE(m.precision_undefined[2]);
    EXPECT_EQ(m.precision[1], 0.0);
    EXPECT_FALSE(m.precision_undefined[0]);
}

TEST(Confusion, HandBuiltMatrix) {
    auto m = confusion_metrics({0, 0, 1, 2, 2, 2}, {0, 1, 1, 2, 2, 0});
    const std::array<std::array<std::size_t, 3>, 3> expected{{{1, 1, 0}, {0, 1, 0}, {1, 0, 2}}};
    EXPECT_EQ(m.matrix, expected);
    EXPECT_DOUBLE_EQ(m.accuracy, 4.0 / 6.0);
    // class 0: tp 1, fp 1, fn 1, tn 3
    EXPECT_DOUBLE_EQ(m.precision[0], 0.5);
    EXPECT_DOUBLE_EQ(m.recall[0], 0.5);
    EXPECT_DOUBLE_EQ(m.specificity[0], 0.75);
    // class 1: tp 1, fp 1, fn 0, tn 4
    EXPECT_DOUBLE_EQ(m.precision[1], 0.5);
    EXPECT_DOUBLE_EQ(m.recall[1], 1.0);
    EXPECT_DOUBLE_EQ(m.specificity[1], 0.8);
    // class 2: tp 2, fp 0, fn 1, tn 3
    EXPECT_DOUBLE_EQ(m.precision[2], 1.0);
    EXPECT_DOUBLE_EQ(m.recall[2], 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.specificity[2], 1.0);
    std::size_t sum = 0;
    for (const auto& row : m.matrix)
        for (auto v : row) sum += v;
    EXPECT_EQ(sum, m.total);
}

TEST(Confusion, Errors) {
    EXPECT_THROW(confusion_metrics({}, {}), std::invalid_argument);
    EXPECT_THROW(confusion_metrics({0}, {0, 1}), std::invalid_argument);
    EXPECT_THROW(confusion_metrics({3}, {0}), std::invalid_argument);
}

TEST(Roc, SeparatedAndTied) {
    EXPECT_EQ(roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}).auc, 1.0);
    RocCurve flat = roc_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1});
    EXPECT_EQ(flat.auc, 0.5);
    EXPECT_EQ(flat.fpr.front(), 0.0);
    EXPECT_EQ(flat.tpr.back(), 1.0);
    EXPECT_EQ(flat.fpr.back(), 1.0);
    EXPECT_THROW(roc_auc({0.1, 0.2}, {1, 1}), std::invalid_argument);
}

TEST(Roc, MatchesPairOracleExactly) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng() % 49;
        Instance in = random_instance(rng, n, trial % 2 ? 5 : 0);
        EXPECT_EQ(roc_auc(in.a, in.y).auc, gtp::testing::pair_count_auc(in.a, in.y)) << "trial " << trial;
    }
}

TEST(Roc, TrapezoidAreaEqualsAuc) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        Instance in = random_instance(rng, 30, 4);
        RocCurve r = roc_auc(in.a, in.y);
        double area = 0.0;
        for (std::size_t i = 1; i < r.fpr.size(); ++i) area += 0.5 * (r.fpr[i] - r.fpr[i - 1]) * (r.tpr[i] + r.tpr[i - 1]);
        EXPECT_NEAR(area, r.auc, 1e-12);
        for (std::size_t i = 0; i < r.fpr.size(); ++i) {
            EXPECT_GE(r.fpr[i], 0.0);
            EXPECT_LE(r.tpr[i], 1.0);
        }
    }
}

TEST(Roc, InvariantUnderMonotoneTransform) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Instance in = random_instance(rng, 25);
        std::vector<double> t;
        for (double v : in.a) t.push_back(std::exp(3.0 * v) - 7.0);
        EXPECT_EQ(roc_auc(in.a, in.y).auc, roc_auc(t, in.y).auc);
    }
}

TEST(Pr, PerfectAndSinglePositive) {
    EXPECT_EQ(pr_curve({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}).average_precision, 1.0);
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 10; ++i) {
        s.push_back(1.0 - 0.1 * i);
        y.push_back(i == 0);
    }
    EXPECT_EQ(pr_curve(s, y).average_precision, 1.0);
    EXPECT_THROW(pr_curve({0.1}, {0}), std::invalid_argument);
}

TEST(Pr, InvertedRankingMatchesEnumeration) {
    for (std::size_t n = 1; n <= 6; ++n) {
        std::vector<double> s;
        std::vector<int> y;
        for (std::size_t i = 0; i < n; ++i) {
            s.push_back(10.0 + static_cast<double>(i)); // negatives on top
            y.push_back(0);
        }
        for (std::size_t i = 0; i < n; ++i) {
            s.push_back(static_cast<double>(i));
            y.push_back(1);
        }
        // k-th positive is found at rank n + k: precision k/(n+k), recall step 1/n.
        double oracle = 0.0;
        for (std::size_t k = 1; k <= n; ++k) oracle += (1.0 / n) * static_cast<double>(k) / static_cast<double>(n + k);
        EXPECT_NEAR(pr_curve(s, y).average_precision, oracle, 1e-15);
    }
}

TEST(Delong, IdenticalScores) {
    std::mt19937_64 rng(4);
    Instance in = random_instance(rng, 20);
    DelongResult d = delong_test(in.a, in.a, in.y);
    EXPECT_EQ(d.log10_p, 0.0);
    EXPECT_EQ(d.z, 0.0);
    EXPECT_EQ(d.auc_a, d.auc_b);
}

TEST(Delong, SignificanceConstant) { EXPECT_NEAR(std::log10(0.05), -1.301, 5e-4); }

TEST(Delong, TwoSidedPAtKnownZ) {
    EXPECT_NEAR(log10_two_sided_p(1.959963984540054), std::log10(0.05), 1e-12);
    EXPECT_EQ(log10_two_sided_p(0.0), 0.0);
    // asymptotic branch stays continuous with the direct one
    const double near = log10_two_sided_p(37.0), far = log10_two_sided_p(38.5);
    EXPECT_TRUE(std::isfinite(far));
    EXPECT_LT(far, near);
    EXPECT_NEAR(log10_two_sided_p(60.0), -783.1, 1.0);
}

TEST(Delong, MatchesStructuralComponentsLoops) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Instance in = random_instance(rng, 12 + rng() % 30, trial % 3 ? 0 : 6);
        const auto o = gtp::testing::delong_loops(in.a, in.b, in.y);
        const double aa = o.auc_a, z = o.z;
        DelongResult d = delong_test(in.a, in.b, in.y);
        EXPECT_NEAR(d.auc_a, aa, 1e-12);
        EXPECT_NEAR(d.z, z, 1e-10);
        EXPECT_NEAR(d.log10_p, std::log10(std::erfc(std::abs(z) / std::sqrt(2.0))), 1e-10);
    }
}

TEST(Delong, SwapNegatesZ) {
    std::mt19937_64 rng(6);
    Instance in = random_instance(rng, 30);
    DelongResult ab = delong_test(in.a, in.b, in.y), ba = delong_test(in.b, in.a, in.y);
    EXPECT_NEAR(ab.z, -ba.z, 1e-12);
    EXPECT_NEAR(ab.log10_p, ba.log10_p, 1e-12);
}

TEST(Delong, TooFewSamples) { EXPECT_THROW(delong_test({1, 2, 3}, {1, 2, 3}, {1, 0, 0}), std::invalid_argument); }

TEST(Report, EvaluateUsesArgmaxAndOneVsRest) {
    std::vector<int> y{0, 1, 2, 1};
    std::vector<std::array<double, 3>> p{{0.7, 0.2, 0.1}, {0.1, 0.8, 0.1}, {0.2, 0.5, 0.3}, {0.3, 0.4, 0.3}};
    MetricsReport r = evaluate(y, p);
    EXPECT_DOUBLE_EQ(r.confusion.accuracy, 0.75);
    ASSERT_EQ(r.roc.size(), 3u);
    EXPECT_EQ(r.roc[0].auc, roc_auc({0.7, 0.1, 0.2, 0.3}, {1, 0, 0, 0}).auc);
    auto j = to_json(r);
    EXPECT_EQ(j["classes"].size(), 3u);
    EXPECT_NE(curves_csv(r).find("class,curve,x,y,threshold\n"), std::string::npos);
}

TEST(Report, MissingClassGivesNullAuc) {
    MetricsReport r = evaluate({0, 1}, {{{0.6, 0.3, 0.1}}, {{0.2, 0.7, 0.1}}});
    EXPECT_TRUE(std::isnan(r.roc[2].auc));
    EXPECT_TRUE(to_json(r)["classes"][2]["auc"].is_null());
}

TEST(Folds, MeanAndSampleStd) {
    MeanStd ms = mean_std({0.9, 0.8, 1.0});
    EXPECT_DOUBLE_EQ(ms.mean, 0.9);
    EXPECT_NEAR(ms.std, 0.1, 1e-15);
    EXPECT_EQ(mean_std({0.5}).std, 0.0);
    MetricsReport a = evaluate({0, 1, 2}, {{{1, 0, 0}}, {{0, 1, 0}}, {{0, 0, 1}}});
    MetricsReport b = evaluate({0, 1, 2}, {{{1, 0, 0}}, {{0, 1, 0}}, {{0, 1, 0}}});
    auto j = aggregate_folds({a, b});
    EXPECT_DOUBLE_EQ(j["accuracy"]["mean"].get<double>(), (1.0 + 2.0 / 3.0) / 2.0);
    EXPECT_EQ(j["accuracy"]["folds"].size(), 2u);
}
