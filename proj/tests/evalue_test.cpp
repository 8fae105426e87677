#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "mxci/evalue.hpp"

using namespace mxci;

namespace {

ConditionalModel coin(double p1) { return ConditionalModel(DiscreteConditional({0.0, 1.0}, {{{1.0}, {1 - p1, p1}}})); }

Observation obs_at(double x, double y = 1.0) { return {{x}, y, {1.0}}; }

struct Table {
    std::vector<double> vals;  // h at support index, y ignored
    double operator()(std::span<const double> x, double, std::span<const double>) const {
        return vals[static_cast<std::size_t>(x[0])];
    }
};

struct Const {
    double operator()(std::span<const double>, double, std::span<const double>) const { return 2.5; }
};

}  // namespace

TEST(ExactFactor, MatchesHandComputedRatio) {
    // h = (1, 3) on {0, 1}, P(X=1) = 0.25: integral = 0.75 + 0.75 = 1.5
    const Table h{{1.0, 3.0}};
    const auto q = coin(0.25);
    EXPECT_DOUBLE_EQ(e_factor_exact(h, obs_at(1), q).value, 2.0);
    EXPECT_DOUBLE_EQ(e_factor_exact(h, obs_at(0), q).value, 1.0 / 1.5);
}

TEST(ExactFactor, HasMeanOneUnderQ) {
    const Table h{{0.2, 1.7, 4.0}};
    const ConditionalModel q(DiscreteConditional({0.0, 1.0, 2.0}, {{{1.0}, {0.5, 0.3, 0.2}}}));
    double mean = 0.0;
    for (int x = 0; x < 3; ++x) mean += q.density(x, std::vector<double>{1.0}) * e_factor_exact(h, obs_at(x), q).value;
    EXPECT_NEAR(mean, 1.0, 1e-15);
}

TEST(ExactFactor, ConstantHIsOne) {
    EXPECT_DOUBLE_EQ(e_factor_exact(Const{}, obs_at(1), coin(0.3)).value, 1.0);
}

TEST(ExactFactor, ZeroIntegralRaises) {
    const Table h{{0.0, 0.0}};
    try {
        (void)e_factor_exact(h, obs_at(1), coin(0.5));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ZeroDenominator);
    }
}

TEST(ExactFactor, GaussianModelIsUnsupported) {
    const ConditionalModel g(GaussianConditionalSpec{{}, 0.0, 1.0});
    try {
        (void)e_factor_exact(Const{}, obs_at(0.3), g);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UnsupportedModel);
    }
}

TEST(ExactFactor, NegativeHRejected) {
    const Table h{{-1.0, 1.0}};
    EXPECT_THROW((void)e_factor_exact(h, obs_at(1), coin(0.5)), Error);
}

TEST(McFactor, BoundedByMPlusOne) {
    // h vanishes except at the observed value, which Q never produces
    const Table h{{0.0, 1.0}};
    const auto q = coin(0.0);
    Rng rng(3);
    for (std::size_t m : {1u, 7u, 500u}) {
        const auto f = e_factor_mc(h, obs_at(1), q, m, rng);
        EXPECT_DOUBLE_EQ(f.value, static_cast<double>(m + 1));
    }
}

TEST(McFactor, ConstantHIsOne) {
    Rng rng(1);
    EXPECT_DOUBLE_EQ(e_factor_mc(Const{}, obs_at(0.2), ConditionalModel(GaussianConditionalSpec{{}, 0, 1}), 10, rng).value,
                     1.0);
}

TEST(McFactor, ZeroOverZeroIsOneAndFlagged) {
    const Table h{{0.0, 0.0}};
    Rng rng(1);
    const auto f = e_factor_mc(h, obs_at(1), coin(0.5), 5, rng);
    EXPECT_DOUBLE_EQ(f.value, 1.0);
    EXPECT_TRUE(f.degenerate);
}

TEST(McFactor, MZeroRejected) {
    Rng rng(1);
    EXPECT_THROW((void)e_factor_mc(Const{}, obs_at(0), coin(0.5), 0, rng), Error);
}

TEST(McFactor, SlotSumEqualsMPlusOne) {
    // Swapping which point counts as observed and summing gives M + 1 exactly.
    const Table h{{0.3, 2.0, 5.5}};
    const std::vector<double> pts{0, 2, 1, 1, 0, 2, 2};
    double total = 0.0;
    for (std::size_t j = 0; j < pts.size(); ++j) {
        std::vector<double> rest;
        for (std::size_t k = 0; k < pts.size(); ++k)
            if (k != j) rest.push_back(pts[k]);
        total += e_factor_from_draws(h, obs_at(pts[j]), rest).value;
    }
    EXPECT_NEAR(total, static_cast<double>(pts.size()), 1e-12);
}

TEST(McFactor, SameSeedSameFactor) {
    const auto q = ConditionalModel(GaussianConditionalSpec{{0.5}, 0.1, 0.8});
    auto h = [](std::span<const double> x, double, std::span<const double>) { return std::exp(x[0]); };
    const Observation o{{0.4}, 1.0, {1.0, 0.3}};
    Rng a(99), b(99);
    EXPECT_EQ(e_factor_mc(h, o, q, 50, a).value, e_factor_mc(h, o, q, 50, b).value);
}

TEST(SymmetryFactor, ValuesAndStability) {
    EXPECT_DOUBLE_EQ(symmetry_e_factor(0.0, 1.0), 1.0);
    EXPECT_NEAR(symmetry_e_factor(1.0, 0.5), 2.0 / (1.0 + std::exp(-1.0)), 1e-15);
    EXPECT_DOUBLE_EQ(symmetry_e_factor(1e6, 1.0), 2.0);
    EXPECT_DOUBLE_EQ(symmetry_e_factor(-1e6, 1.0), 0.0);
    // f(d) + f(-d) = 2: mean one under a symmetric null
    for (double d : {0.1, 0.7, 3.0, 40.0}) EXPECT_NEAR(symmetry_e_factor(d, 0.8) + symmetry_e_factor(-d, 0.8), 2.0, 1e-14);
}

TEST(Martingale, LogProductAndThreshold) {
    auto s = MartingaleState::start(0.05);
    for (double v : {2.0, 3.0, 4.0}) s = update_martingale(s, EFactor{v});
    EXPECT_NEAR(s.log_s, std::log(24.0), 1e-14);
    ASSERT_TRUE(s.stopped_at.has_value());
    EXPECT_EQ(*s.stopped_at, 3u);
}

TEST(Martingale, CrossingAtExactlyOneOverAlpha) {
    auto s = MartingaleState::start(0.5);
    s = update_martingale(s, EFactor{2.0});
    EXPECT_TRUE(s.crossed());
}

TEST(Martingale, ZeroFactorIsAbsorbing) {
    auto s = MartingaleState::start(0.05);
    s = update_martingale(s, EFactor{0.0});
    EXPECT_EQ(s.log_s, -std::numeric_limits<double>::infinity());
    s = update_martingale(s, EFactor{1e300});
    EXPECT_EQ(s.log_s, -std::numeric_limits<double>::infinity());
    EXPECT_FALSE(s.crossed());
}

TEST(Martingale, StartRejectsBadAlpha) {
    EXPECT_THROW(MartingaleState::start(0.0), Error);
    EXPECT_THROW(MartingaleState::start(1.0), Error);
}

TEST(Martingale, LongStreamWithoutOverflow) {
    auto s = MartingaleState::start(0.05);
    for (int i = 0; i < 2000; ++i) s = update_martingale(s, EFactor{1e300});
    EXPECT_TRUE(std::isfinite(s.log_s));
    EXPECT_NEAR(s.log_s, 2000 * std::log(1e300), 1e-6 * s.log_s);
}

TEST(Martingale, MaxIsRunningMaximum) {
    auto s = MartingaleState::start(0.05);
    for (double v : {3.0, 0.1, 0.1}) s = update_martingale(s, EFactor{v});
    EXPECT_NEAR(s.max_log_s, std::log(3.0), 1e-15);
}

namespace {

// Learns P(X=1 | Y=y) from counts: the update-after-factor ordering matters.
struct Learner {
    double c[2][2] = {{1, 1}, {1, 1}};
    std::vector<std::size_t>* calls;
    double operator()(std::span<const double> x, double y, std::span<const double>) const {
        const int yi = y > 0.5, xi = x[0] > 0.5;
        return c[yi][xi] / (c[yi][0] + c[yi][1]);
    }
    void update(const Observation& o) {
        c[o.y > 0.5][o.x[0] > 0.5] += 1;
        calls->push_back(static_cast<std::size_t>(c[0][0] + c[0][1] + c[1][0] + c[1][1]) - 4);
    }
};

}  // namespace

TEST(SequentialTest, EmptyStream) {
    std::vector<Observation> none;
    const Const h;
    const auto q = coin(0.5);
    const auto r = run_sequential_test(none, h, q, TestConfig{});
    EXPECT_EQ(r.state.n, 0u);
    EXPECT_TRUE(r.trace.empty());
    EXPECT_FALSE(r.state.crossed());
}

TEST(SequentialTest, ConstantHGivesFlatTrace) {
    std::vector<Observation> s(10, obs_at(1));
    const Const h;
    const auto q = coin(0.5);
    const auto r = run_sequential_test(s, h, q, TestConfig{});
    ASSERT_EQ(r.trace.size(), 10u);
    for (const auto& row : r.trace) {
        EXPECT_EQ(row.factor, 1.0);
        EXPECT_EQ(row.log_s, 0.0);
    }
}

TEST(SequentialTest, UpdateRunsAfterFactor) {
    std::vector<std::size_t> calls;
    Learner h{{{1, 1}, {1, 1}}, &calls};
    std::vector<Observation> s{obs_at(1, 1), obs_at(1, 1), obs_at(0, 0)};
    const auto q = coin(0.5);
    const auto r = run_sequential_test(s, h, q, TestConfig{});
    ASSERT_EQ(calls, (std::vector<std::size_t>{1, 2, 3}));
    // first factor uses the prior counts only: h(1|y=1) = 1/2, integral 1/2
    EXPECT_DOUBLE_EQ(r.trace[0].factor, 1.0);
    // second uses counts after one (1,1): h = 2/3 vs integral 1/2
    EXPECT_DOUBLE_EQ(r.trace[1].factor, (2.0 / 3.0) / 0.5);
}

TEST(SequentialTest, StopOnCrossHalts) {
    std::vector<Observation> s(20, obs_at(1));
    const Table h{{0.01, 1.0}};
    const auto q = coin(0.5);
    TestConfig cfg;
    cfg.stop_on_cross = true;
    const auto r = run_sequential_test(s, h, q, cfg);
    ASSERT_TRUE(r.state.crossed());
    EXPECT_EQ(r.trace.size(), *r.state.stopped_at);
    EXPECT_EQ(first_crossing(r.trace, cfg.alpha), r.state.stopped_at);
}

TEST(SequentialTest, ErrorKeepsPartialTrace) {
    std::vector<Observation> s{obs_at(1), obs_at(0), {{1.0}, 1.0, {7.0}}, obs_at(1)};
    const Table h{{1.0, 2.0}};
    const auto q = coin(0.5);
    const auto r = run_sequential_test(s, h, q, TestConfig{});
    EXPECT_EQ(r.trace.size(), 2u);
    ASSERT_TRUE(r.error.has_value());
    EXPECT_EQ(r.error->kind(), ErrorKind::UnsupportedModel);
}

TEST(SequentialTest, DimensionChangeIsAnError) {
    std::vector<Observation> s{obs_at(1), {{1.0}, 1.0, {1.0, 2.0}}};
    const Const h;
    const auto q = coin(0.5);
    const auto r = run_sequential_test(s, h, q, TestConfig{});
    ASSERT_TRUE(r.error.has_value());
    EXPECT_EQ(r.error->kind(), ErrorKind::DimensionMismatch);
}

TEST(Trace, CsvFormat) {
    std::vector<TraceRow> t{{1, 2.0, std::log(2.0), false}, {2, 0.0, -std::numeric_limits<double>::infinity(), false}};
    std::ostringstream os;
    write_trace(os, t);
    EXPECT_EQ(os.str(), "n,factor,log_s,crossed\n1,2,0.69314718055994529,0\n2,0,-inf,0\n");
}

// Property: under the null, the exact factor for random h and random pmfs
// integrates to one, and MC factors never exceed M + 1.
TEST(Property, RandomTablesAreMeanOneAndBounded) {
    Rng gen(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t k = 2 + static_cast<std::size_t>(gen.uniform() * 5);
        std::vector<double> support(k), probs(k), vals(k);
        double tot = 0;
        for (std::size_t i = 0; i < k; ++i) {
            support[i] = static_cast<double>(i);
            probs[i] = gen.uniform() + 1e-3;
            tot += probs[i];
            vals[i] = gen.uniform() < 0.2 ? 0.0 : std::exp(3 * gen.normal());
        }
        for (double& p : probs) p /= tot;
        double s = std::accumulate(probs.begin(), probs.end() - 1, 0.0);
        probs.back() = 1.0 - s;
        const ConditionalModel q(DiscreteConditional(support, {{{1.0}, probs}}));
        const Table h{vals};
        double integral = 0;
        for (std::size_t i = 0; i < k; ++i) integral += probs[i] * vals[i];
        if (integral == 0) continue;
        double mean = 0;
        for (std::size_t i = 0; i < k; ++i) mean += probs[i] * e_factor_exact(h, obs_at(i), q).value;
        EXPECT_NEAR(mean, 1.0, 1e-12);
        const std::size_t m = 1 + static_cast<std::size_t>(gen.uniform() * 20);
        const auto f = e_factor_mc(h, obs_at(static_cast<double>(k - 1)), q, m, gen);
        EXPECT_LE(f.value, static_cast<double>(m + 1));
        EXPECT_GE(f.value, 0.0);
    }
}
