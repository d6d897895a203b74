// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mmface/analytic.hpp"

using namespace mmface;

namespace {

double normal_cdf(double x, double mu, double sd) { return 0.5 * std::erfc(-(x - mu) / (sd * std::sqrt(2.0))); }

double mixture_cdf(const GaussianMixture1D& gm, double x) {
    double s = 0.0;
    for (const auto& c : gm.components()) s += c.weight * normal_cdf(x, c.mean, c.std);
    return s;
}

}  // namespace

TEST(Mixture, ValidatesComponents) {
    EXPECT_THROW(GaussianMixture1D({}), ConfigError);
    EXPECT_THROW(GaussianMixture1D({{0.5, 0.0, 1.0}, {0.4, 1.0, 1.0}}), ConfigError);
    EXPECT_THROW(GaussianMixture1D({{1.0, 0.0, 0.0}}), ConfigError);
    EXPECT_THROW(GaussianMixture1D({{-0.5, 0.0, 1.0}, {1.5, 0.0, 1.0}}), ConfigError);
    EXPECT_NO_THROW(GaussianMixture1D({{0.3, 0.0, 1.0}, {0.7, 1.0, 2.0}}));
}

TEST(Mixture, DensityAndScore) {
    const GaussianMixture1D gm({{0.3, -1.0, 0.5}, {0.7, 1.5, 0.8}});
    // Direct density, not via log-sum-exp.
    auto pdf = [](double x, double mu, double sd) {
        return std::exp(-0.5 * (x - mu) * (x - mu) / (sd * sd)) / (sd * std::sqrt(2.0 * std::numbers::pi));
    };
    for (double x = -3.0; x <= 3.0; x += 0.37) {
        EXPECT_NEAR(std::exp(gm.log_density(x)), 0.3 * pdf(x, -1.0, 0.5) + 0.7 * pdf(x, 1.5, 0.8), 1e-12);
        const double h = 1e-5;
        const double fd = (gm.log_density(x + h) - gm.log_density(x - h)) / (2 * h);
        EXPECT_NEAR(gm.score(x), fd, 1e-6) << "x=" << x;
    }
    EXPECT_EQ(gm.nearest(-0.2), 0u);
    EXPECT_EQ(gm.nearest(0.5), 1u);
}

TEST(Mixture, SymmetricMixtureHasOddScore) {
    const auto gm = separated_mixture();
    for (double x : {0.1, 0.7, 1.9, 3.3}) EXPECT_NEAR(gm.score(-x), -gm.score(x), 1e-12);
    EXPECT_NEAR(gm.score(0.0), 0.0, 1e-15);
}

TEST(Marginal, StandardNormalIsPreserved) {
    const NoiseSchedule s;
    const GaussianMixture1D std_normal({{1.0, 0.0, 1.0}});
    for (int t : {1, 50, 200}) {
        const auto m = marginal_at(std_normal, t, s);
        EXPECT_NEAR(m[0].mean, 0.0, 1e-15);
        EXPECT_NEAR(m[0].std, 1.0, 1e-12);
        // Data N(0, 1): eps* = sqrt(1 - abar) x.
        for (double x : {-1.2, 0.4, 2.0}) EXPECT_NEAR(optimal_eps(std_normal, x, t, s), std::sqrt(1 - s.alpha_bar(t)) * x, 1e-12);
    }
}

TEST(Marginal, SingleGaussianPosteriorNoise) {
    // E[eps | x_t] for x0 ~ N(mu, sd^2): sqrt(1-a) (x - sqrt(a) mu) / (a sd^2 + 1 - a).
    const NoiseSchedule s;
    const GaussianMixture1D g({{1.0, 0.8, 0.3}});
    for (int t : {3, 77, 180}) {
        const double a = s.alpha_bar(t);
        for (double x : {-1.0, 0.0, 0.9, 2.2}) {
            const double expected = std::sqrt(1 - a) * (x - std::sqrt(a) * 0.8) / (a * 0.09 + 1 - a);
            EXPECT_NEAR(optimal_eps(g, x, t, s), expected, 1e-12);
        }
    }
}

TEST(Marginal, MatchesMonteCarloForwardProcess) {
    const NoiseSchedule s;
    const auto gm = separated_mixture();
    std::mt19937_64 rng(99);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::bernoulli_distribution pick(0.5);
    for (int t : {10, 100, 200}) {
        const double a = s.alpha_bar(t);
        std::vector<double> xs(20000);
        for (auto& x : xs) {
            const auto& c = gm[pick(rng) ? 1 : 0];
            const double x0 = c.mean + c.std * nd(rng);
            x = std::sqrt(a) * x0 + std::sqrt(1 - a) * nd(rng);
        }
        std::sort(xs.begin(), xs.end());
        const auto m = marginal_at(gm, t, s);
        double ks = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double f = mixture_cdf(m, xs[i]);
            ks = std::max({ks, std::abs(f - double(i) / xs.size()), std::abs(f - double(i + 1) / xs.size())});
        }
        EXPECT_LT(ks, 0.02) << "t=" << t;
    }
}

TEST(Chains, DeterministicInSeed) {
    const NoiseSchedule s(50);
    const auto gm = separated_mixture();
    auto eps = [&](double x, int t) { return optimal_eps(gm, x, t, s); };
    const auto a = reverse_chains(eps, s, 10, 3);
    EXPECT_EQ(a, reverse_chains(eps, s, 10, 3));
    EXPECT_NE(a, reverse_chains(eps, s, 10, 4));
    const auto b = reverse_chains(eps, s, 4, 3);
    EXPECT_TRUE(std::equal(b.begin(), b.end(), a.begin()));
}

TEST(Chains, GuidanceZeroIsConditional) {
    const NoiseSchedule s;
    const auto gm = overlapping_mixture();
    const auto g0 = guided_eps(gm, s, 1, 0.0);
    for (double x : {-2.0, 0.0, 1.3})
        for (int t : {1, 120}) EXPECT_EQ(g0(x, t), optimal_eps(gm, x, t, s, 1));
}

TEST(Oracle, GuidanceCompositionReducesToTheAnalyticTarget) {
    const NoiseSchedule s;
    const auto rep = verify_cfg_reduction(separated_mixture(), s, overlapping_mixture());
    for (const auto& c : rep.checks) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
    ASSERT_EQ(rep.checks.size(), 5u);
    ASSERT_GE(rep.chains.size(), 2u + 4u);
    // Conditional chains: component 1 of the separated mixture.
    EXPECT_NEAR(rep.chains[0].mean, 2.0, 0.05);
    EXPECT_NEAR(rep.chains[0].std, 0.3, 0.05);
    EXPECT_NEAR(rep.chains[1].fractions[0], 0.5, 0.03);
    const auto csv = rep.chains_csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "scenario,w,n,mean,std,frac_0,frac_1");
}
