// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mmface/diffusion.hpp"

namespace mmface {

// Closed-form 1-D Gaussian-mixture diffusion: exact noise predictions for
// checking the sampler and guidance composition without any training.

struct MixtureComponent {
    double weight = 1.0;
    double mean = 0.0;
    double std = 1.0;
};

class GaussianMixture1D {
public:
    explicit GaussianMixture1D(std::vector<MixtureComponent> comps) : comps_(std::move(comps)) {
        if (comps_.empty()) throw ConfigError("mixture needs at least one component");
        double total = 0.0;
        for (const auto& c : comps_) {
            if (!(c.weight > 0.0) || !(c.std > 0.0)) throw ConfigError("mixture weights and stds must be positive");
            total += c.weight;
        }
        if (std::abs(total - 1.0) > 1e-12) throw ConfigError("mixture weights must sum to 1");
    }

    const std::vector<MixtureComponent>& components() const { return comps_; }
    std::size_t size() const { return comps_.size(); }
    const MixtureComponent& operator[](std::size_t i) const { return comps_.at(i); }

    /// Single component as a mixture of its own.
    GaussianMixture1D only(std::size_t i) const { return GaussianMixture1D({{1.0, comps_.at(i).mean, comps_.at(i).std}}); }

    double log_density(double x) const {
        // log-sum-exp over components
        std::vector<double> terms;
        for (const auto& c : comps_) terms.push_back(std::log(c.weight) + log_normal(x, c.mean, c.std));
        const double mx = *std::max_element(terms.begin(), terms.end());
        double s = 0.0;
        for (double v : terms) s += std::exp(v - mx);
        return mx + std::log(s);
    }

    /// d/dx log p(x): posterior-weighted component scores.
    double score(double x) const {
        const double lp = log_density(x);
        double s = 0.0;
        for (const auto& c : comps_) {
            const double resp = std::exp(std::log(c.weight) + log_normal(x, c.mean, c.std) - lp);
            s += resp * (c.mean - x) / (c.std * c.std);
        }
        return s;
    }

    /// Index of the component whose mean is nearest x.
    std::size_t nearest(double x) const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < comps_.size(); ++i)
            if (std::abs(x - comps_[i].mean) < std::abs(x - comps_[best].mean)) best = i;
        return best;
    }

private:
    static double log_normal(double x, double mu, double sd) {
        const double z = (x - mu) / sd;
        return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
    }

    std::vector<MixtureComponent> comps_;
};

/// Push-forward of the mixture through the forward process at step t.
inline GaussianMixture1D marginal_at(const GaussianMixture1D& gm, int t, const NoiseSchedule& sched) {
    const double ab = sched.alpha_bar(t);
    std::vector<MixtureComponent> out;
    for (const auto& c : gm.components()) {
        out.push_back({c.weight, std::sqrt(ab) * c.mean, std::sqrt(ab * c.std * c.std + (1.0 - ab))});
    }
    return GaussianMixture1D(std::move(out));
}

/// eps* = -sqrt(1 - abar_t) * d/dx log p_t(x). With `component`, the score of
/// that component alone (the conditional prediction).
inline double optimal_eps(const GaussianMixture1D& gm, double x, int t, const NoiseSchedule& sched,
                          std::optional<std::size_t> component = std::nullopt) {
    const auto src = component ? gm.only(*component) : gm;
    return -std::sqrt(1.0 - sched.alpha_bar(t)) * marginal_at(src, t, sched).score(x);
}

using ScalarEps = std::function<double(double x, int t)>;

/// Runs n independent reverse chains from N(0, 1) at T down to x_0, using the
/// same per-chain RNG streams as image sampling.
inline std::vector<double> reverse_chains(const ScalarEps& eps, const NoiseSchedule& sched, std::size_t n,
                                          std::uint64_t seed) {
    std::vector<double> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = detail::chain_rng(seed, i);
        std::normal_distribution<double> nd(0.0, 1.0);
        double x = nd(rng);
        for (int t = sched.T(); t >= 1; --t) {
            const double e = eps(x, t);
            x = ancestral_step<double>(std::span<const double>(&x, 1), t, std::span<const double>(&e, 1), sched, rng)[0];
        }
        out.push_back(x);
    }
    return out;
}

/// Scalar guidance on the analytic predictions: conditional on `component`,
/// unconditional on the whole mixture.
inline ScalarEps guided_eps(const GaussianMixture1D& gm, const NoiseSchedule& sched, std::size_t component, double w) {
    return [&gm, &sched, component, w](double x, int t) {
        const double c = optimal_eps(gm, x, t, sched, component);
        const double u = optimal_eps(gm, x, t, sched);
        const std::vector<std::span<const double>> conds{std::span<const double>(&c, 1)};
        const std::vector<std::span<const double>> unconds{std::span<const double>(&u, 1)};
        const double wt = w;
        return compose_cfg<double>(conds, unconds, GuidanceMode::Scalar, std::span<const double>(&wt, 1))[0];
    };
}

struct ChainStats {
    std::string scenario;
    double w = 0.0;
    std::size_t n = 0;
    double mean = 0.0, std = 0.0;
    std::vector<double> fractions;  // per component, by nearest mean
};

inline ChainStats chain_stats(const std::string& scenario, double w, const std::vector<double>& xs,
                              const GaussianMixture1D& gm) {
    ChainStats s{scenario, w, xs.size(), 0.0, 0.0, std::vector<double>(gm.size(), 0.0)};
    for (double x : xs) {
        s.mean += x / double(xs.size());
        s.fractions[gm.nearest(x)] += 1.0 / double(xs.size());
    }
    for (double x : xs) s.std += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(s.std / double(xs.size() - 1));
    return s;
}

struct OracleCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct OracleReport {
    std::vector<OracleCheck> checks;
    std::vector<ChainStats> chains;

    bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
    }

    std::string chains_csv() const {
        std::ostringstream os;
        os << "scenario,w,n,mean,std,frac_0,frac_1\n";
        for (const auto& c : chains) {
            os << c.scenario << ',' << c.w << ',' << c.n << ',' << c.mean << ',' << c.std;
            for (std::size_t i = 0; i < 2; ++i) os << ',' << (i < c.fractions.size() ? c.fractions[i] : 0.0);
            os << '\n';
        }
        return os.str();
    }
};

struct OracleOptions {
    std::size_t chains = 5000;
    std::uint64_t seed = 7;
    std::size_t condition = 1;  // conditioned component
    double weight_tol = 0.03;
    double mean_tol = 0.05;
    double std_tol = 0.05;
    std::vector<double> ladder{0.0, 1.0, 2.0, 4.0};
};

/// The guidance-composition checks against the analytic oracle:
///  - one-term per-modality composition equals scalar composition bitwise;
///  - w = 0 returns the conditional prediction bitwise;
///  - conditional chains reproduce the conditioned component's mean and std;
///  - unconditional chains reproduce the component weights;
///  - scalar strength on `overlap` increases the conditioned-component mass.
inline OracleReport verify_cfg_reduction(const GaussianMixture1D& gm, const NoiseSchedule& sched,
                                         const GaussianMixture1D& overlap, const OracleOptions& opt = {}) {
    OracleReport rep;
    {
        bool ok_a = true, ok_b = true;
        std::string where_a, where_b;
        for (int t : {1, sched.T() / 4, sched.T() / 2, sched.T()}) {
            if (t < 1) continue;
            for (double x = -4.0; x <= 4.0; x += 0.25) {
                const double c = optimal_eps(gm, x, t, sched, opt.condition);
                const double u = optimal_eps(gm, x, t, sched);
                const std::vector<std::span<const double>> cs{std::span<const double>(&c, 1)};
                const std::vector<std::span<const double>> us{std::span<const double>(&u, 1)};
                for (double w : opt.ladder) {
                    const double scalar = compose_cfg<double>(cs, us, GuidanceMode::Scalar, std::span(&w, 1))[0];
                    const double per = compose_cfg<double>(cs, us, GuidanceMode::PerModality, std::span(&w, 1))[0];
                    if (scalar != per && ok_a) {
                        ok_a = false;
                        std::ostringstream os;
                        os << "t=" << t << " x=" << x << " w=" << w;
                        where_a = os.str();
                    }
                }
                const double zero = 0.0;
                const double g0 = compose_cfg<double>(cs, us, GuidanceMode::Scalar, std::span(&zero, 1))[0];
                if (g0 != c && ok_b) {
                    ok_b = false;
                    std::ostringstream os;
                    os << "t=" << t << " x=" << x;
                    where_b = os.str();
                }
            }
        }
        rep.checks.push_back({"single-term per-modality == scalar (bitwise)", ok_a, ok_a ? "all grid points" : where_a});
        rep.checks.push_back({"w=0 returns conditional (bitwise)", ok_b, ok_b ? "all grid points" : where_b});
    }
    {
        const auto xs = reverse_chains(
            [&](double x, int t) { return optimal_eps(gm, x, t, sched, opt.condition); }, sched, opt.chains, opt.seed);
        const auto st = chain_stats("conditional", 0.0, xs, gm);
        rep.chains.push_back(st);
        const auto& target = gm[opt.condition];
        const bool ok = std::abs(st.mean - target.mean) <= opt.mean_tol && std::abs(st.std - target.std) <= opt.std_tol;
        std::ostringstream os;
        os << "mean " << st.mean << " (target " << target.mean << " +- " << opt.mean_tol << "), std " << st.std
           << " (target " << target.std << " +- " << opt.std_tol << ")";
        rep.checks.push_back({"conditional chains match conditioned component", ok, os.str()});
    }
    {
        const auto xs =
            reverse_chains([&](double x, int t) { return optimal_eps(gm, x, t, sched); }, sched, opt.chains, opt.seed + 1);
        const auto st = chain_stats("unconditional", 0.0, xs, gm);
        rep.chains.push_back(st);
        bool ok = true;
        std::ostringstream os;
        for (std::size_t i = 0; i < gm.size(); ++i) {
            ok = ok && std::abs(st.fractions[i] - gm[i].weight) <= opt.weight_tol;
            os << (i ? ", " : "") << "component " << i << ": " << st.fractions[i] << " (target " << gm[i].weight << ")";
        }
        rep.checks.push_back({"unconditional chains match component weights", ok, os.str()});
    }
    {
        std::vector<double> mass;
        for (double w : opt.ladder) {
            // Common random numbers across w isolate the effect of guidance.
            const auto xs = reverse_chains(guided_eps(overlap, sched, opt.condition, w), sched, opt.chains, opt.seed + 2);
            const auto st = chain_stats("guided_overlap", w, xs, overlap);
            rep.chains.push_back(st);
            mass.push_back(st.fractions[opt.condition]);
        }
        bool ok = true;
        std::ostringstream os;
        for (std::size_t i = 0; i < mass.size(); ++i) {
            if (i > 0) ok = ok && mass[i] > mass[i - 1];
            os << (i ? ", " : "") << "w=" << opt.ladder[i] << ": " << mass[i];
        }
        rep.checks.push_back({"guidance strength monotonically raises conditioned mass", ok, os.str()});
    }
    return rep;
}

/// Mixtures used by the oracle suite: well separated, and overlapping for the
/// guidance-strength ladder (separated components already reach full mass at w = 0).
inline GaussianMixture1D separated_mixture() { return GaussianMixture1D({{0.5, -2.0, 0.3}, {0.5, 2.0, 0.3}}); }
inline GaussianMixture1D overlapping_mixture() { return GaussianMixture1D({{0.5, -0.5, 1.0}, {0.5, 0.5, 1.0}}); }

}  // namespace mmface
