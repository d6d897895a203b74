// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mmface/model.hpp"

namespace mmface {

/// Linear-beta DDPM schedule. Timesteps are 1-based: beta(t) for t in [1, T].
class NoiseSchedule {
public:
    NoiseSchedule() : NoiseSchedule(200) {}

    explicit NoiseSchedule(int steps, double beta_start = 1e-4, double beta_end = 0.02) : steps_(steps) {
        if (steps < 1) throw ConfigError("schedule needs T >= 1");
        if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
            throw ConfigError("schedule betas must satisfy 0 < beta_start <= beta_end < 1");
        }
        beta_.resize(static_cast<std::size_t>(steps));
        alpha_.resize(beta_.size());
        alpha_bar_.resize(beta_.size());
        double prod = 1.0;
        for (int i = 0; i < steps; ++i) {
            const double frac = steps > 1 ? double(i) / double(steps - 1) : 0.0;
            beta_[i] = beta_start + frac * (beta_end - beta_start);
            alpha_[i] = 1.0 - beta_[i];
            prod *= alpha_[i];
            alpha_bar_[i] = prod;
        }
        beta_start_ = beta_start;
        beta_end_ = beta_end;
    }

    int T() const { return steps_; }
    double beta_start() const { return beta_start_; }
    double beta_end() const { return beta_end_; }
    double beta(int t) const { return beta_[index(t)]; }
    double alpha(int t) const { return alpha_[index(t)]; }
    double alpha_bar(int t) const { return alpha_bar_[index(t)]; }

private:
    std::size_t index(int t) const {
        if (t < 1 || t > steps_) {
            throw ConfigError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps_) + "]");
        }
        return static_cast<std::size_t>(t - 1);
    }

    int steps_;
    double beta_start_ = 1e-4, beta_end_ = 0.02;
    std::vector<double> beta_, alpha_, alpha_bar_;
};

/// x_t = sqrt(abar) x0 + sqrt(1 - abar) eps for an explicit abar.
template <class T>
std::vector<T> q_sample_at(std::span<const T> x0, double alpha_bar, std::span<const T> eps) {
    if (x0.size() != eps.size()) throw DimError("q_sample: x0 and eps sizes differ");
    const T a = static_cast<T>(std::sqrt(alpha_bar));
    const T s = static_cast<T>(std::sqrt(1.0 - alpha_bar));
    std::vector<T> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + s * eps[i];
    return out;
}

template <class T>
std::vector<T> q_sample(std::span<const T> x0, int t, std::span<const T> eps, const NoiseSchedule& sched) {
    return q_sample_at(x0, sched.alpha_bar(t), eps);
}

inline Image q_sample(const Image& x0, int t, const Image& eps, const NoiseSchedule& sched) {
    return Image(x0.dims(), q_sample<double>(x0.span(), t, eps.span(), sched));
}

/// Deterministic part of the reverse step: (x_t - beta/sqrt(1-abar) eps_hat) / sqrt(alpha).
template <class T>
std::vector<T> posterior_mean(std::span<const T> x_t, int t, std::span<const T> eps_hat, const NoiseSchedule& sched) {
    if (x_t.size() != eps_hat.size()) throw DimError("ancestral_step: x_t and eps_hat sizes differ");
    const double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
    std::vector<T> out(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i) {
        out[i] = static_cast<T>(inv_sqrt_alpha * (x_t[i] - coef * eps_hat[i]));
    }
    return out;
}

/// DDPM ancestral step with sigma_t = sqrt(beta_t); no noise at t = 1.
template <class T>
std::vector<T> ancestral_step(std::span<const T> x_t, int t, std::span<const T> eps_hat, const NoiseSchedule& sched,
                              std::mt19937_64& rng) {
    auto out = posterior_mean(x_t, t, eps_hat, sched);
    if (t > 1) {
        const double sigma = std::sqrt(sched.beta(t));
        std::normal_distribution<double> nd(0.0, 1.0);
        for (auto& v : out) v = static_cast<T>(v + sigma * nd(rng));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Classifier-free guidance

enum class GuidanceMode { None, Scalar, PerModality, Parallel };

inline std::string guidance_name(GuidanceMode m) {
    switch (m) {
        case GuidanceMode::None: return "none";
        case GuidanceMode::Scalar: return "scalar";
        case GuidanceMode::PerModality: return "per_modality";
        case GuidanceMode::Parallel: return "parallel";
    }
    return "?";
}

inline GuidanceMode parse_guidance(const std::string& s) {
    for (auto m : {GuidanceMode::None, GuidanceMode::Scalar, GuidanceMode::PerModality, GuidanceMode::Parallel}) {
        if (guidance_name(m) == s) return m;
    }
    throw ConfigError("unknown guidance mode '" + s + "' (expected none, scalar, per_modality or parallel)");
}

struct GuidanceSpec {
    GuidanceMode mode = GuidanceMode::None;
    double w = 0.0;                             // Scalar
    std::array<double, kModalityCount> w_m{};   // PerModality / Parallel, indexed by modality

    void validate() const {
        if (w < 0.0) throw ConfigError("guidance weight w must be >= 0");
        for (double v : w_m)
            if (v < 0.0) throw ConfigError("per-modality guidance weights must be >= 0");
    }
};

/// Multi-condition composition: sum_m (w_m + 1) cond_m - sum_m w_m uncond_m.
/// Scalar mode is the single-term case; None returns the one conditional.
template <class T>
std::vector<T> compose_cfg(const std::vector<std::span<const T>>& conds, const std::vector<std::span<const T>>& unconds,
                           GuidanceMode mode, std::span<const double> weights) {
    if (conds.empty()) throw DimError("compose_cfg: no conditional predictions");
    const std::size_t n = conds.front().size();
    for (const auto& c : conds)
        if (c.size() != n) throw DimError("compose_cfg: prediction sizes differ");
    for (const auto& u : unconds)
        if (u.size() != n) throw DimError("compose_cfg: prediction sizes differ");
    if (mode == GuidanceMode::None) {
        if (conds.size() != 1) throw DimError("compose_cfg: mode none takes exactly one conditional prediction");
        return std::vector<T>(conds.front().begin(), conds.front().end());
    }
    if (mode == GuidanceMode::Scalar && (conds.size() != 1 || unconds.size() != 1)) {
        throw DimError("compose_cfg: scalar mode takes exactly one conditional and one unconditional prediction");
    }
    if (unconds.size() != conds.size() || weights.size() != conds.size()) {
        throw DimError("compose_cfg: " + std::to_string(conds.size()) + " conditional, " +
                       std::to_string(unconds.size()) + " unconditional predictions and " +
                       std::to_string(weights.size()) + " weights");
    }
    std::vector<T> out(n, T(0));
    for (std::size_t m = 0; m < conds.size(); ++m) {
        const T a = static_cast<T>(weights[m] + 1.0);
        for (std::size_t i = 0; i < n; ++i) out[i] += a * conds[m][i];
    }
    for (std::size_t m = 0; m < unconds.size(); ++m) {
        const T b = static_cast<T>(weights[m]);
        for (std::size_t i = 0; i < n; ++i) out[i] -= b * unconds[m][i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sampling

struct SampleResult {
    std::vector<Image> images;
    std::size_t forward_passes = 0;
};

namespace detail {

inline std::mt19937_64 chain_rng(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5a3u};
    return std::mt19937_64(seq);
}

}  // namespace detail

/// Ancestral sampling of n images. `models` holds one predictor, except in
/// Parallel mode where it holds one per active modality (matched by the
/// modality each accepts). Image i uses an RNG stream derived from
/// (seed, i), so results do not depend on n or evaluation order.
inline SampleResult sample(const std::vector<const NoisePredictor*>& models, const ConditionSet& cs,
                           const GuidanceSpec& spec, const NoiseSchedule& sched, std::uint64_t seed, std::size_t n) {
    spec.validate();
    if (models.empty()) throw ConfigError("sample: no model supplied");
    const auto active = cs.active_set().members();
    std::vector<const NoisePredictor*> per_modality;
    if (spec.mode == GuidanceMode::Parallel) {
        if (active.empty()) throw ConfigError("parallel guidance needs at least one active modality");
        for (auto m : active) {
            const NoisePredictor* found = nullptr;
            for (const auto* p : models)
                if (p->accepted().contains(m)) found = p;
            if (!found) throw ConfigError("parallel guidance: no checkpoint accepts " + std::string(modality_name(m)));
            per_modality.push_back(found);
        }
    } else if (models.size() != 1) {
        throw ConfigError("guidance mode " + guidance_name(spec.mode) + " takes exactly one checkpoint");
    }
    if (spec.mode == GuidanceMode::PerModality && active.empty()) {
        throw ConfigError("per-modality guidance needs at least one active modality");
    }
    const int side = models.front()->side();
    const ConditionSet empty(side);

    SampleResult result;
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = detail::chain_rng(seed, i);
        std::normal_distribution<double> nd(0.0, 1.0);
        Image x = Image::matrix(static_cast<std::size_t>(side), static_cast<std::size_t>(side));
        for (auto& v : x.values()) v = nd(rng);
        for (int t = sched.T(); t >= 1; --t) {
            auto predict = [&](const NoisePredictor* p, const ConditionSet& c) {
                ++result.forward_passes;
                return p->predict(x, t, c);
            };
            std::vector<Image> conds, unconds;
            std::vector<double> weights;
            switch (spec.mode) {
                case GuidanceMode::None:
                    conds.push_back(predict(models.front(), cs));
                    break;
                case GuidanceMode::Scalar:
                    conds.push_back(predict(models.front(), cs));
                    unconds.push_back(predict(models.front(), empty));
                    weights.push_back(spec.w);
                    break;
                case GuidanceMode::PerModality:
                    for (auto m : active) {
                        conds.push_back(predict(models.front(), cs.restricted(ModalitySet{m})));
                        weights.push_back(spec.w_m[index_of(m)]);
                    }
                    // One shared unconditional prediction enters every term.
                    unconds.assign(active.size(), predict(models.front(), empty));
                    break;
                case GuidanceMode::Parallel:
                    for (std::size_t k = 0; k < active.size(); ++k) {
                        conds.push_back(predict(per_modality[k], cs.restricted(ModalitySet{active[k]})));
                        unconds.push_back(predict(per_modality[k], empty));
                        weights.push_back(spec.w_m[index_of(active[k])]);
                    }
                    break;
            }
            std::vector<std::span<const double>> cond_spans, uncond_spans;
            for (const auto& c : conds) cond_spans.push_back(c.span());
            for (const auto& u : unconds) uncond_spans.push_back(u.span());
            const auto eps_hat = compose_cfg<double>(cond_spans, uncond_spans, spec.mode, weights);
            x = Image(x.dims(), ancestral_step<double>(x.span(), t, eps_hat, sched, rng));
        }
        x.require_finite("sampled image");
        result.images.push_back(std::move(x));
    }
    return result;
}

}  // namespace mmface
