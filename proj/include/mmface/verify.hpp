// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>

#include "mmface/diffusion.hpp"
#include "mmface/model.hpp"
#include "mmface/numerics/grad_check.hpp"

namespace mmface {

inline constexpr double kGradCheckTolerance = 1e-4;

/// Gradient check of the micro denoiser in 64-bit: auxiliary heads and
/// modulation on, all four surrogates and encoders in the graph. The loss
/// sums a sample with every modality active and one with only MASK active
/// (so the other surrogates enter as bare tokens).
inline GradCheckReport micro_grad_check(std::size_t n_probe = 64, std::uint64_t seed = 0, double h = 1e-5) {
    DenoiserConfig dc = DenoiserConfig::micro();
    dc.K = 3;
    auto model = Model<double>::create(dc, FusionConfig{}, seed);
    // The modulation output layer starts at zero, which would leave its
    // input layer with identically zero gradients; move off that point.
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> nd(0.0, 0.3);
    for (auto& v : model.params.param("eam.L2").values()) v = nd(rng);
    for (auto& v : model.params.param("eam.L2.bias").values()) v = nd(rng);

    const NoiseSchedule sched;
    const auto face = sample_params(seed + 11);
    const auto full = derive_conditions(face, dc.side);
    const Image x0 = render(face, dc.side);
    struct Case {
        ConditionSet cs;
        int t;
        Image eps, x_t;
    };
    std::vector<Case> cases;
    for (const auto& [cs, t] : {std::pair{full, 37}, std::pair{full.restricted(ModalitySet{Modality::Mask}), 151}}) {
        Image eps = Image::matrix(x0.rows(), x0.cols());
        for (auto& v : eps.values()) v = std::normal_distribution<double>(0.0, 1.0)(rng);
        cases.push_back({cs, t, eps, q_sample(x0, t, eps, sched)});
    }

    Objective loss = [&](ParamStore<double>& ps, bool with_grad) {
        double total = 0.0;
        for (const auto& c : cases) {
            Graph<double> g(with_grad);
            auto x = g.constant(c.x_t.reshaped({1, c.x_t.size()}));
            const auto seq = fuse(g, ps, c.cs, model.fusion);
            const auto out = denoiser_forward(g, ps, dc, x, c.t, seq);
            const auto l = g.mse(out.eps, g.constant(c.eps.reshaped({1, c.eps.size()})));
            total += g.value(l)[0];
            if (with_grad) g.backward(l);
        }
        return total;
    };
    return grad_check(loss, model.params, h, n_probe, seed, ProbeMode::PerTensor);
}

}  // namespace mmface
