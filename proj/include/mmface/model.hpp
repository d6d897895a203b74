// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include "mmface/conditioning.hpp"
#include "mmface/denoiser.hpp"

namespace mmface {

/// Anything that predicts noise for an image. Sampling is written against
/// this interface so float and double models, and per-modality baselines,
/// share one sampler.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual Image predict(const Image& x_t, int t, const ConditionSet& cs) const = 0;
    virtual ModalitySet accepted() const = 0;
    virtual int side() const = 0;
};

/// Denoiser + condition encoders + surrogate bank, all in one ParamStore.
template <class T>
struct Model {
    DenoiserConfig denoiser;
    FusionConfig fusion;
    ParamStore<T> params;

    static Model create(const DenoiserConfig& dc, const FusionConfig& fc, std::uint64_t seed) {
        Model m{dc, fc, {}};
        std::mt19937_64 rng(seed);
        init_denoiser(m.params, dc, rng);
        init_conditioning(m.params, fc, dc.d, rng);
        return m;
    }

    /// Builds the graph for one sample and returns the output handles.
    DenoiserOutput<T> forward(Graph<T>& g, const Image& x_t, int t, const ConditionSet& cs) {
        auto x = g.constant(x_t.reshaped({1, x_t.size()}).template cast<T>());
        const auto seq = fuse(g, params, cs, fusion);
        return denoiser_forward(g, params, denoiser, x, t, seq);
    }

    Image predict(const Image& x_t, int t, const ConditionSet& cs) const {
        Graph<T> g(false);
        // A non-recording graph only reads parameters.
        auto& self = const_cast<Model&>(*this);
        const auto out = self.forward(g, x_t, t, cs);
        Image eps = g.value(out.eps).template cast<double>().reshaped(x_t.dims());
        eps.require_finite("predicted noise");
        return eps;
    }
};

template <class T>
class ModelPredictor final : public NoisePredictor {
public:
    explicit ModelPredictor(const Model<T>& model) : model_(model) {}
    Image predict(const Image& x_t, int t, const ConditionSet& cs) const override { return model_.predict(x_t, t, cs); }
    ModalitySet accepted() const override { return model_.fusion.accepted; }
    int side() const override { return model_.denoiser.side; }

private:
    const Model<T>& model_;
};

}  // namespace mmface
