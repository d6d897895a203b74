// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mmface/conditioning.hpp"
#include "mmface/numerics/graph.hpp"

namespace mmface {

struct DenoiserConfig {
    int side = 16;
    std::size_t width = 128;
    std::size_t blocks = 4;
    std::size_t d = 64;
    std::size_t K = 3;  // auxiliary noise heads; 0 disables modulation
    std::size_t t_emb_dim = 32;
    std::size_t eam_hidden = 64;
    bool input_skip = true;  // add gamma(t) x_t to every noise head
    int T = 200;  // horizon of the sinusoidal time embedding

    static DenoiserConfig desk() { return {}; }
    static DenoiserConfig micro() {
        DenoiserConfig c;
        c.width = 32;
        c.blocks = 2;
        c.d = 8;
        return c;
    }

    std::size_t pixels() const { return static_cast<std::size_t>(side) * static_cast<std::size_t>(side); }

    void validate() const {
        require_side(side);
        if (width < 1 || blocks < 1 || d < 1) throw ConfigError("denoiser width, blocks and d must be >= 1");
        if (t_emb_dim < 2 || t_emb_dim % 2) throw ConfigError("t_emb_dim must be a positive even number");
        if (T < 1) throw ConfigError("time horizon T must be >= 1");
    }

    friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

/// Sinusoidal embedding: t_emb_dim / 2 frequencies spaced geometrically
/// from 1 down to 1/T, as [sin..., cos...].
inline Tensor<double> time_features(int t, std::size_t dim, int horizon) {
    const std::size_t half = dim / 2;
    Tensor<double> out = Tensor<double>::matrix(1, dim);
    for (std::size_t i = 0; i < half; ++i) {
        const double frac = half > 1 ? double(i) / double(half - 1) : 0.0;
        const double omega = std::pow(double(horizon), -frac);
        out[i] = std::sin(t * omega);
        out[half + i] = std::cos(t * omega);
    }
    return out;
}

template <class T>
void init_denoiser(ParamStore<T>& ps, const DenoiserConfig& c, std::mt19937_64& rng) {
    c.validate();
    auto linear = [&](const std::string& name, std::size_t in, std::size_t out, double gain = 1.0) {
        ps.add_normal(name, {in, out}, static_cast<T>(gain / std::sqrt(double(in))), rng);
        ps.add_zeros(name + ".bias", {1, out});
    };
    const std::size_t px = c.pixels();
    linear("trunk.in", px, c.width);
    linear("temb.proj", c.t_emb_dim, c.width);
    for (std::size_t b = 0; b < c.blocks; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        linear(p + "W1", 2 * c.width + c.d, c.width);
        linear(p + "W2", c.width, c.width, 0.5);
        ps.add_normal(p + "q", {c.d, 1}, static_cast<T>(1.0 / std::sqrt(double(c.d))), rng);
        ps.add_normal(p + "Wk", {c.d, c.d}, static_cast<T>(1.0 / std::sqrt(double(c.d))), rng);
        ps.add_normal(p + "Wv", {c.d, c.d}, static_cast<T>(1.0 / std::sqrt(double(c.d))), rng);
    }
    if (c.input_skip) {
        ps.add_zeros("skip.gain", {c.t_emb_dim, 1});
        ps.add_zeros("skip.gain.bias", {1, 1});
    }
    linear("head.base", c.width, px);
    for (std::size_t k = 0; k < c.K; ++k) linear("head.aux" + std::to_string(k), c.width, px);
    if (c.K > 0) {
        linear("eam.L1", c.d + c.width, c.eam_hidden);
        ps.add_zeros("eam.L2", {c.eam_hidden, c.K});
        ps.add_zeros("eam.L2.bias", {1, c.K});
    }
}

template <class T>
struct DenoiserOutput {
    using Var = typename Graph<T>::Var;
    Var eps;                  // 1 x S^2
    Var base;                 // n_b
    std::vector<Var> aux;     // n_k
    std::optional<Var> weights;  // 1 x K, absent when K = 0
    Var feature;              // f_u, 1 x width
};

template <class T>
typename Graph<T>::Var linear(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var x, const std::string& name) {
    return g.add_rowvec(g.matmul(x, g.param(ps, name)), g.param(ps, name + ".bias"));
}

/// Attention readout of one learned query over the token sequence. Scores
/// are C Wk q / sqrt(d); the readout is softmax(scores) C Wv. Returns a zero
/// context when there are no tokens.
template <class T>
typename Graph<T>::Var attention_readout(Graph<T>& g, ParamStore<T>& ps, const TokenSequence<T>& seq,
                                         const std::string& prefix, std::size_t d) {
    if (!seq.tokens) return g.constant(Tensor<T>::matrix(1, d));
    const auto tokens = *seq.tokens;
    const auto kq = g.matmul(g.param(ps, prefix + "Wk"), g.param(ps, prefix + "q"));  // d x 1
    const auto scores = g.scale(g.transpose(g.matmul(tokens, kq)), static_cast<T>(1.0 / std::sqrt(double(d))));
    const auto attn = g.softmax_rows(scores);                                    // 1 x n
    return g.matmul(g.matmul(attn, tokens), g.param(ps, prefix + "Wv"));         // 1 x d
}

/// w = 2 sigmoid(L2 a(L1 [mean(C) ; f_u])).
template <class T>
typename Graph<T>::Var eam_weights(Graph<T>& g, ParamStore<T>& ps, const TokenSequence<T>& seq,
                                   typename Graph<T>::Var feature, std::size_t d) {
    const auto pooled = seq.tokens ? g.mean_rows(*seq.tokens) : g.constant(Tensor<T>::matrix(1, d));
    const auto hidden = g.silu(linear(g, ps, g.concat_cols({pooled, feature}), "eam.L1"));
    return g.scale(g.sigmoid(linear(g, ps, hidden, "eam.L2")), T(2));
}

/// Noise prediction for one flattened image x_t (1 x S^2) at timestep t.
template <class T>
DenoiserOutput<T> denoiser_forward(Graph<T>& g, ParamStore<T>& ps, const DenoiserConfig& c,
                                   typename Graph<T>::Var x_t, int t, const TokenSequence<T>& seq) {
    if (t < 1 || t > c.T) throw ConfigError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(c.T) + "]");
    if (g.value(x_t).size() != c.pixels()) {
        throw DimError("denoiser input dims " + dims_str(g.value(x_t).dims()) + " vs side " + std::to_string(c.side));
    }
    if (seq.tokens && g.value(*seq.tokens).cols() != c.d) {
        throw DimError("token dims " + dims_str(g.value(*seq.tokens).dims()) + " do not match d=" + std::to_string(c.d));
    }
    auto h = linear(g, ps, x_t, "trunk.in");
    const auto tfeat = g.constant(time_features(t, c.t_emb_dim, c.T).template cast<T>());
    const auto temb = linear(g, ps, tfeat, "temb.proj");
    for (std::size_t b = 0; b < c.blocks; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        const auto ctx = attention_readout(g, ps, seq, p, c.d);
        const auto inner = g.silu(linear(g, ps, g.concat_cols({h, temb, ctx}), p + "W1"));
        h = g.add(h, linear(g, ps, inner, p + "W2"));
    }
    DenoiserOutput<T> out;
    out.feature = h;
    // The trunk is narrower than the image, so on its own it cannot pass the
    // full-rank noise in x_t through to the output; a per-timestep scalar
    // gain on x_t, shared by every head, carries that part.
    std::optional<typename Graph<T>::Var> skip;
    if (c.input_skip) skip = g.matmul(linear(g, ps, tfeat, "skip.gain"), x_t);
    auto head = [&](const std::string& name) {
        const auto n = linear(g, ps, h, name);
        return skip ? g.add(n, *skip) : n;
    };
    out.base = head("head.base");
    for (std::size_t k = 0; k < c.K; ++k) out.aux.push_back(head("head.aux" + std::to_string(k)));
    if (c.K == 0) {
        out.eps = out.base;
    } else {
        out.weights = eam_weights(g, ps, seq, h, c.d);
        out.eps = g.eam_combine(out.base, out.aux, *out.weights);
    }
    return out;
}

}  // namespace mmface
