// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mmface/facegen.hpp"
#include "mmface/numerics/graph.hpp"

namespace mmface {

// Condition encoders map each payload onto a fixed number of tokens:
// MASK, SKETCH and LOWRES use a 4 x 4 patch grid (16 tokens); ATTR is one
// token. Each token position owns its own linear map, so the patch index is
// carried by which weights produced the token rather than by its order.

inline constexpr std::size_t kPatchGrid = 4;
inline constexpr std::size_t kPatchTokens = kPatchGrid * kPatchGrid;

inline std::size_t token_count(Modality m) { return m == Modality::Attr ? 1 : kPatchTokens; }

/// Width of one token's encoder input.
inline std::size_t encoder_input_dim(Modality m) {
    switch (m) {
        case Modality::Mask: return kMaskClasses * 16;  // one-hot over a 4 x 4 pixel patch
        case Modality::Sketch: return 16;
        case Modality::Attr: return kAttrBits;
        case Modality::LowRes: return 1;
    }
    return 0;
}

inline std::string encoder_name(Modality m) { return "enc." + std::string(modality_name(m)); }
inline std::string surrogate_name(Modality m) { return "surrogate." + std::string(modality_name(m)); }

namespace detail {

/// Average-pools an S x S plane down to 16 x 16 (identity at S = 16).
inline std::vector<double> pool_to_16(const std::vector<double>& plane, std::size_t side) {
    const std::size_t f = side / 16;
    std::vector<double> out(256, 0.0);
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) out[(y / f) * 16 + x / f] += plane[y * side + x] / double(f * f);
    return out;
}

}  // namespace detail

/// Per-token encoder inputs (n_m x in_m) for a validated payload.
inline Tensor<double> encoder_inputs(Modality m, const Tensor<double>& payload, int side) {
    const auto s = static_cast<std::size_t>(side);
    switch (m) {
        case Modality::Attr: return Tensor<double>({1, static_cast<std::size_t>(kAttrBits)}, payload.values());
        case Modality::LowRes: {
            // S/4 x S/4 pixels, pooled to 4 x 4, one token per pixel.
            const std::size_t lr = s / 4, f = lr / kPatchGrid;
            Tensor<double> out = Tensor<double>::matrix(kPatchTokens, 1);
            for (std::size_t y = 0; y < lr; ++y)
                for (std::size_t x = 0; x < lr; ++x)
                    out[(y / f) * kPatchGrid + x / f] += payload.at(y, x) / double(f * f);
            return out;
        }
        case Modality::Sketch:
        case Modality::Mask: {
            const std::size_t planes = m == Modality::Mask ? kMaskClasses : 1;
            std::vector<std::vector<double>> pooled;
            for (std::size_t c = 0; c < planes; ++c) {
                std::vector<double> plane(s * s);
                for (std::size_t i = 0; i < s * s; ++i) {
                    plane[i] = m == Modality::Mask ? (payload[i] == double(c) ? 1.0 : 0.0) : payload[i];
                }
                pooled.push_back(detail::pool_to_16(plane, s));
            }
            // 16 x 16 grid -> 4 x 4 patches of 4 x 4 pixels; per-pixel class vectors are contiguous.
            Tensor<double> out = Tensor<double>::matrix(kPatchTokens, encoder_input_dim(m));
            for (std::size_t py = 0; py < kPatchGrid; ++py)
                for (std::size_t px = 0; px < kPatchGrid; ++px)
                    for (std::size_t iy = 0; iy < 4; ++iy)
                        for (std::size_t ix = 0; ix < 4; ++ix)
                            for (std::size_t c = 0; c < planes; ++c) {
                                const std::size_t pix = (py * 4 + iy) * 16 + px * 4 + ix;
                                out.at(py * kPatchGrid + px, (iy * 4 + ix) * planes + c) = pooled[c][pix];
                            }
            return out;
        }
    }
    throw DimError("encoder_inputs: unknown modality");
}

/// Which surrogates and encoders a model owns, and how inactive modalities
/// enter the token sequence.
struct FusionConfig {
    ModalitySet accepted = ModalitySet::all();    // modalities with an encoder
    ModalitySet surrogates = ModalitySet::all();  // modalities with a learnable surrogate
    bool inter_modal = true;                      // inactive surrogates contribute a bare token

    friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

template <class T>
void init_conditioning(ParamStore<T>& ps, const FusionConfig& fc, std::size_t d, std::mt19937_64& rng) {
    for (auto m : fc.accepted.members()) {
        const std::size_t in = encoder_input_dim(m);
        ps.add_normal(encoder_name(m), {token_count(m), in, d}, static_cast<T>(1.0 / std::sqrt(double(in))), rng);
        ps.add_zeros(encoder_name(m) + ".bias", {token_count(m), d});
    }
    for (auto m : fc.surrogates.members()) ps.add_normal(surrogate_name(m), {1, d}, static_cast<T>(0.02), rng);
}

/// Fused condition tokens. `tokens` is empty when nothing contributes (an
/// unconditional pass of a model without inactive-surrogate tokens).
template <class T>
struct TokenSequence {
    std::optional<typename Graph<T>::Var> tokens;
    std::vector<Modality> tags;

    std::size_t size() const { return tags.size(); }
};

template <class T>
typename Graph<T>::Var encode(Graph<T>& g, ParamStore<T>& ps, Modality m, const Tensor<double>& payload, int side) {
    auto x = g.constant(encoder_inputs(m, payload, side).template cast<T>());
    const std::string name = encoder_name(m);
    if (!ps.contains(name)) throw ConfigError("model has no encoder for modality " + std::string(modality_name(m)));
    return g.tokenwise_linear(x, g.param(ps, name), g.param(ps, name + ".bias"));
}

/// Modalities in index order: an active one appends its encoded tokens, each
/// shifted by its surrogate; an inactive one appends its bare surrogate when
/// inter-modal fusion is on. With no active modality this yields exactly the
/// surrogate tokens.
template <class T>
TokenSequence<T> fuse(Graph<T>& g, ParamStore<T>& ps, const ConditionSet& cs, const FusionConfig& fc) {
    if (!cs.active_set().subset_of(fc.accepted)) {
        throw ConfigError("condition set " + cs.active_set().str() + " is not accepted by this model (accepts " +
                          fc.accepted.str() + ")");
    }
    TokenSequence<T> seq;
    std::vector<typename Graph<T>::Var> parts;
    for (auto m : kAllModalities) {
        const bool has_surrogate = fc.surrogates.contains(m);
        if (cs.active(m)) {
            auto tok = encode(g, ps, m, cs.payload(m), cs.side());
            if (has_surrogate) tok = g.add_rowvec(tok, g.param(ps, surrogate_name(m)));
            parts.push_back(tok);
            seq.tags.insert(seq.tags.end(), token_count(m), m);
        } else if (has_surrogate && fc.inter_modal) {
            parts.push_back(g.param(ps, surrogate_name(m)));
            seq.tags.push_back(m);
        }
    }
    if (!parts.empty()) seq.tokens = parts.size() == 1 ? parts.front() : g.concat_rows(parts);
    return seq;
}

}  // namespace mmface
