// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mmface/numerics/tensor.hpp"

namespace mmface {

inline std::uint64_t fnv1a(const void* p, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
    }
    return h;
}

/// Named parameters with same-shaped gradient accumulators. Iteration is
/// lexicographic by name (std::map), which fixes reduction and hashing order.
template <class T>
class ParamStore {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> value) {
        if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        Tensor<T> zero(value.dims());
        grads_.emplace(name, std::move(zero));
        return params_.emplace(name, std::move(value)).first->second;
    }

    Tensor<T>& add_normal(const std::string& name, Dims dims, T stddev, std::mt19937_64& rng) {
        Tensor<T> t(std::move(dims));
        std::normal_distribution<double> nd(0.0, static_cast<double>(stddev));
        for (auto& v : t.values()) v = static_cast<T>(nd(rng));
        return add(name, std::move(t));
    }

    Tensor<T>& add_zeros(const std::string& name, Dims dims) { return add(name, Tensor<T>(std::move(dims))); }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    Tensor<T>& param(const std::string& name) { return lookup(params_, name); }
    const Tensor<T>& param(const std::string& name) const { return lookup(params_, name); }
    Tensor<T>& grad(const std::string& name) { return lookup(grads_, name); }
    const Tensor<T>& grad(const std::string& name) const { return lookup(grads_, name); }

    std::map<std::string, Tensor<T>>& params() { return params_; }
    const std::map<std::string, Tensor<T>>& params() const { return params_; }
    const std::map<std::string, Tensor<T>>& grads() const { return grads_; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : params_) out.push_back(k);
        return out;
    }

    void zero_grad() {
        for (auto& [k, g] : grads_) g.fill(T(0));
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [k, v] : params_) n += v.size();
        return n;
    }

    /// Flat index -> (name, offset), in lexicographic name order.
    std::pair<std::string, std::size_t> locate(std::size_t flat) const {
        for (const auto& [k, v] : params_) {
            if (flat < v.size()) return {k, flat};
            flat -= v.size();
        }
        throw DimError("flat parameter index out of range");
    }

    template <class U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [k, v] : params_) out.add(k, v.template cast<U>());
        return out;
    }

    /// FNV-1a over names, dims and raw value bytes; stable across runs on one platform.
    std::uint64_t content_hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&h](const void* p, std::size_t n) { h = fnv1a(p, n, h); };
        for (const auto& [k, v] : params_) {
            mix(k.data(), k.size());
            for (auto d : v.dims()) mix(&d, sizeof d);
            mix(v.data(), v.size() * sizeof(T));
        }
        return h;
    }

private:
    template <class Map>
    static auto& lookup(Map& m, const std::string& name) {
        auto it = m.find(name);
        if (it == m.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    std::map<std::string, Tensor<T>> params_;
    std::map<std::string, Tensor<T>> grads_;
};

}  // namespace mmface
