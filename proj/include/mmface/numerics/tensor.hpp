// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mmface/error.hpp"

namespace mmface {

using Dims = std::vector<std::size_t>;

inline std::size_t dims_product(const Dims& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string dims_str(const Dims& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << 'x';
        os << dims[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major tensor. Rank-2 tensors are the workhorse: rows are tokens
/// (or a single row for vectors), columns are features.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Dims dims, T fill = T(0)) : dims_(std::move(dims)) {
        check_dims();
        data_.assign(dims_product(dims_), fill);
    }

    Tensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
        check_dims();
        if (dims_product(dims_) != data_.size()) {
            throw DimError("tensor data length " + std::to_string(data_.size()) +
                           " does not match dims " + dims_str(dims_));
        }
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) {
        return Tensor({rows, cols}, fill);
    }
    static Tensor row(std::vector<T> values) {
        const std::size_t n = values.size();
        return Tensor({1, n}, std::move(values));
    }

    const Dims& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // Rank-2 views; rank-1 tensors read as a single row.
    std::size_t rows() const { return dims_.size() >= 2 ? dims_[0] : 1; }
    std::size_t cols() const { return dims_.empty() ? 0 : dims_.back(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }
    T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    /// Throws NumericError naming `what` when any entry is NaN or Inf.
    void require_finite(const std::string& what) const {
        for (std::size_t i = 0; i < data_.size(); ++i) {
            if (!std::isfinite(data_[i])) {
                throw NumericError("non-finite value in " + what + " at flat index " + std::to_string(i));
            }
        }
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(dims_, std::move(out));
    }

    Tensor reshaped(Dims dims) const {
        return Tensor(std::move(dims), data_);
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.dims_ == b.dims_ && a.data_ == b.data_;
    }

private:
    void check_dims() const {
        for (auto d : dims_) {
            if (d == 0) throw DimError("tensor dims must be positive, got " + dims_str(dims_));
        }
    }

    Dims dims_;
    std::vector<T> data_;
};

}  // namespace mmface
