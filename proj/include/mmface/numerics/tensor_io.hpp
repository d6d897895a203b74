// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mmface/numerics/tensor.hpp"

namespace mmface {

// "MDLT" | version 0x01 | dtype (0 f32, 1 f64) | rank | 4 zero bytes |
// rank x u64 LE dims | row-major LE payload.
inline constexpr std::array<char, 4> kTensorMagic{'M', 'D', 'L', 'T'};
inline constexpr std::uint8_t kTensorVersion = 0x01;

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

template <class T>
constexpr std::uint8_t dtype_code() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? 0 : 1;
}

template <class T>
std::vector<char> encode_tensor(const Tensor<T>& t) {
    std::vector<char> out(kTensorMagic.begin(), kTensorMagic.end());
    out.push_back(static_cast<char>(kTensorVersion));
    out.push_back(static_cast<char>(dtype_code<T>()));
    out.push_back(static_cast<char>(t.rank()));
    out.insert(out.end(), 4, '\0');
    for (auto d : t.dims()) {
        const auto v = static_cast<std::uint64_t>(d);
        const char* p = reinterpret_cast<const char*>(&v);
        out.insert(out.end(), p, p + sizeof v);
    }
    const char* payload = reinterpret_cast<const char*>(t.data());
    out.insert(out.end(), payload, payload + t.size() * sizeof(T));
    return out;
}

/// Decodes either dtype and converts to T.
template <class T>
Tensor<T> decode_tensor(const std::vector<char>& bytes, const std::string& what = "tensor") {
    constexpr std::size_t header = 4 + 1 + 1 + 1 + 4;
    if (bytes.size() < header || !std::equal(kTensorMagic.begin(), kTensorMagic.end(), bytes.begin())) {
        throw ConfigError(what + ": bad magic");
    }
    if (static_cast<std::uint8_t>(bytes[4]) != kTensorVersion) throw ConfigError(what + ": unsupported version");
    const auto dtype = static_cast<std::uint8_t>(bytes[5]);
    const auto rank = static_cast<std::uint8_t>(bytes[6]);
    if (dtype > 1) throw ConfigError(what + ": unknown dtype byte");
    for (int i = 7; i < 11; ++i) {
        if (bytes[i] != 0) throw ConfigError(what + ": nonzero pad bytes");
    }
    if (bytes.size() < header + rank * 8) throw ConfigError(what + ": truncated dims");
    Dims dims(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        std::uint64_t v = 0;
        std::memcpy(&v, bytes.data() + header + 8 * i, 8);
        dims[i] = static_cast<std::size_t>(v);
    }
    const std::size_t count = dims_product(dims);
    const std::size_t elem = dtype == 0 ? 4 : 8;
    const std::size_t offset = header + 8 * rank;
    if (bytes.size() != offset + count * elem) throw ConfigError(what + ": payload size mismatch");
    std::vector<T> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (dtype == 0) {
            float f;
            std::memcpy(&f, bytes.data() + offset + 4 * i, 4);
            data[i] = static_cast<T>(f);
        } else {
            double d;
            std::memcpy(&d, bytes.data() + offset + 8 * i, 8);
            data[i] = static_cast<T>(d);
        }
    }
    return Tensor<T>(std::move(dims), std::move(data));
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

template <class T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
    write_file_bytes(path, encode_tensor(t));
}

template <class T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
    return decode_tensor<T>(read_file_bytes(path), path.string());
}

}  // namespace mmface
