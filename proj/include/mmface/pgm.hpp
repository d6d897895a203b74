// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mmface/facegen.hpp"

namespace mmface {

// Binary PGM (P5, maxval 255). Images map [-1, 1] -> round((v + 1) * 127.5);
// masks store the class index; sketches store {0, 255}; low-res maps like images.

struct GrayImage {
    std::size_t width = 0, height = 0;
    std::vector<unsigned char> pixels;
};

inline void write_pgm(const std::filesystem::path& path, const GrayImage& g) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P5\n" << g.width << ' ' << g.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(g.pixels.data()), static_cast<std::streamsize>(g.pixels.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    auto token = [&]() {
        std::string t;
        while (in >> std::ws && in.peek() == '#') std::getline(in, t);
        in >> t;
        return t;
    };
    if (token() != "P5") throw ConfigError(path.string() + ": not a binary PGM (P5)");
    GrayImage g;
    try {
        g.width = std::stoul(token());
        g.height = std::stoul(token());
        if (std::stoul(token()) != 255) throw ConfigError(path.string() + ": maxval must be 255");
    } catch (const std::logic_error&) {
        throw ConfigError(path.string() + ": malformed PGM header");
    }
    in.get();  // single whitespace before the raster
    g.pixels.resize(g.width * g.height);
    in.read(reinterpret_cast<char*>(g.pixels.data()), static_cast<std::streamsize>(g.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(g.pixels.size())) throw ConfigError(path.string() + ": truncated PGM");
    return g;
}

inline GrayImage to_gray(const Image& img) {
    GrayImage g{img.cols(), img.rows(), std::vector<unsigned char>(img.size())};
    for (std::size_t i = 0; i < img.size(); ++i) {
        g.pixels[i] = static_cast<unsigned char>(std::lround((std::clamp(img[i], -1.0, 1.0) + 1.0) * 127.5));
    }
    return g;
}

inline Image from_gray(const GrayImage& g) {
    Image img = Image::matrix(g.height, g.width);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = g.pixels[i] / 127.5 - 1.0;
    return img;
}

inline void write_image_pgm(const std::filesystem::path& p, const Image& img) { write_pgm(p, to_gray(img)); }

inline void write_mask_pgm(const std::filesystem::path& p, const Tensor<double>& mask) {
    GrayImage g{mask.cols(), mask.rows(), std::vector<unsigned char>(mask.size())};
    for (std::size_t i = 0; i < mask.size(); ++i) g.pixels[i] = static_cast<unsigned char>(mask[i]);
    write_pgm(p, g);
}

inline Tensor<double> read_mask_pgm(const std::filesystem::path& p) {
    const auto g = read_pgm(p);
    Tensor<double> m = Tensor<double>::matrix(g.height, g.width);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = g.pixels[i];
    return m;
}

inline void write_sketch_pgm(const std::filesystem::path& p, const Tensor<double>& sketch) {
    GrayImage g{sketch.cols(), sketch.rows(), std::vector<unsigned char>(sketch.size())};
    for (std::size_t i = 0; i < sketch.size(); ++i) g.pixels[i] = sketch[i] > 0.5 ? 255 : 0;
    write_pgm(p, g);
}

inline Tensor<double> read_sketch_pgm(const std::filesystem::path& p) {
    const auto g = read_pgm(p);
    Tensor<double> s = Tensor<double>::matrix(g.height, g.width);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = g.pixels[i] >= 128 ? 1.0 : 0.0;
    return s;
}

inline std::string attr_csv_header() {
    std::string h;
    for (std::size_t i = 0; i < kAttrNames.size(); ++i) h += (i ? "," : "") + std::string(kAttrNames[i]);
    return h;
}

inline std::string attr_csv_row(const Tensor<double>& attr) {
    std::string row;
    for (std::size_t i = 0; i < attr.size(); ++i) row += (i ? "," : "") + std::to_string(static_cast<int>(attr[i]));
    return row;
}

/// Reads row `index` (0-based, after an optional header) of an ATTR CSV.
inline Tensor<double> read_attr_csv(const std::filesystem::path& p, std::size_t index = 0) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot open " + p.string());
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (rows.empty() && line.rfind(kAttrNames[0], 0) == 0) continue;
        rows.push_back(line);
    }
    if (index >= rows.size()) throw ConfigError(p.string() + ": no attribute row " + std::to_string(index));
    std::vector<double> bits;
    std::stringstream ss(rows[index]);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        if (cell != "0" && cell != "1") throw ConfigError(p.string() + ": attribute cells must be 0 or 1");
        bits.push_back(cell == "1" ? 1.0 : 0.0);
    }
    if (bits.size() != static_cast<std::size_t>(kAttrBits)) {
        throw ConfigError(p.string() + ": expected " + std::to_string(kAttrBits) + " attribute columns");
    }
    return Tensor<double>({1, bits.size()}, bits);
}

}  // namespace mmface
