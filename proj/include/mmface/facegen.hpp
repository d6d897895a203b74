// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <algorithm>
#include <bit>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mmface/error.hpp"
#include "mmface/numerics/tensor.hpp"

namespace mmface {

using Image = Tensor<double>;

// ---------------------------------------------------------------------------
// Modalities and condition sets

enum class Modality : int { Mask = 0, Attr = 1, Sketch = 2, LowRes = 3 };
inline constexpr int kModalityCount = 4;
inline constexpr std::array<Modality, kModalityCount> kAllModalities{Modality::Mask, Modality::Attr,
                                                                     Modality::Sketch, Modality::LowRes};

inline constexpr int index_of(Modality m) { return static_cast<int>(m); }

inline std::string_view modality_name(Modality m) {
    switch (m) {
        case Modality::Mask: return "mask";
        case Modality::Attr: return "attr";
        case Modality::Sketch: return "sketch";
        case Modality::LowRes: return "lowres";
    }
    return "?";
}

inline Modality parse_modality(std::string_view s) {
    for (auto m : kAllModalities) {
        if (modality_name(m) == s) return m;
    }
    throw ConfigError("unknown modality '" + std::string(s) + "' (expected mask, attr, sketch or lowres)");
}

/// Bit set over the four modalities; iteration is always in index order.
class ModalitySet {
public:
    constexpr ModalitySet() = default;
    constexpr explicit ModalitySet(unsigned bits) : bits_(bits & 0xFu) {}
    ModalitySet(std::initializer_list<Modality> ms) {
        for (auto m : ms) insert(m);
    }
    static constexpr ModalitySet all() { return ModalitySet(0xFu); }

    constexpr bool contains(Modality m) const { return (bits_ >> index_of(m)) & 1u; }
    constexpr void insert(Modality m) { bits_ |= 1u << index_of(m); }
    constexpr void erase(Modality m) { bits_ &= ~(1u << index_of(m)); }
    constexpr bool empty() const { return bits_ == 0; }
    constexpr unsigned bits() const { return bits_; }
    int size() const { return std::popcount(bits_); }
    bool subset_of(ModalitySet o) const { return (bits_ & ~o.bits_) == 0; }

    std::vector<Modality> members() const {
        std::vector<Modality> out;
        for (auto m : kAllModalities)
            if (contains(m)) out.push_back(m);
        return out;
    }

    std::string str() const {
        if (empty()) return "none";
        std::string s;
        for (auto m : members()) {
            if (!s.empty()) s += '+';
            s += modality_name(m);
        }
        return s;
    }

    friend constexpr bool operator==(ModalitySet a, ModalitySet b) { return a.bits_ == b.bits_; }

private:
    unsigned bits_ = 0;
};

inline ModalitySet parse_modality_set(std::string_view s) {
    ModalitySet out;
    if (s == "none" || s.empty()) return out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto end = s.find('+', start);
        if (end == std::string_view::npos) end = s.size();
        out.insert(parse_modality(s.substr(start, end - start)));
        start = end + 1;
    }
    return out;
}

enum MaskClass : int { kBackground = 0, kSkin = 1, kEye = 2, kMouth = 3, kHair = 4 };
inline constexpr int kMaskClasses = 5;
inline constexpr int kAttrBits = 6;

/// A subset of modality payloads. Payload dims: MASK S x S class ids, ATTR
/// 1 x 6 bits, SKETCH S x S bits, LOWRES (S/4) x (S/4) in [-1, 1].
class ConditionSet {
public:
    ConditionSet() = default;
    explicit ConditionSet(int side) : side_(side) {}

    int side() const { return side_; }

    void set(Modality m, Tensor<double> payload) {
        validate(m, payload);
        payloads_[index_of(m)] = std::move(payload);
    }
    void clear(Modality m) { payloads_[index_of(m)].reset(); }

    bool active(Modality m) const { return payloads_[index_of(m)].has_value(); }
    const Tensor<double>& payload(Modality m) const {
        if (!active(m)) throw ConfigError("modality " + std::string(modality_name(m)) + " is not active");
        return *payloads_[index_of(m)];
    }

    ModalitySet active_set() const {
        ModalitySet s;
        for (auto m : kAllModalities)
            if (active(m)) s.insert(m);
        return s;
    }
    bool empty() const { return active_set().empty(); }

    /// Copy restricted to the modalities in `keep`.
    ConditionSet restricted(ModalitySet keep) const {
        ConditionSet out(side_);
        for (auto m : kAllModalities)
            if (keep.contains(m) && active(m)) out.payloads_[index_of(m)] = payloads_[index_of(m)];
        return out;
    }

private:
    void validate(Modality m, const Tensor<double>& p) const {
        const auto s = static_cast<std::size_t>(side_);
        Dims want;
        switch (m) {
            case Modality::Mask:
            case Modality::Sketch: want = {s, s}; break;
            case Modality::Attr: want = {1, static_cast<std::size_t>(kAttrBits)}; break;
            case Modality::LowRes: want = {s / 4, s / 4}; break;
        }
        if (p.dims() != want) {
            throw DimError(std::string(modality_name(m)) + " payload dims " + dims_str(p.dims()) + ", expected " +
                           dims_str(want));
        }
        for (double v : p.values()) {
            const bool ok = m == Modality::Mask     ? (v == std::floor(v) && v >= 0 && v < kMaskClasses)
                            : m == Modality::LowRes ? (v >= -1.0 && v <= 1.0)
                                                    : (v == 0.0 || v == 1.0);
            if (!ok) throw DimError(std::string(modality_name(m)) + " payload value out of domain");
        }
    }

    int side_ = 16;
    std::array<std::optional<Tensor<double>>, kModalityCount> payloads_;
};

// ---------------------------------------------------------------------------
// Face parameters
//
// Geometric fields are stored as fractions of the image side S, so one
// FaceParams renders at any supported resolution.

struct FaceParams {
    double cx = 0.5, cy = 0.5, r = 0.315;
    double eye_dx = 0.12, eye_r = 0.055;
    double mouth_w = 0.15, kappa = 0.0;
    double hair_h = 0.15;
    double g_skin = 0.6, g_hair = 0.25, g_bg = 0.125;

    static constexpr std::size_t kFields = 11;

    std::array<double, kFields> to_array() const {
        return {cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h, g_skin, g_hair, g_bg};
    }
    static FaceParams from_array(const std::array<double, kFields>& a) {
        return FaceParams{a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8], a[9], a[10]};
    }
    friend bool operator==(const FaceParams&, const FaceParams&) = default;
};

struct FieldRange {
    const char* name;
    double lo;
    double hi;
};

inline constexpr std::array<FieldRange, FaceParams::kFields> kFieldRanges{{
    {"cx", 0.38, 0.62},
    {"cy", 0.38, 0.62},
    {"r", 0.25, 0.38},
    {"eye_dx", 0.08, 0.16},
    {"eye_r", 0.03, 0.08},
    {"mouth_w", 0.10, 0.20},
    {"kappa", -1.0, 1.0},
    {"hair_h", 0.05, 0.25},
    {"g_skin", 0.35, 0.85},
    {"g_hair", 0.05, 0.45},
    {"g_bg", 0.0, 0.25},
}};

namespace face_geometry {
inline constexpr double kEyeRise = 0.3;      // eye centers sit kEyeRise * r above cy
inline constexpr double kMouthDrop = 0.4;    // mouth center sits kMouthDrop * r below cy
inline constexpr double kMouthSag = 0.8;     // arc depth per unit kappa, times mouth_w
inline constexpr double kMouthHalfThick = 0.05;
inline constexpr double kHairRim = 0.8;      // hair extends kHairRim * hair_h beyond the disc
inline constexpr double kHairDrop = 2.0;     // hair reaches kHairDrop * hair_h below the crown
inline constexpr double kEyeIntensity = 0.0;
inline constexpr double kMouthIntensity = 0.1;
inline constexpr double kSketchThreshold = 0.25;
}  // namespace face_geometry

inline double mouth_curve_y(const FaceParams& p, double u) {
    using namespace face_geometry;
    const double sag = kMouthSag * p.mouth_w * p.kappa;
    return p.cy + kMouthDrop * p.r + sag * (1.0 - u * u) - 0.5 * sag;
}

inline bool in_ranges(const FaceParams& p) {
    const auto a = p.to_array();
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] < kFieldRanges[i].lo || a[i] > kFieldRanges[i].hi) return false;
    }
    return true;
}

/// Eyes and mouth strictly inside the face disc.
inline bool geometry_valid(const FaceParams& p) {
    using namespace face_geometry;
    const double eye_y = p.cy - kEyeRise * p.r;
    if (std::hypot(p.eye_dx, eye_y - p.cy) + p.eye_r >= p.r) return false;
    for (double u : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
        const double x = u * p.mouth_w;
        const double y = mouth_curve_y(p, u) - p.cy;
        for (double off : {-kMouthHalfThick, kMouthHalfThick}) {
            if (std::hypot(x, y + off) >= p.r) return false;
        }
    }
    return true;
}

/// Class of the point (u, v) in side-fraction coordinates, painter's order.
inline int classify_point(const FaceParams& p, double u, double v) {
    using namespace face_geometry;
    auto sq = [](double a) { return a * a; };
    int cls = kBackground;
    const double dx = u - p.cx, dy = v - p.cy;
    const double d2 = dx * dx + dy * dy;
    if (d2 <= sq(p.r + kHairRim * p.hair_h) && v <= p.cy - p.r + kHairDrop * p.hair_h) cls = kHair;
    if (d2 > sq(p.r)) return cls;
    cls = kSkin;
    const double eye_y = p.cy - kEyeRise * p.r;
    const double er2 = sq(p.eye_r);
    if (sq(u - (p.cx - p.eye_dx)) + sq(v - eye_y) <= er2 || sq(u - (p.cx + p.eye_dx)) + sq(v - eye_y) <= er2) {
        cls = kEye;
    }
    const double mu = dx / p.mouth_w;
    if (std::abs(mu) <= 1.0 && std::abs(v - mouth_curve_y(p, mu)) <= kMouthHalfThick) cls = kMouth;
    return cls;
}

inline double class_intensity(const FaceParams& p, int cls) {
    switch (cls) {
        case kSkin: return p.g_skin;
        case kEye: return face_geometry::kEyeIntensity;
        case kMouth: return face_geometry::kMouthIntensity;
        case kHair: return p.g_hair;
        default: return p.g_bg;
    }
}

inline void require_side(int side) {
    if (side != 16 && side != 32) throw ConfigError("image side must be 16 or 32, got " + std::to_string(side));
}

/// Uniform over ranges, resampled until geometry_valid. Deterministic in seed.
inline FaceParams sample_params(std::uint64_t seed, int* tries_out = nullptr) {
    std::mt19937_64 rng(seed);
    for (int tries = 1; tries <= 1000; ++tries) {
        std::array<double, FaceParams::kFields> a{};
        for (std::size_t i = 0; i < a.size(); ++i) {
            std::uniform_real_distribution<double> u(kFieldRanges[i].lo, kFieldRanges[i].hi);
            a[i] = u(rng);
        }
        auto p = FaceParams::from_array(a);
        if (geometry_valid(p)) {
            if (tries_out) *tries_out = tries;
            return p;
        }
    }
    throw NumericError("sample_params: rejection sampling exceeded 1000 tries for seed " + std::to_string(seed));
}

/// S x S render in [-1, 1]; each pixel averages a 2 x 2 subsample grid.
inline Image render(const FaceParams& p, int side) {
    require_side(side);
    const auto s = static_cast<std::size_t>(side);
    Image img = Image::matrix(s, s);
    const double inv = 1.0 / side;
    for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
            double acc = 0.0;
            for (double oy : {0.25, 0.75})
                for (double ox : {0.25, 0.75})
                    acc += class_intensity(p, classify_point(p, (x + ox) * inv, (y + oy) * inv));
            img.at(y, x) = 2.0 * (acc * 0.25) - 1.0;
        }
    }
    return img;
}

/// Per-pixel majority class over a 3 x 3 subgrid; ties go to the center sample.
inline Tensor<double> render_mask(const FaceParams& p, int side) {
    require_side(side);
    const auto s = static_cast<std::size_t>(side);
    Tensor<double> mask = Tensor<double>::matrix(s, s);
    const double inv = 1.0 / side;
    for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
            std::array<int, kMaskClasses> votes{};
            for (double oy : {1.0 / 6, 0.5, 5.0 / 6})
                for (double ox : {1.0 / 6, 0.5, 5.0 / 6}) ++votes[classify_point(p, (x + ox) * inv, (y + oy) * inv)];
            int best = classify_point(p, (x + 0.5) * inv, (y + 0.5) * inv);
            for (int c = 0; c < kMaskClasses; ++c)
                if (votes[c] > votes[best]) best = c;
            mask.at(y, x) = best;
        }
    }
    return mask;
}

inline Tensor<double> attributes(const FaceParams& p) {
    return Tensor<double>::row({
        p.kappa > 0.2 ? 1.0 : 0.0,       // smiling
        p.r >= 0.315 ? 1.0 : 0.0,        // wide_face
        p.eye_r >= 0.055 ? 1.0 : 0.0,    // big_eyes
        p.hair_h >= 0.15 ? 1.0 : 0.0,    // long_hair
        p.g_skin >= 0.6 ? 1.0 : 0.0,     // bright_skin
        p.mouth_w >= 0.15 ? 1.0 : 0.0,   // wide_mouth
    });
}

inline constexpr std::array<const char*, kAttrBits> kAttrNames{"smiling",   "wide_face",   "big_eyes",
                                                               "long_hair", "bright_skin", "wide_mouth"};

/// Sobel gradient magnitude (kernel normalized by 8, replicated border).
inline Tensor<double> sobel_magnitude(const Image& img) {
    const std::size_t h = img.rows(), w = img.cols();
    Tensor<double> out = Tensor<double>::matrix(h, w);
    auto px = [&](long y, long x) {
        y = std::clamp<long>(y, 0, static_cast<long>(h) - 1);
        x = std::clamp<long>(x, 0, static_cast<long>(w) - 1);
        return img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
    };
    for (long y = 0; y < static_cast<long>(h); ++y) {
        for (long x = 0; x < static_cast<long>(w); ++x) {
            const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
            const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
            out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = std::hypot(gx, gy) / 8.0;
        }
    }
    return out;
}

inline Tensor<double> sketch_from_image(const Image& img) {
    Tensor<double> edges = sobel_magnitude(img);
    for (auto& v : edges.values()) v = v > face_geometry::kSketchThreshold ? 1.0 : 0.0;
    return edges;
}

/// 4 x 4 block mean.
inline Tensor<double> lowres_from_image(const Image& img) {
    const std::size_t h = img.rows() / 4, w = img.cols() / 4;
    Tensor<double> out = Tensor<double>::matrix(h, w);
    for (std::size_t y = 0; y < img.rows(); ++y)
        for (std::size_t x = 0; x < img.cols(); ++x) out.at(y / 4, x / 4) += img.at(y, x) / 16.0;
    for (auto& v : out.values()) v = std::clamp(v, -1.0, 1.0);
    return out;
}

inline ConditionSet derive_conditions(const FaceParams& p, int side) {
    ConditionSet cs(side);
    const Image img = render(p, side);
    cs.set(Modality::Mask, render_mask(p, side));
    cs.set(Modality::Attr, attributes(p));
    cs.set(Modality::Sketch, sketch_from_image(img));
    cs.set(Modality::LowRes, lowres_from_image(img));
    return cs;
}

// ---------------------------------------------------------------------------
// Oracle inversion

struct Inversion {
    FaceParams params;
    double residual = 0.0;  // sum of squared pixel differences
};

inline double squared_distance(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline constexpr int kLatticePoints = 5;
inline constexpr int kRefinementLevels = 2;

/// Coarse lattice spacing of field i (its range over kLatticePoints - 1 gaps).
inline double lattice_step(std::size_t field) {
    return (kFieldRanges[field].hi - kFieldRanges[field].lo) / (kLatticePoints - 1);
}

/// Spacing after the last refinement level.
inline double finest_step(std::size_t field) {
    double step = lattice_step(field);
    for (int l = 0; l < kRefinementLevels; ++l) step /= 4.0;
    return step;
}

inline FaceParams lattice_point(const std::array<int, FaceParams::kFields>& idx) {
    std::array<double, FaceParams::kFields> a{};
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = kFieldRanges[i].lo + idx[i] * lattice_step(i);
    return FaceParams::from_array(a);
}

namespace detail {

// Index of the three free intensity fields within FaceParams::to_array().
inline constexpr std::array<std::size_t, 3> kIntensityFields{8, 9, 10};

/// Point j of field f's 5-point grid: the full coarse lattice at level 0,
/// otherwise centred on `anchor` with spacing divided by 4 per level.
inline double grid_value(std::size_t field, int level, double anchor, int j) {
    if (level == 0) return kFieldRanges[field].lo + j * lattice_step(field);
    const double step = lattice_step(field) * std::pow(4.0, -level);
    return anchor + (j - 2) * step;
}

inline double snap_to_grid(std::size_t field, int level, double anchor, double v) {
    double best = anchor;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < kLatticePoints; ++j) {
        const double g = grid_value(field, level, anchor, j);
        if (g < kFieldRanges[field].lo - 1e-12 || g > kFieldRanges[field].hi + 1e-12) continue;
        if (std::abs(v - g) < best_d) {
            best_d = std::abs(v - g);
            best = g;
        }
    }
    return best;
}

/// Pixel values are linear in (g_skin, g_hair, g_bg) once geometry is fixed.
/// Solves the 3 x 3 least-squares problem for them, then snaps each to its
/// grid. Classes absent from the image keep their incoming value.
inline void fit_intensities(std::array<double, FaceParams::kFields>& a, const Image& img, int level,
                            const std::array<double, FaceParams::kFields>& anchor) {
    const auto p = FaceParams::from_array(a);
    const int side = static_cast<int>(img.rows());
    const double inv = 1.0 / side;
    // Normal equations over unknowns (skin, hair, bg).
    std::array<std::array<double, 3>, 3> ata{};
    std::array<double, 3> atb{};
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            std::array<double, 3> f{};
            double fixed = 0.0;
            for (double oy : {0.25, 0.75})
                for (double ox : {0.25, 0.75}) {
                    const int c = classify_point(p, (x + ox) * inv, (y + oy) * inv);
                    if (c == kSkin) f[0] += 0.25;
                    else if (c == kHair) f[1] += 0.25;
                    else if (c == kBackground) f[2] += 0.25;
                    else fixed += 0.25 * class_intensity(p, c);
                }
            const double target = 0.5 * (img.at(y, x) + 1.0) - fixed;
            for (int i = 0; i < 3; ++i) {
                atb[i] += f[i] * target;
                for (int j = 0; j < 3; ++j) ata[i][j] += f[i] * f[j];
            }
        }
    }
    // Gaussian elimination with the absent classes pinned to their incoming value.
    std::array<bool, 3> present{};
    for (int i = 0; i < 3; ++i) present[i] = ata[i][i] > 1e-9;
    std::array<double, 3> sol{a[kIntensityFields[0]], a[kIntensityFields[1]], a[kIntensityFields[2]]};
    std::vector<int> idx;
    for (int i = 0; i < 3; ++i)
        if (present[i]) idx.push_back(i);
    const std::size_t n = idx.size();
    std::vector<std::vector<double>> m(n, std::vector<double>(n + 1));
    for (std::size_t r = 0; r < n; ++r) {
        double rhs = atb[idx[r]];
        for (int j = 0; j < 3; ++j)
            if (!present[j]) rhs -= ata[idx[r]][j] * sol[j];
        for (std::size_t c = 0; c < n; ++c) m[r][c] = ata[idx[r]][idx[c]];
        m[r][n] = rhs;
    }
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
        std::swap(m[c], m[piv]);
        if (std::abs(m[c][c]) < 1e-12) return;
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const double k = m[r][c] / m[c][c];
            for (std::size_t j = c; j <= n; ++j) m[r][j] -= k * m[c][j];
        }
    }
    for (std::size_t r = 0; r < n; ++r) sol[idx[r]] = m[r][n] / m[r][r];
    for (int i = 0; i < 3; ++i) {
        const std::size_t f = kIntensityFields[i];
        a[f] = snap_to_grid(f, level, anchor[f], sol[i]);
    }
}

}  // namespace detail

/// Nearest lattice neighbour of `img` by pixel L2. Level 0 searches the
/// 5-point coarse lattice of every field; each refinement level searches 5
/// points at a quarter of the previous spacing around the incumbent.
///
/// Search within a level: the three intensity fields enter pixels linearly,
/// so every geometry candidate gets its intensities by least squares snapped
/// to the grid. Level 0 scans (cx, cy, r) exhaustively; the best few
/// placements each seed cyclic coordinate descent over every field, carried
/// through all refinement levels, and the lowest residual wins.
inline Inversion invert_params(const Image& img, int starts = 4) {
    if (img.rank() != 2 || img.rows() != img.cols()) throw DimError("invert_params: image must be square");
    const int side = static_cast<int>(img.rows());
    require_side(side);
    using Arr = std::array<double, FaceParams::kFields>;

    auto cost = [&](const Arr& a) { return squared_distance(render(FaceParams::from_array(a), side), img); };

    std::array<int, FaceParams::kFields> center{};
    center.fill(2);
    const Arr neutral = lattice_point(center).to_array();

    struct Candidate {
        Arr params;
        double cost;
    };
    std::vector<Candidate> placements;
    for (int i = 0; i < kLatticePoints; ++i)
        for (int j = 0; j < kLatticePoints; ++j)
            for (int k = 0; k < kLatticePoints; ++k) {
                Arr cand = neutral;
                cand[0] = kFieldRanges[0].lo + i * lattice_step(0);
                cand[1] = kFieldRanges[1].lo + j * lattice_step(1);
                cand[2] = kFieldRanges[2].lo + k * lattice_step(2);
                if (!geometry_valid(FaceParams::from_array(cand))) continue;
                detail::fit_intensities(cand, img, 0, neutral);
                placements.push_back({cand, cost(cand)});
            }
    std::stable_sort(placements.begin(), placements.end(),
                     [](const Candidate& a, const Candidate& b) { return a.cost < b.cost; });
    if (placements.size() > static_cast<std::size_t>(starts)) placements.resize(static_cast<std::size_t>(starts));

    auto descend = [&](Candidate start) {
        Arr best = start.params;
        double best_cost = start.cost;
        auto try_move = [&](Arr cand, int level, const Arr& anchor, bool refit) {
            if (!geometry_valid(FaceParams::from_array(cand))) return false;
            if (refit) detail::fit_intensities(cand, img, level, anchor);
            const double c = cost(cand);
            if (c >= best_cost) return false;
            best_cost = c;
            best = cand;
            return true;
        };
        auto in_range = [](std::size_t f, double v) {
            return v >= kFieldRanges[f].lo - 1e-12 && v <= kFieldRanges[f].hi + 1e-12;
        };
        constexpr std::size_t kGeometric = detail::kIntensityFields[0];
        for (int level = 0; level <= kRefinementLevels; ++level) {
            const Arr anchor = best;
            for (int round = 0; round < 6 && best_cost > 0.0; ++round) {
                bool improved = true;
                for (int sweep = 0; improved && sweep < 10; ++sweep) {
                    improved = false;
                    for (std::size_t f = 0; f < FaceParams::kFields; ++f) {
                        const Arr incumbent = best;
                        for (int j = 0; j < kLatticePoints; ++j) {
                            const double v = detail::grid_value(f, level, anchor[f], j);
                            if (!in_range(f, v) || v == incumbent[f]) continue;
                            Arr cand = incumbent;
                            cand[f] = v;
                            improved = try_move(cand, level, anchor, f < kGeometric) || improved;
                        }
                    }
                }
                // Escape single-field minima with joint moves of two geometric fields.
                bool escaped = false;
                for (std::size_t f = 0; f < kGeometric && !escaped; ++f)
                    for (std::size_t g = f + 1; g < kGeometric && !escaped; ++g) {
                        const Arr incumbent = best;
                        for (int i = 0; i < kLatticePoints && !escaped; ++i)
                            for (int j = 0; j < kLatticePoints && !escaped; ++j) {
                                const double vf = detail::grid_value(f, level, anchor[f], i);
                                const double vg = detail::grid_value(g, level, anchor[g], j);
                                if (!in_range(f, vf) || !in_range(g, vg)) continue;
                                if (vf == incumbent[f] || vg == incumbent[g]) continue;
                                Arr cand = incumbent;
                                cand[f] = vf;
                                cand[g] = vg;
                                escaped = try_move(cand, level, anchor, true);
                            }
                    }
                if (!escaped) break;
            }
        }
        return Candidate{best, best_cost};
    };

    Candidate winner{neutral, cost(neutral)};
    for (const auto& p : placements) {
        auto c = descend(p);
        if (c.cost < winner.cost) winner = c;
    }
    return Inversion{FaceParams::from_array(winner.params), winner.cost};
}

}  // namespace mmface
