// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmface/diffusion.hpp"
#include "mmface/facegen.hpp"

namespace mmface {

inline constexpr double kPsnrCap = 99.0;

/// Images are compared on the valid intensity range.
inline Image clamp_image(Image img) {
    for (auto& v : img.values()) v = std::clamp(v, -1.0, 1.0);
    return img;
}

namespace detail {

inline void require_same_dims(const Tensor<double>& a, const Tensor<double>& b, const char* what) {
    if (a.dims() != b.dims()) throw DimError(std::string(what) + ": dims " + dims_str(a.dims()) + " vs " + dims_str(b.dims()));
}

inline double agreement(const Tensor<double>& a, const Tensor<double>& b) {
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
    return double(same) / double(a.size());
}

}  // namespace detail

// Per-metric functions taking an already-inverted image avoid repeating the
// (comparatively costly) oracle inversion when several metrics are needed.

inline double mask_accuracy_of(const FaceParams& recovered, const Tensor<double>& mask_cond) {
    const int side = static_cast<int>(mask_cond.rows());
    return detail::agreement(render_mask(recovered, side), mask_cond);
}

inline double attr_accuracy_of(const FaceParams& recovered, const Tensor<double>& attr_cond) {
    const auto bits = attributes(recovered);
    detail::require_same_dims(bits, attr_cond, "attr_accuracy");
    return detail::agreement(bits, attr_cond);
}

inline double mask_accuracy(const Image& img, const Tensor<double>& mask_cond) {
    detail::require_same_dims(img, mask_cond, "mask_accuracy");
    return mask_accuracy_of(invert_params(clamp_image(img)).params, mask_cond);
}

inline double attr_accuracy(const Image& img, const Tensor<double>& attr_cond) {
    return attr_accuracy_of(invert_params(clamp_image(img)).params, attr_cond);
}

/// F1 of predicted edges against the condition, where an edge pixel counts as
/// matched if the other map has an edge within one pixel (8-neighbourhood).
inline double edge_f1(const Tensor<double>& pred, const Tensor<double>& cond) {
    detail::require_same_dims(pred, cond, "sketch_f1");
    const long h = static_cast<long>(pred.rows()), w = static_cast<long>(pred.cols());
    auto near = [&](const Tensor<double>& m, long y, long x) {
        for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
                const long yy = y + dy, xx = x + dx;
                if (yy >= 0 && yy < h && xx >= 0 && xx < w && m.at(std::size_t(yy), std::size_t(xx)) > 0.5) return true;
            }
        return false;
    };
    std::size_t n_pred = 0, n_cond = 0, hit_pred = 0, hit_cond = 0;
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            if (pred.at(std::size_t(y), std::size_t(x)) > 0.5) {
                ++n_pred;
                hit_pred += near(cond, y, x);
            }
            if (cond.at(std::size_t(y), std::size_t(x)) > 0.5) {
                ++n_cond;
                hit_cond += near(pred, y, x);
            }
        }
    if (n_pred == 0 && n_cond == 0) return 1.0;
    if (n_pred == 0 || n_cond == 0) return 0.0;
    const double precision = double(hit_pred) / double(n_pred), recall = double(hit_cond) / double(n_cond);
    return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

inline double sketch_f1(const Image& img, const Tensor<double>& sketch_cond) {
    return edge_f1(sketch_from_image(clamp_image(img)), sketch_cond);
}

/// PSNR on the [-1, 1] scale (peak-to-peak 2), capped at kPsnrCap for identical inputs.
inline double psnr(const Tensor<double>& a, const Tensor<double>& b) {
    detail::require_same_dims(a, b, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]) / double(a.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(4.0 / mse));
}

inline double lowres_psnr(const Image& img, const Tensor<double>& lr_cond) {
    return psnr(lowres_from_image(clamp_image(img)), lr_cond);
}

// ---------------------------------------------------------------------------
// Frechet distance over oracle features

inline constexpr std::size_t kFeatureDim = FaceParams::kFields + 2;

/// Range-normalised recovered parameters, mean intensity and edge density.
inline Eigen::VectorXd oracle_features(const Image& img, const FaceParams& recovered) {
    Eigen::VectorXd f(kFeatureDim);
    const auto a = recovered.to_array();
    for (std::size_t i = 0; i < a.size(); ++i) {
        f(Eigen::Index(i)) = (a[i] - kFieldRanges[i].lo) / (kFieldRanges[i].hi - kFieldRanges[i].lo);
    }
    const Image c = clamp_image(img);
    double mean = 0.0, edges = 0.0;
    const auto sk = sketch_from_image(c);
    for (std::size_t i = 0; i < c.size(); ++i) {
        mean += c[i] / double(c.size());
        edges += sk[i] / double(c.size());
    }
    f(Eigen::Index(a.size())) = mean;
    f(Eigen::Index(a.size() + 1)) = edges;
    return f;
}

inline Eigen::VectorXd oracle_features(const Image& img) {
    return oracle_features(img, invert_params(clamp_image(img)).params);
}

struct FrechetResult {
    double distance = 0.0;
    bool ridge = false;  // a covariance was near-singular and regularised
};

namespace detail {

inline Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

inline constexpr double kSingularEigen = 1e-10;
inline constexpr double kCovRidge = 1e-6;

/// d^2 = |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
inline FrechetResult frechet_distance(const Eigen::VectorXd& mu_a, Eigen::MatrixXd cov_a, const Eigen::VectorXd& mu_b,
                                      Eigen::MatrixXd cov_b) {
    FrechetResult r;
    auto regularise = [&](Eigen::MatrixXd& c) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < kSingularEigen) {
            c += kCovRidge * Eigen::MatrixXd::Identity(c.rows(), c.cols());
            r.ridge = true;
        }
    };
    regularise(cov_a);
    regularise(cov_b);
    const Eigen::MatrixXd sa = detail::sym_sqrt(cov_a);
    const Eigen::MatrixXd inner = sa * cov_b * sa;
    const Eigen::MatrixXd cross = detail::sym_sqrt(0.5 * (inner + inner.transpose()));
    r.distance = (mu_a - mu_b).squaredNorm() + (cov_a + cov_b - 2.0 * cross).trace();
    if (r.distance < 0.0) r.distance = 0.0;  // numerical floor
    return r;
}

inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> gaussian_fit(const std::vector<Eigen::VectorXd>& xs) {
    const Eigen::Index d = xs.front().size();
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    for (const auto& x : xs) mu += x;
    mu /= double(xs.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& x : xs) cov += (x - mu) * (x - mu).transpose();
    cov /= double(xs.size() - 1);
    return {mu, cov};
}

inline constexpr std::size_t kPfdMinImages = 50;

inline FrechetResult pfd_features(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b) {
    if (a.size() < kPfdMinImages || b.size() < kPfdMinImages) {
        throw ConfigError("pfd needs at least " + std::to_string(kPfdMinImages) + " images per set");
    }
    const auto [ma, ca] = gaussian_fit(a);
    const auto [mb, cb] = gaussian_fit(b);
    return frechet_distance(ma, ca, mb, cb);
}

inline FrechetResult pfd(const std::vector<Image>& a, const std::vector<Image>& b) {
    std::vector<Eigen::VectorXd> fa, fb;
    for (const auto& img : a) fa.push_back(oracle_features(img));
    for (const auto& img : b) fb.push_back(oracle_features(img));
    return pfd_features(fa, fb);
}

// ---------------------------------------------------------------------------
// Reports and protocols

struct MetricStat {
    double mean = 0.0, std = 0.0;
};

struct EvalReport {
    std::string id;
    std::string protocol;
    std::size_t count = 0;
    std::map<std::string, MetricStat> metrics;
    std::optional<double> pfd;
    bool pfd_ridge = false;

    static const std::vector<std::string>& metric_names() {
        static const std::vector<std::string> names{"mask_acc", "attr_acc", "sketch_f1", "lowres_psnr"};
        return names;
    }

    static std::string csv_header() {
        std::string h = "id,protocol,n";
        for (const auto& m : metric_names()) h += "," + m + "_mean," + m + "_std";
        return h + ",pfd,pfd_ridge";
    }

    std::string csv_row() const {
        std::ostringstream os;
        os << std::setprecision(6) << id << ',' << protocol << ',' << count;
        for (const auto& m : metric_names()) {
            const auto& s = metrics.at(m);
            os << ',' << s.mean << ',' << s.std;
        }
        os << ',';
        if (pfd) os << *pfd;
        os << ',' << (pfd_ridge ? 1 : 0);
        return os.str();
    }

    std::string csv() const { return csv_header() + "\n" + csv_row() + "\n"; }

    std::string table() const {
        std::ostringstream os;
        os << id << "  [" << protocol << ", n=" << count << "]\n";
        os << std::fixed << std::setprecision(4);
        for (const auto& m : metric_names()) {
            const auto& s = metrics.at(m);
            os << "  " << std::left << std::setw(12) << m << std::right << std::setw(10) << s.mean << " +- " << s.std << '\n';
        }
        os << "  " << std::left << std::setw(12) << "pfd" << std::right << std::setw(10);
        if (pfd) os << *pfd << (pfd_ridge ? " (ridge)" : "");
        else os << "n/a";
        os << '\n';
        return os.str();
    }
};

/// Metrics of generated images against the full condition sets of the
/// faces they were conditioned on (all four, whichever were active).
struct PerImageMetrics {
    double mask_acc, attr_acc, sketch_f1, lowres_psnr;
    Eigen::VectorXd features;
};

inline PerImageMetrics image_metrics(const Image& img, const ConditionSet& target) {
    const Image c = clamp_image(img);
    const auto rec = invert_params(c).params;
    return PerImageMetrics{mask_accuracy_of(rec, target.payload(Modality::Mask)),
                           attr_accuracy_of(rec, target.payload(Modality::Attr)),
                           edge_f1(sketch_from_image(c), target.payload(Modality::Sketch)),
                           psnr(lowres_from_image(c), target.payload(Modality::LowRes)), oracle_features(c, rec)};
}

inline EvalReport summarise(const std::string& id, const std::string& protocol, const std::vector<PerImageMetrics>& per,
                            const std::vector<Eigen::VectorXd>& reference_features) {
    if (per.empty()) throw ConfigError("evaluation needs at least one sample");
    EvalReport r{id, protocol, per.size(), {}, std::nullopt, false};
    auto stat = [&](auto get) {
        MetricStat s;
        for (const auto& p : per) s.mean += get(p) / double(per.size());
        for (const auto& p : per) s.std += (get(p) - s.mean) * (get(p) - s.mean);
        s.std = per.size() > 1 ? std::sqrt(s.std / double(per.size() - 1)) : 0.0;
        return s;
    };
    r.metrics["mask_acc"] = stat([](const auto& p) { return p.mask_acc; });
    r.metrics["attr_acc"] = stat([](const auto& p) { return p.attr_acc; });
    r.metrics["sketch_f1"] = stat([](const auto& p) { return p.sketch_f1; });
    r.metrics["lowres_psnr"] = stat([](const auto& p) { return p.lowres_psnr; });
    if (per.size() >= kPfdMinImages && reference_features.size() >= kPfdMinImages) {
        std::vector<Eigen::VectorXd> gen;
        for (const auto& p : per) gen.push_back(p.features);
        const auto f = pfd_features(gen, reference_features);
        r.pfd = f.distance;
        r.pfd_ridge = f.ridge;
    }
    return r;
}

/// "uni:<m>", "multi:<m>+<m>..." or "none" (unconditional baseline).
struct EvalProtocol {
    ModalitySet active;
    std::string text;

    static EvalProtocol parse(const std::string& s) {
        if (s == "none") return {ModalitySet{}, s};
        const auto colon = s.find(':');
        if (colon == std::string::npos) throw ConfigError("protocol must be uni:<modality>, multi:<set> or none");
        const std::string kind = s.substr(0, colon), rest = s.substr(colon + 1);
        if (kind == "uni") return {ModalitySet{parse_modality(rest)}, s};
        if (kind == "multi") {
            const auto set = parse_modality_set(rest);
            if (set.members().size() < 2) throw ConfigError("multi protocol needs at least two modalities");
            return {set, s};
        }
        throw ConfigError("unknown protocol kind '" + kind + "'");
    }
};

/// Eval faces come from a seed range disjoint from anything training draws
/// in practice (training seeds are full 64-bit random draws).
inline constexpr std::uint64_t kEvalSeedBase = 0xe7a1000000ULL;

inline FaceParams eval_face(std::uint64_t index) { return sample_params(kEvalSeedBase + index); }

struct EvalOptions {
    std::size_t n = 64;
    std::uint64_t sample_seed = 0;
    GuidanceSpec guidance{GuidanceMode::Scalar, 1.0, {1.0, 1.0, 1.0, 1.0}};
};

/// Samples one image per eval face under the protocol's active conditions
/// and scores it against that face.
inline EvalReport evaluate(const std::vector<const NoisePredictor*>& models, const std::string& id,
                           const EvalProtocol& protocol, const NoiseSchedule& sched, const EvalOptions& opt) {
    if (opt.n < 1) throw ConfigError("evaluation needs n >= 1");
    const int side = models.at(0)->side();
    GuidanceSpec g = opt.guidance;
    if (protocol.active.empty()) g.mode = GuidanceMode::None;
    std::vector<PerImageMetrics> per;
    std::vector<Eigen::VectorXd> ref;
    for (std::size_t i = 0; i < opt.n; ++i) {
        const auto p = eval_face(i);
        const auto target = derive_conditions(p, side);
        const auto cs = target.restricted(protocol.active);
        // Chain i of the seed stream, independent of n.
        auto out = sample(models, cs, g, sched, opt.sample_seed ^ (0x9e3779b97f4a7c15ULL * (i + 1)), 1);
        per.push_back(image_metrics(out.images.front(), target));
        ref.push_back(oracle_features(render(p, side), p));
    }
    return summarise(id, protocol.text, per, ref);
}

}  // namespace mmface
