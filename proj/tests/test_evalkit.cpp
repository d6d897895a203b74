// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "mmface/evalkit.hpp"
#include "mmface/model.hpp"

using namespace mmface;

namespace {

std::vector<Eigen::VectorXd> gaussian_cloud(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<Eigen::VectorXd> out;
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(d));
        for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = scale * (k + 1) * nd(rng);
        out.push_back(v);
    }
    return out;
}

Tensor<double> edges(std::initializer_list<std::pair<int, int>> on) {
    Tensor<double> t = Tensor<double>::matrix(8, 8);
    for (auto [y, x] : on) t.at(std::size_t(y), std::size_t(x)) = 1.0;
    return t;
}

}  // namespace

TEST(Metrics, ScoresOfTheTrueRenderOnALatticePoint) {
    std::array<int, FaceParams::kFields> idx{};
    idx.fill(2);
    const auto p = lattice_point(idx);
    ASSERT_TRUE(geometry_valid(p));
    const auto img = render(p, 16);
    const auto cs = derive_conditions(p, 16);
    EXPECT_EQ(mask_accuracy(img, cs.payload(Modality::Mask)), 1.0);
    EXPECT_EQ(attr_accuracy(img, cs.payload(Modality::Attr)), 1.0);
    EXPECT_EQ(sketch_f1(img, cs.payload(Modality::Sketch)), 1.0);
    EXPECT_EQ(lowres_psnr(img, cs.payload(Modality::LowRes)), kPsnrCap);
    const auto m = image_metrics(img, cs);
    EXPECT_EQ(m.mask_acc, 1.0);
    EXPECT_EQ(m.features.size(), Eigen::Index(kFeatureDim));
}

TEST(Metrics, AccuraciesAreFractionsAndDimsAreChecked) {
    const auto target = derive_conditions(sample_params(70), 16);
    const auto other = render(sample_params(71), 16);
    const double acc = mask_accuracy(other, target.payload(Modality::Mask));
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
    EXPECT_LT(acc, 1.0);
    EXPECT_THROW(mask_accuracy(render(sample_params(71), 32), target.payload(Modality::Mask)), DimError);
    EXPECT_THROW(attr_accuracy_of(sample_params(1), Tensor<double>::matrix(1, 5)), DimError);
}

TEST(Metrics, PsnrArithmetic) {
    const auto a = Tensor<double>::matrix(4, 4, 0.2);
    const auto b = Tensor<double>::matrix(4, 4, 0.3);  // mse 0.01 -> 10 log10(400)
    EXPECT_NEAR(psnr(a, b), 26.0206, 1e-4);
    EXPECT_EQ(psnr(a, a), kPsnrCap);
    EXPECT_THROW(psnr(a, Tensor<double>::matrix(2, 2)), DimError);
}

TEST(Metrics, EdgeF1Tolerance) {
    const auto none = Tensor<double>::matrix(8, 8);
    EXPECT_EQ(edge_f1(none, none), 1.0);
    EXPECT_EQ(edge_f1(edges({{3, 3}}), none), 0.0);
    EXPECT_EQ(edge_f1(none, edges({{3, 3}})), 0.0);
    EXPECT_EQ(edge_f1(edges({{3, 3}}), edges({{4, 4}})), 1.0);  // diagonal neighbour
    EXPECT_EQ(edge_f1(edges({{3, 3}}), edges({{3, 5}})), 0.0);  // two pixels away
    // Precision 1/2, recall 1: F1 = 2/3.
    EXPECT_NEAR(edge_f1(edges({{1, 1}, {6, 6}}), edges({{1, 2}})), 2.0 / 3.0, 1e-15);
}

TEST(Metrics, ClampingBeforeScoring) {
    Image img = Image::matrix(16, 16, 3.0);
    img[0] = -7.0;
    const auto c = clamp_image(img);
    EXPECT_EQ(c[0], -1.0);
    EXPECT_EQ(c[1], 1.0);
    const auto lr = lowres_from_image(Image::matrix(16, 16, 1.0));
    EXPECT_EQ(lowres_psnr(img, lr), lowres_psnr(c, lr));
}

TEST(Frechet, IdenticalSetsAndMeanShift) {
    const auto a = gaussian_cloud(200, 4, 1);
    EXPECT_NEAR(pfd_features(a, a).distance, 0.0, 1e-9);
    const Eigen::Vector4d delta(0.5, -1.0, 0.25, 2.0);
    auto b = a;
    for (auto& v : b) v += delta;
    EXPECT_NEAR(pfd_features(a, b).distance, delta.squaredNorm(), 1e-9);
}

TEST(Frechet, DiagonalCovariancesMatchClosedForm) {
    // Commuting covariances: d^2 = |mu_a - mu_b|^2 + sum (sqrt(sa) - sqrt(sb))^2.
    Eigen::VectorXd ma(2), mb(2);
    ma << 1.0, -2.0;
    mb << 0.0, 0.5;
    Eigen::MatrixXd ca = Eigen::MatrixXd::Zero(2, 2), cb = Eigen::MatrixXd::Zero(2, 2);
    ca.diagonal() << 4.0, 0.25;
    cb.diagonal() << 1.0, 9.0;
    const double expected = 1.0 + 6.25 + (2.0 - 1.0) * (2.0 - 1.0) + (0.5 - 3.0) * (0.5 - 3.0);
    const auto r = frechet_distance(ma, ca, mb, cb);
    EXPECT_NEAR(r.distance, expected, 1e-12);
    EXPECT_FALSE(r.ridge);
}

TEST(Frechet, GeneralCovarianceBruteForce) {
    // Non-commuting 2 x 2 pair; reference trace of the cross term computed by
    // the eigen-decomposition of Sa Sb (its eigenvalues are real and positive).
    Eigen::MatrixXd ca(2, 2), cb(2, 2);
    ca << 2.0, 0.6, 0.6, 1.0;
    cb << 1.5, -0.4, -0.4, 0.8;
    const Eigen::VectorXd mu = Eigen::VectorXd::Zero(2);
    Eigen::EigenSolver<Eigen::MatrixXd> es(ca * cb);
    double tr_sqrt = 0.0;
    for (int i = 0; i < 2; ++i) tr_sqrt += std::sqrt(es.eigenvalues()(i).real());
    const double expected = ca.trace() + cb.trace() - 2.0 * tr_sqrt;
    EXPECT_NEAR(frechet_distance(mu, ca, mu, cb).distance, expected, 1e-12);
    EXPECT_NEAR(frechet_distance(mu, ca, mu, cb).distance, frechet_distance(mu, cb, mu, ca).distance, 1e-12);
}

TEST(Frechet, SymmetricNonNegativeAndRidgeFlag) {
    const auto a = gaussian_cloud(80, 5, 2), b = gaussian_cloud(90, 5, 3, 1.3);
    const auto ab = pfd_features(a, b), ba = pfd_features(b, a);
    EXPECT_GT(ab.distance, 0.0);
    EXPECT_NEAR(ab.distance, ba.distance, 1e-9);
    auto flat = a;
    for (auto& v : flat) v(0) = 0.25;  // a constant feature makes the covariance singular
    EXPECT_TRUE(pfd_features(flat, b).ridge);
    EXPECT_GE(pfd_features(flat, flat).distance, 0.0);
    EXPECT_THROW(pfd_features(gaussian_cloud(49, 5, 1), b), ConfigError);
}

TEST(Frechet, ImagesFromTheSameGeneratorAreCloserThanShiftedOnes) {
    std::vector<Eigen::VectorXd> a, b, bright;
    for (std::uint64_t s = 0; s < 60; ++s) {
        const auto pa = sample_params(9000 + s), pb = sample_params(9100 + s);
        a.push_back(oracle_features(render(pa, 16), pa));
        b.push_back(oracle_features(render(pb, 16), pb));
        auto pc = pb;
        pc.g_bg = 0.95;  // every background bright
        bright.push_back(oracle_features(render(pc, 16), pc));
    }
    EXPECT_LT(pfd_features(a, b).distance, pfd_features(a, bright).distance);
}

TEST(Report, CsvLayout) {
    std::vector<PerImageMetrics> per;
    for (int i = 0; i < 3; ++i) per.push_back({0.5 + 0.1 * i, 1.0, 0.25, 20.0, Eigen::VectorXd::Zero(kFeatureDim)});
    const auto r = summarise("X", "uni:mask", per, {});
    EXPECT_NEAR(r.metrics.at("mask_acc").mean, 0.6, 1e-12);
    EXPECT_NEAR(r.metrics.at("mask_acc").std, 0.1, 1e-12);
    EXPECT_FALSE(r.pfd.has_value());
    const auto header = EvalReport::csv_header();
    EXPECT_EQ(header, "id,protocol,n,mask_acc_mean,mask_acc_std,attr_acc_mean,attr_acc_std,sketch_f1_mean,"
                      "sketch_f1_std,lowres_psnr_mean,lowres_psnr_std,pfd,pfd_ridge");
    const auto row = r.csv_row();
    EXPECT_EQ(std::count(row.begin(), row.end(), ','), std::count(header.begin(), header.end(), ','));
    EXPECT_EQ(row.substr(0, 13), "X,uni:mask,3,");
    EXPECT_NE(r.table().find("n/a"), std::string::npos);
    EXPECT_THROW(summarise("X", "none", {}, {}), ConfigError);
}

TEST(Protocol, Parsing) {
    EXPECT_EQ(EvalProtocol::parse("uni:attr").active, ModalitySet{Modality::Attr});
    EXPECT_EQ(EvalProtocol::parse("multi:attr+mask").active, (ModalitySet{Modality::Mask, Modality::Attr}));
    EXPECT_TRUE(EvalProtocol::parse("none").active.empty());
    EXPECT_THROW(EvalProtocol::parse("multi:mask"), ConfigError);
    EXPECT_THROW(EvalProtocol::parse("uni:text"), ConfigError);
    EXPECT_THROW(EvalProtocol::parse("mask"), ConfigError);
    EXPECT_THROW(EvalProtocol::parse("pair:mask+attr"), ConfigError);
}

TEST(Evaluate, DeterministicAndBounded) {
    auto model = Model<double>::create(DenoiserConfig::micro(), FusionConfig{}, 2);
    const ModelPredictor<double> p(model);
    const NoiseSchedule sched(10);
    EvalOptions opt;
    opt.n = 3;
    const auto a = evaluate({&p}, "micro", EvalProtocol::parse("multi:mask+attr"), sched, opt);
    const auto b = evaluate({&p}, "micro", EvalProtocol::parse("multi:mask+attr"), sched, opt);
    EXPECT_EQ(a.csv(), b.csv());
    EXPECT_EQ(a.count, 3u);
    for (const char* m : {"mask_acc", "attr_acc", "sketch_f1"}) {
        EXPECT_GE(a.metrics.at(m).mean, 0.0);
        EXPECT_LE(a.metrics.at(m).mean, 1.0);
    }
    // The unconditional protocol ignores the guidance mode.
    EXPECT_NO_THROW(evaluate({&p}, "micro", EvalProtocol::parse("none"), sched, opt));
    EXPECT_EQ(eval_face(4), sample_params(kEvalSeedBase + 4));
}
