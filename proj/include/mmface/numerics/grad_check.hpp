// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "mmface/numerics/param_store.hpp"

namespace mmface {

/// Evaluates a scalar loss over `params`. When `with_grad` is set it must also
/// backpropagate, accumulating into params' gradient buffers.
using Objective = std::function<double(ParamStore<double>& params, bool with_grad)>;

struct GradProbe {
    std::string name;
    std::size_t offset = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::vector<GradProbe> probes;
};

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// How probe coordinates are chosen: uniformly over all scalars, or cycling
/// through tensors (random offset within each) so small tensors are covered.
enum class ProbeMode { Uniform, PerTensor };

/// Central-difference check of `n_probe` randomly chosen scalar parameters.
inline GradCheckReport grad_check(const Objective& loss_fn, ParamStore<double>& params, double h, std::size_t n_probe,
                                  std::uint64_t seed = 0, ProbeMode mode = ProbeMode::Uniform) {
    if (h < 1e-6 || h > 1e-4) throw ConfigError("grad_check: step h must lie in [1e-6, 1e-4]");
    params.zero_grad();
    const double base = loss_fn(params, true);
    if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss at base point");

    const std::size_t total = params.scalar_count();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    const auto names = params.names();

    GradCheckReport report;
    for (std::size_t probe = 0; probe < n_probe; ++probe) {
        std::string name;
        std::size_t offset = 0;
        if (mode == ProbeMode::Uniform) {
            std::tie(name, offset) = params.locate(pick(rng));
        } else {
            name = names[probe % names.size()];
            offset = std::uniform_int_distribution<std::size_t>(0, params.param(name).size() - 1)(rng);
        }
        double& p = params.param(name)[offset];
        const double analytic = params.grad(name)[offset];
        const double saved = p;
        p = saved + h;
        const double up = loss_fn(params, false);
        p = saved - h;
        const double down = loss_fn(params, false);
        p = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("grad_check: non-finite loss probing " + name + "[" + std::to_string(offset) + "]");
        }
        const double numeric = (up - down) / (2.0 * h);
        GradProbe gp{name, offset, analytic, numeric, relative_error(analytic, numeric)};
        report.max_rel_error = std::max(report.max_rel_error, gp.rel_error);
        report.probes.push_back(std::move(gp));
    }
    return report;
}

}  // namespace mmface
