// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mmface/evalkit.hpp"
#include "mmface/trainer.hpp"

namespace mmface {

// The ablation matrix: a parallel baseline of independent single-modality
// models, then one shared-network variant per mechanism toggled on.

struct AblationEntry {
    std::string name;      // row label
    bool parallel = false;  // M1: independent per-modality models
    RunConfig config;       // unused fields for parallel: variant
    bool decoration = false, inter_modal = false, adjust_noise = false;
    std::string training;  // "uni-modal" | "multi-modal"
};

inline const std::vector<std::string>& ablation_protocols() {
    static const std::vector<std::string> p{"multi:mask+attr", "uni:mask", "uni:attr", "none"};
    return p;
}

inline constexpr const char* kHeadlineProtocol = "multi:mask+attr";

struct AblationPlan {
    std::vector<AblationEntry> entries;
    std::filesystem::path out_dir;

    /// Builds the matrix from a base config; `variant` is ignored there.
    /// A file <configs>/<ROW>.ini (e.g. M6_FULL_EAM.ini) overrides keys for that row.
    static AblationPlan from_base(const RunConfig& base, const std::filesystem::path& out_dir,
                                  const std::filesystem::path& overrides = {}) {
        AblationPlan plan;
        plan.out_dir = out_dir;
        auto make = [&](const std::string& name, std::optional<VariantSpec> v, bool dec, bool inter, bool noise,
                        const std::string& training) {
            RunConfig c = base;
            if (v) c.variant = *v;
            if (!overrides.empty() && std::filesystem::exists(overrides / (name + ".ini"))) {
                std::ifstream in(overrides / (name + ".ini"));
                c = RunConfig::parse(in, c);
            }
            c.out_dir = (out_dir / name).string();
            c.validate();
            plan.entries.push_back({name, !v.has_value(), c, dec, inter, noise, training});
        };
        make("M1_PARALLEL", std::nullopt, false, false, false, "uni-modal");
        make("M2_DECOR_ONLY", VariantSpec{Variant::DecorOnly}, true, false, false, "uni-modal");
        make("M3_FULL", VariantSpec{Variant::Full}, true, true, false, "uni-modal");
        make("M5_MULTI_SURR", VariantSpec{Variant::MultiSurrogate}, true, false, false, "multi-modal");
        make("M6_FULL_EAM", VariantSpec{Variant::FullEam}, true, true, true, "uni-modal");
        return plan;
    }

    static AblationPlan from_directory(const std::filesystem::path& configs, const std::string& out_override = {}) {
        const auto base_path = configs / "base.ini";
        if (!std::filesystem::exists(base_path)) throw ConfigError("ablate: missing " + base_path.string());
        const RunConfig base = RunConfig::load(base_path);
        const std::filesystem::path out = out_override.empty() ? std::filesystem::path(base.out_dir) : std::filesystem::path(out_override);
        return from_base(base, out, configs);
    }
};

struct AblationResult {
    // row -> protocol -> report
    std::map<std::string, std::map<std::string, EvalReport>> reports;
    std::map<std::string, std::filesystem::path> loss_csv;  // shared-network rows only
    std::string table_csv;
    std::string tasks_csv;

    double metric(const std::string& row, const std::string& protocol, const std::string& m) const {
        return reports.at(row).at(protocol).metrics.at(m).mean;
    }
};

using LogFn = std::function<void(const std::string&)>;

/// Trains every row (resuming finished or partial runs, so repeated calls
/// reuse artifacts produced by identical configs), then evaluates each row
/// on every protocol with the same eval faces and sampling seeds.
inline AblationResult run_ablation(const AblationPlan& plan, std::size_t n, const LogFn& log = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(plan.out_dir);
    AblationResult result;
    auto say = [&](const std::string& s) {
        if (log) log(s);
    };
    for (const auto& e : plan.entries) {
        std::vector<std::unique_ptr<CheckpointPredictor>> models;
        if (e.parallel) {
            say("[ablate] training " + e.name + " (4 single-modality models)");
            for (const auto& ck : train_parallel_baseline(e.config, e.config.out_dir, true))
                models.push_back(std::make_unique<CheckpointPredictor>(ck));
        } else {
            say("[ablate] training " + e.name);
            const auto r = run(e.config, e.config.out_dir, true);
            result.loss_csv[e.name] = r.loss_csv;
            models.push_back(std::make_unique<CheckpointPredictor>(r.final_checkpoint));
        }
        std::vector<const NoisePredictor*> views;
        for (const auto& m : models) views.push_back(m.get());
        for (const auto& proto_text : ablation_protocols()) {
            const auto proto = EvalProtocol::parse(proto_text);
            GuidanceSpec g = e.config.guidance_spec();
            if (e.parallel) {
                // Independent models compose one guided term per modality.
                g.mode = GuidanceMode::Parallel;
                g.w_m.fill(e.config.w);
            } else {
                g.mode = GuidanceMode::Scalar;
            }
            if (e.parallel && proto.active.empty()) {
                // No parallel composition without conditions: use the mask model's unconditional branch.
                g.mode = GuidanceMode::None;
            }
            std::vector<const NoisePredictor*> use = views;
            if (e.parallel && proto.active.empty()) use = {views.front()};
            say("[ablate] evaluating " + e.name + " on " + proto_text);
            auto rep = evaluate(use, e.name, proto, e.config.schedule(), EvalOptions{n, e.config.sample_seed, g});
            result.reports[e.name][proto_text] = rep;
        }
    }

    std::ostringstream table, tasks;
    const std::string flags_header = "variant,decoration,inter_modal,adjust_noise,training,";
    table << flags_header << EvalReport::csv_header() << '\n';
    tasks << flags_header << EvalReport::csv_header() << '\n';
    for (const auto& e : plan.entries) {
        std::ostringstream flags;
        flags << e.name << ',' << e.decoration << ',' << e.inter_modal << ',' << e.adjust_noise << ',' << e.training
              << ',';
        table << flags.str() << result.reports.at(e.name).at(kHeadlineProtocol).csv_row() << '\n';
        for (const auto& p : ablation_protocols()) tasks << flags.str() << result.reports.at(e.name).at(p).csv_row() << '\n';
    }
    result.table_csv = table.str();
    result.tasks_csv = tasks.str();
    std::ofstream(plan.out_dir / "ablation.csv") << result.table_csv;
    std::ofstream(plan.out_dir / "ablation_tasks.csv") << result.tasks_csv;
    return result;
}

}  // namespace mmface
