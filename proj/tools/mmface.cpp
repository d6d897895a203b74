// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: data export, training, sampling, evaluation,
// ablation batches and the verification suites.
//
// Exit codes: 0 success, 1 usage/config error, 2 verification failure,
// 3 runtime numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmface/ablation.hpp"
#include "mmface/analytic.hpp"
#include "mmface/evalkit.hpp"
#include "mmface/pgm.hpp"
#include "mmface/trainer.hpp"
#include "mmface/verify.hpp"

namespace fs = std::filesystem;
using namespace mmface;

namespace {

RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig{} : RunConfig::load(path); }

int cmd_datagen(const std::string& config, std::size_t count, const std::string& export_dir) {
    const RunConfig cfg = load_config(config);
    const fs::path dir(export_dir);
    for (const char* sub : {"images", "masks", "sketches", "lowres"}) fs::create_directories(dir / sub);
    cfg.save(dir / "config.ini");
    std::ofstream attr(dir / "attributes.csv"), params(dir / "params.csv");
    attr << attr_csv_header() << '\n';
    params << "index,seed";
    for (const auto& f : kFieldRanges) params << ',' << f.name;
    params << '\n' << std::setprecision(17);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t seed = cfg.seed + i;
        const auto p = sample_params(seed);
        const auto cs = derive_conditions(p, cfg.side);
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.pgm", i);
        write_image_pgm(dir / "images" / name, render(p, cfg.side));
        write_mask_pgm(dir / "masks" / name, cs.payload(Modality::Mask));
        write_sketch_pgm(dir / "sketches" / name, cs.payload(Modality::Sketch));
        write_image_pgm(dir / "lowres" / name, cs.payload(Modality::LowRes));
        attr << attr_csv_row(cs.payload(Modality::Attr)) << '\n';
        params << i << ',' << seed;
        for (double v : p.to_array()) params << ',' << v;
        params << '\n';
    }
    std::cout << "exported " << count << " faces to " << dir << '\n';
    return 0;
}

int cmd_train(const std::string& config, const std::string& out_override, bool resume, bool quiet) {
    RunConfig cfg = load_config(config);
    if (!out_override.empty()) cfg.out_dir = out_override;
    const auto res = run(cfg, cfg.out_dir, resume, [&](std::uint64_t it, double loss) {
        if (!quiet && (it % 100 == 0 || it == cfg.iters)) std::cout << "iter " << it << " loss " << loss << '\n';
    });
    std::cout << "final checkpoint " << res.final_checkpoint.string() << "\nloss curve " << res.loss_csv.string() << '\n';
    return 0;
}

/// "mask=eval_seed:3,attr=path.csv" -> ConditionSet. Files follow the export
/// formats: PGM for mask/sketch/lowres, CSV (first data row) for attr.
ConditionSet parse_conditions(const std::string& spec, int side) {
    ConditionSet cs(side);
    if (spec.empty() || spec == "none") return cs;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("condition '" + item + "' must be <modality>=<source>");
        const Modality m = parse_modality(item.substr(0, eq));
        const std::string src = item.substr(eq + 1);
        const std::string prefix = "eval_seed:";
        if (src.rfind(prefix, 0) == 0) {
            std::uint64_t k = 0;
            try {
                k = std::stoull(src.substr(prefix.size()));
            } catch (const std::exception&) {
                throw ConfigError("bad eval seed in '" + item + "'");
            }
            cs.set(m, derive_conditions(eval_face(k), side).payload(m));
        } else {
            switch (m) {
                case Modality::Mask: cs.set(m, read_mask_pgm(src)); break;
                case Modality::Sketch: cs.set(m, read_sketch_pgm(src)); break;
                case Modality::LowRes: cs.set(m, from_gray(read_pgm(src))); break;
                case Modality::Attr: {
                    // path.csv or path.csv@row (0-based data row)
                    const auto at = src.rfind('@');
                    if (at == std::string::npos) {
                        cs.set(m, read_attr_csv(src));
                    } else {
                        std::size_t row = 0;
                        try {
                            row = std::stoul(src.substr(at + 1));
                        } catch (const std::exception&) {
                            throw ConfigError("bad attribute row in '" + item + "'");
                        }
                        cs.set(m, read_attr_csv(src.substr(0, at), row));
                    }
                    break;
                }
            }
        }
    }
    return cs;
}

struct GuidanceFlags {
    std::string mode;
    double w = -1.0;
    std::vector<double> w_m;

    GuidanceSpec resolve(const RunConfig& cfg) const {
        GuidanceSpec g = cfg.guidance_spec();
        if (!mode.empty()) g.mode = parse_guidance(mode);
        if (w >= 0.0) g.w = w;
        if (!w_m.empty()) {
            if (w_m.size() != kModalityCount) throw ConfigError("--w-m takes one weight per modality (4)");
            std::copy(w_m.begin(), w_m.end(), g.w_m.begin());
        }
        g.validate();
        return g;
    }

    void add(CLI::App* app) {
        app->add_option("--guidance", mode, "none | scalar | per_modality | parallel");
        app->add_option("--w", w, "scalar guidance weight");
        app->add_option("--w-m", w_m, "per-modality weights (mask attr sketch lowres)")->delimiter(',');
    }
};

std::vector<std::unique_ptr<CheckpointPredictor>> load_models(const std::vector<std::string>& paths) {
    std::vector<std::unique_ptr<CheckpointPredictor>> out;
    for (const auto& p : paths) out.push_back(std::make_unique<CheckpointPredictor>(p));
    return out;
}

std::vector<const NoisePredictor*> views(const std::vector<std::unique_ptr<CheckpointPredictor>>& ms) {
    std::vector<const NoisePredictor*> out;
    for (const auto& m : ms) out.push_back(m.get());
    return out;
}

int cmd_sample(const std::vector<std::string>& ckpts, const std::string& cond, const GuidanceFlags& gf,
               std::size_t count, std::optional<std::uint64_t> seed, const std::string& out) {
    const auto models = load_models(ckpts);
    RunConfig cfg = models.front()->config();
    const auto guidance = gf.resolve(cfg);
    const auto cs = parse_conditions(cond, models.front()->side());
    const std::uint64_t s = seed.value_or(cfg.sample_seed);
    const auto res = sample(views(models), cs, guidance, cfg.schedule(), s, count);
    const fs::path dir(out);
    fs::create_directories(dir);
    cfg.guidance = guidance.mode;
    cfg.w = guidance.w;
    cfg.w_m = guidance.w_m;
    cfg.count = count;
    cfg.sample_seed = s;
    cfg.out_dir = dir.string();
    cfg.save(dir / "config.ini");
    std::ofstream csv(dir / "samples.csv");
    csv << "file,seed,chain,active,guidance,w,w_m,checkpoints\n";
    std::string wm, ck;
    for (std::size_t i = 0; i < kModalityCount; ++i) wm += (i ? ";" : "") + std::to_string(guidance.w_m[i]);
    for (std::size_t i = 0; i < ckpts.size(); ++i) ck += (i ? ";" : "") + ckpts[i];
    for (std::size_t i = 0; i < res.images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%04zu.pgm", i);
        write_image_pgm(dir / name, res.images[i]);
        csv << name << ',' << s << ',' << i << ',' << cs.active_set().str() << ',' << guidance_name(guidance.mode)
            << ',' << guidance.w << ',' << wm << ',' << ck << '\n';
    }
    std::cout << "wrote " << res.images.size() << " samples to " << dir << " (" << res.forward_passes
              << " forward passes)\n";
    return 0;
}

int cmd_eval(const std::vector<std::string>& ckpts, const std::vector<std::string>& against,
             const std::string& protocol_text, std::size_t n, const GuidanceFlags& gf,
             std::optional<std::uint64_t> seed, const std::string& out) {
    const auto protocol = EvalProtocol::parse(protocol_text);
    auto report_for = [&](const std::vector<std::string>& paths) {
        const auto models = load_models(paths);
        const RunConfig& cfg = models.front()->config();
        EvalOptions opt{n, seed.value_or(cfg.sample_seed), gf.resolve(cfg)};
        std::string id;
        for (std::size_t i = 0; i < paths.size(); ++i) id += (i ? ";" : "") + paths[i];
        return evaluate(views(models), id, protocol, cfg.schedule(), opt);
    };
    std::vector<EvalReport> reports{report_for(ckpts)};
    if (!against.empty()) reports.push_back(report_for(against));
    std::ostringstream csv;
    csv << EvalReport::csv_header() << '\n';
    for (const auto& r : reports) {
        csv << r.csv_row() << '\n';
        std::cout << r.table();
    }
    if (reports.size() == 2) {
        std::cout << "difference (first - against):\n";
        for (const auto& m : EvalReport::metric_names()) {
            std::cout << "  " << m << ' ' << reports[0].metrics.at(m).mean - reports[1].metrics.at(m).mean << '\n';
        }
    }
    if (!out.empty()) {
        fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path());
        std::ofstream(out) << csv.str();
    } else {
        std::cout << csv.str();
    }
    return 0;
}

int cmd_ablate(const std::string& configs, const std::string& out, std::size_t n, bool quiet) {
    const auto plan = AblationPlan::from_directory(configs, out);
    const auto result = run_ablation(plan, n, [&](const std::string& msg) {
        if (!quiet) std::cout << msg << std::endl;
    });
    std::cout << result.table_csv << "\nwrote " << (fs::path(plan.out_dir) / "ablation.csv").string() << '\n';
    return 0;
}

int cmd_gradcheck(std::size_t probes, std::uint64_t seed) {
    const auto rep = micro_grad_check(probes, seed);
    std::cout << "probes " << rep.probes.size() << ", max relative error " << rep.max_rel_error << " (tolerance "
              << kGradCheckTolerance << ")\n";
    if (rep.max_rel_error >= kGradCheckTolerance) {
        for (const auto& p : rep.probes)
            if (p.rel_error >= kGradCheckTolerance)
                std::cout << "  " << p.name << '[' << p.offset << "] analytic " << p.analytic << " numeric "
                          << p.numeric << '\n';
        std::cout << "FAIL\n";
        return 2;
    }
    std::cout << "PASS\n";
    return 0;
}

int cmd_oracle(std::size_t chains, const std::string& csv_path) {
    OracleOptions opt;
    opt.chains = chains;
    const auto rep = verify_cfg_reduction(separated_mixture(), NoiseSchedule{}, overlapping_mixture(), opt);
    for (const auto& c : rep.checks) std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    if (!csv_path.empty()) std::ofstream(csv_path) << rep.chains_csv();
    else std::cout << rep.chains_csv();
    return rep.passed() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mmface: multi-modal conditioned diffusion on procedural faces"};
    app.require_subcommand(1);

    std::string config, export_dir, out, cond, protocol = "multi:mask+attr", configs_dir, csv_path;
    std::size_t count = 16, n = 64, probes = 64, chains = 5000;
    bool resume = false, quiet = false;
    std::uint64_t seed_value = 0;
    std::vector<std::string> ckpts, against;
    GuidanceFlags gf;

    auto* datagen = app.add_subcommand("datagen", "export faces and their conditions as PGM/CSV");
    datagen->add_option("--config", config, "run config (INI)");
    datagen->add_option("--count", count, "number of faces")->required();
    datagen->add_option("--export", export_dir, "output directory")->required();

    auto* train = app.add_subcommand("train", "train one variant");
    train->add_option("--config", config, "run config (INI)")->required();
    train->add_option("--out", out, "override [paths] out_dir");
    train->add_flag("--resume", resume, "continue from the latest checkpoint");
    train->add_flag("--quiet", quiet);

    auto* samp = app.add_subcommand("sample", "sample images from checkpoint(s)");
    samp->add_option("--ckpt", ckpts, "checkpoint dir (repeat for parallel guidance)")->required();
    samp->add_option("--cond", cond, "conditions, e.g. mask=eval_seed:3,attr=attributes.csv@3");
    samp->add_option("--count", count, "images");
    auto* sample_seed = samp->add_option("--seed", seed_value, "sampling seed (default: config)");
    samp->add_option("--out", out, "output directory")->required();
    gf.add(samp);

    auto* eval = app.add_subcommand("eval", "alignment and quality metrics");
    eval->add_option("--ckpt", ckpts, "checkpoint dir (repeat for parallel guidance)")->required();
    eval->add_option("--against", against, "second checkpoint set to compare with");
    eval->add_option("--protocol", protocol, "uni:<m> | multi:<m>+<m>... | none");
    eval->add_option("--n", n, "eval faces");
    auto* eval_seed = eval->add_option("--seed", seed_value, "sampling seed (default: config)");
    eval->add_option("--out", out, "CSV path (default: stdout)");
    gf.add(eval);

    auto* ablate = app.add_subcommand("ablate", "train and evaluate the ablation variants");
    ablate->add_option("--configs", configs_dir, "directory with base.ini and optional per-variant overrides")->required();
    ablate->add_option("--out", out, "output directory (default: [paths] out_dir of base.ini)");
    ablate->add_option("--n", n, "eval faces per protocol");
    ablate->add_flag("--quiet", quiet);

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the micro denoiser");
    gradcheck->add_option("--probes", probes);
    gradcheck->add_option("--seed", seed_value);

    auto* oracle = app.add_subcommand("oracle-check", "guidance composition against the analytic mixture oracle");
    oracle->add_option("--chains", chains);
    oracle->add_option("--csv", csv_path, "chain statistics CSV (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    auto opt_seed = [&](CLI::Option* o) { return o->count() ? std::optional<std::uint64_t>(seed_value) : std::nullopt; };
    try {
        if (*datagen) return cmd_datagen(config, count, export_dir);
        if (*train) return cmd_train(config, out, resume, quiet);
        if (*samp) return cmd_sample(ckpts, cond, gf, count, opt_seed(sample_seed), out);
        if (*eval) return cmd_eval(ckpts, against, protocol, n, gf, opt_seed(eval_seed), out);
        if (*ablate) return cmd_ablate(configs_dir, out, n, quiet);
        if (*gradcheck) return cmd_gradcheck(probes, seed_value);
        if (*oracle) return cmd_oracle(chains, csv_path);
    } catch (const VerificationFailure& e) {
        std::cerr << "verification failure: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const DimError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
