// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mmface/denoiser.hpp"
#include "mmface/diffusion.hpp"
#include "mmface/facegen.hpp"

namespace mmface {

// ---------------------------------------------------------------------------
// Training variants (ablation rows)

enum class Variant { DecorOnly, Full, MultiNoSurrogate, MultiSurrogate, FullEam, UniSingle };

struct VariantSpec {
    Variant kind = Variant::Full;
    Modality single = Modality::Mask;  // UniSingle only

    std::string name() const {
        switch (kind) {
            case Variant::DecorOnly: return "M2_DECOR_ONLY";
            case Variant::Full: return "M3_FULL";
            case Variant::MultiNoSurrogate: return "M4_MULTI_NOSURR";
            case Variant::MultiSurrogate: return "M5_MULTI_SURR";
            case Variant::FullEam: return "M6_FULL_EAM";
            case Variant::UniSingle: return "UNI_SINGLE:" + std::string(modality_name(single));
        }
        return "?";
    }

    static VariantSpec parse(const std::string& s) {
        static const std::map<std::string, Variant> names{
            {"M2_DECOR_ONLY", Variant::DecorOnly},         {"M3_FULL", Variant::Full},
            {"M4_MULTI_NOSURR", Variant::MultiNoSurrogate}, {"M5_MULTI_SURR", Variant::MultiSurrogate},
            {"M6_FULL_EAM", Variant::FullEam}};
        if (auto it = names.find(s); it != names.end()) return VariantSpec{it->second};
        const std::string prefix = "UNI_SINGLE:";
        if (s.rfind(prefix, 0) == 0) return VariantSpec{Variant::UniSingle, parse_modality(s.substr(prefix.size()))};
        throw ConfigError("unknown variant '" + s +
                          "' (expected M2_DECOR_ONLY, M3_FULL, M4_MULTI_NOSURR, M5_MULTI_SURR, M6_FULL_EAM or "
                          "UNI_SINGLE:<modality>)");
    }

    bool multi_modal() const { return kind == Variant::MultiNoSurrogate || kind == Variant::MultiSurrogate; }

    /// Surrogate bank, encoders and inactive-token policy.
    FusionConfig fusion() const {
        FusionConfig fc;
        switch (kind) {
            case Variant::DecorOnly:
            case Variant::MultiSurrogate: fc.inter_modal = false; break;
            case Variant::MultiNoSurrogate:
                fc.surrogates = ModalitySet{};
                fc.inter_modal = false;
                break;
            case Variant::UniSingle:
                fc.accepted = ModalitySet{single};
                fc.surrogates = ModalitySet{single};
                break;
            case Variant::Full:
            case Variant::FullEam: break;
        }
        return fc;
    }

    /// Auxiliary noise heads: only the modulated variant keeps the configured K.
    std::size_t heads(std::size_t configured_k) const { return kind == Variant::FullEam ? configured_k : 0; }

    friend bool operator==(const VariantSpec& a, const VariantSpec& b) {
        return a.kind == b.kind && (a.kind != Variant::UniSingle || a.single == b.single);
    }
};

// ---------------------------------------------------------------------------
// Run configuration (INI with sections)

struct RunConfig {
    // [data]
    int side = 16;
    std::uint64_t seed = 0;
    // [model]
    std::size_t width = 128, blocks = 4, d = 64, K = 3;
    bool input_skip = true;
    // [schedule]
    int T = 200;
    double beta_start = 1e-4, beta_end = 0.02;
    // [train]
    VariantSpec variant{};
    std::uint64_t iters = 10000;
    std::size_t batch = 32;
    double lr = 1e-4;
    double p_uncond = 0.1;
    bool fp64 = false;
    std::uint64_t checkpoint_every = 1000;
    // [sample]
    GuidanceMode guidance = GuidanceMode::Scalar;
    double w = 1.0;
    std::array<double, kModalityCount> w_m{1.0, 1.0, 1.0, 1.0};
    std::size_t count = 16;
    std::uint64_t sample_seed = 0;
    // [paths]
    std::string out_dir = "runs/default";

    static RunConfig micro() {
        RunConfig c;
        c.width = 32;
        c.blocks = 2;
        c.d = 8;
        c.iters = 500;
        c.batch = 8;
        c.lr = 1e-3;
        c.checkpoint_every = 100;
        return c;
    }

    DenoiserConfig denoiser() const {
        DenoiserConfig dc;
        dc.side = side;
        dc.width = width;
        dc.blocks = blocks;
        dc.d = d;
        dc.K = variant.heads(K);
        dc.input_skip = input_skip;
        dc.T = T;
        return dc;
    }
    NoiseSchedule schedule() const { return NoiseSchedule(T, beta_start, beta_end); }
    GuidanceSpec guidance_spec() const { return GuidanceSpec{guidance, w, w_m}; }

    void validate() const {
        require_side(side);
        if (batch < 1) throw ConfigError("[train] batch must be >= 1");
        if (p_uncond < 0.0 || p_uncond > 0.5) throw ConfigError("[train] p_uncond must lie in [0, 0.5]");
        if (!(lr > 0.0)) throw ConfigError("[train] lr must be positive");
        if (checkpoint_every < 1) throw ConfigError("[train] checkpoint_every must be >= 1");
        if (variant.kind == Variant::FullEam && K < 1) throw ConfigError("M6_FULL_EAM needs [model] K >= 1");
        denoiser().validate();
        schedule();
        guidance_spec().validate();
    }

    /// Ordered section -> key -> value text, the single source for both the
    /// INI writer and the checkpoint manifest echo.
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> entries() const {
        auto num = [](auto v) {
            std::ostringstream os;
            os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
            return os.str();
        };
        std::string wm;
        for (std::size_t i = 0; i < w_m.size(); ++i) wm += (i ? "," : "") + num(w_m[i]);
        return {
            {"data", {{"S", num(side)}, {"seed", num(seed)}}},
            {"model",
             {{"width", num(width)},
              {"blocks", num(blocks)},
              {"d", num(d)},
              {"K", num(K)},
              {"input_skip", input_skip ? "true" : "false"}}},
            {"schedule", {{"T", num(T)}, {"beta_start", num(beta_start)}, {"beta_end", num(beta_end)}}},
            {"train",
             {{"variant", variant.name()},
              {"iters", num(iters)},
              {"batch", num(batch)},
              {"lr", num(lr)},
              {"p_uncond", num(p_uncond)},
              {"fp64", fp64 ? "true" : "false"},
              {"checkpoint_every", num(checkpoint_every)}}},
            {"sample",
             {{"guidance", guidance_name(guidance)},
              {"w", num(w)},
              {"w_m", wm},
              {"count", num(count)},
              {"seed", num(sample_seed)}}},
            {"paths", {{"out_dir", out_dir}}},
        };
    }

    std::string to_ini() const {
        std::ostringstream os;
        bool first = true;
        for (const auto& [section, kv] : entries()) {
            if (!first) os << '\n';
            first = false;
            os << '[' << section << "]\n";
            for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
        }
        return os.str();
    }

    void set(const std::string& section, const std::string& key, const std::string& value) {
        const std::string where = "[" + section + "] " + key;
        auto as_u64 = [&]() -> std::uint64_t {
            try {
                std::size_t pos = 0;
                if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
                auto v = std::stoull(value, &pos);
                if (pos != value.size()) throw std::invalid_argument("trailing");
                return v;
            } catch (const std::exception&) {
                throw ConfigError(where + ": expected a non-negative integer, got '" + value + "'");
            }
        };
        auto as_double = [&](const std::string& text) {
            try {
                std::size_t pos = 0;
                double v = std::stod(text, &pos);
                if (pos != text.size()) throw std::invalid_argument("trailing");
                return v;
            } catch (const std::exception&) {
                throw ConfigError(where + ": expected a number, got '" + text + "'");
            }
        };
        auto as_bool = [&]() {
            if (value == "true" || value == "1") return true;
            if (value == "false" || value == "0") return false;
            throw ConfigError(where + ": expected true or false, got '" + value + "'");
        };
        if (section == "data" && key == "S") side = static_cast<int>(as_u64());
        else if (section == "data" && key == "seed") seed = as_u64();
        else if (section == "model" && key == "width") width = as_u64();
        else if (section == "model" && key == "blocks") blocks = as_u64();
        else if (section == "model" && key == "d") d = as_u64();
        else if (section == "model" && key == "K") K = as_u64();
        else if (section == "model" && key == "input_skip") input_skip = as_bool();
        else if (section == "schedule" && key == "T") T = static_cast<int>(as_u64());
        else if (section == "schedule" && key == "beta_start") beta_start = as_double(value);
        else if (section == "schedule" && key == "beta_end") beta_end = as_double(value);
        else if (section == "train" && key == "variant") variant = VariantSpec::parse(value);
        else if (section == "train" && key == "iters") iters = as_u64();
        else if (section == "train" && key == "batch") batch = as_u64();
        else if (section == "train" && key == "lr") lr = as_double(value);
        else if (section == "train" && key == "p_uncond") p_uncond = as_double(value);
        else if (section == "train" && key == "fp64") fp64 = as_bool();
        else if (section == "train" && key == "checkpoint_every") checkpoint_every = as_u64();
        else if (section == "sample" && key == "guidance") guidance = parse_guidance(value);
        else if (section == "sample" && key == "w") w = as_double(value);
        else if (section == "sample" && key == "w_m") {
            std::array<double, kModalityCount> parsed{};
            std::stringstream ss(value);
            std::string item;
            std::size_t i = 0;
            while (std::getline(ss, item, ',')) {
                if (i >= parsed.size()) throw ConfigError(where + ": expected " + std::to_string(kModalityCount) + " weights");
                parsed[i++] = as_double(item);
            }
            if (i != parsed.size()) throw ConfigError(where + ": expected " + std::to_string(kModalityCount) + " weights");
            w_m = parsed;
        } else if (section == "sample" && key == "count") count = as_u64();
        else if (section == "sample" && key == "seed") sample_seed = as_u64();
        else if (section == "paths" && key == "out_dir") out_dir = value;
        else throw ConfigError("unknown config key " + where);
    }

    static RunConfig parse(std::istream& in) { return parse(in, RunConfig{}); }

    static RunConfig parse(std::istream& in, RunConfig base) {
        boost::property_tree::ptree tree;
        try {
            boost::property_tree::ini_parser::read_ini(in, tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError(std::string("malformed config: ") + e.what());
        }
        for (const auto& [section, body] : tree) {
            if (body.empty()) throw ConfigError("config key '" + section + "' outside any section");
            for (const auto& [key, node] : body) base.set(section, key, node.get_value<std::string>());
        }
        base.validate();
        return base;
    }

    static RunConfig parse_string(const std::string& text) { return parse_string(text, RunConfig{}); }

    static RunConfig parse_string(const std::string& text, RunConfig base) {
        std::istringstream in(text);
        return parse(in, std::move(base));
    }

    static RunConfig load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config " + path.string());
        return parse(in);
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << to_ini();
    }
};

}  // namespace mmface
