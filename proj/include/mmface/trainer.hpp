// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "mmface/config.hpp"
#include "mmface/diffusion.hpp"
#include "mmface/model.hpp"
#include "mmface/numerics/tensor_io.hpp"

namespace mmface {

namespace detail {

/// Independent stream per (seed, step, purpose).
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t step, std::uint32_t purpose) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), purpose};
    return std::mt19937_64(seq);
}

inline constexpr std::uint32_t kInitStream = 0x1417u;
inline constexpr std::uint32_t kStepStream = 0x57e9u;

}  // namespace detail

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Parameters plus optimizer moments. `iteration` counts completed steps and,
/// together with the config seed, is the whole RNG state.
template <class T>
struct TrainState {
    Model<T> model;
    ParamStore<T> adam_m, adam_v;
    std::uint64_t iteration = 0;

    static TrainState create(const RunConfig& cfg) {
        cfg.validate();
        auto rng = detail::stream_rng(cfg.seed, 0, detail::kInitStream);
        TrainState s{Model<T>::create(cfg.denoiser(), cfg.variant.fusion(), rng()), {}, {}, 0};
        for (const auto& [name, p] : s.model.params.params()) {
            s.adam_m.add_zeros(name, p.dims());
            s.adam_v.add_zeros(name, p.dims());
        }
        return s;
    }
};

/// One Adam update from the accumulated gradients; `step` is 1-based.
template <class T>
void adam_update(ParamStore<T>& params, ParamStore<T>& m, ParamStore<T>& v, std::uint64_t step, const AdamConfig& a) {
    const double c1 = 1.0 - std::pow(a.beta1, double(step));
    const double c2 = 1.0 - std::pow(a.beta2, double(step));
    for (auto& [name, p] : params.params()) {
        const auto& g = params.grad(name);
        auto& mm = m.param(name);
        auto& vv = v.param(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            mm[i] = static_cast<T>(a.beta1 * mm[i] + (1.0 - a.beta1) * gi);
            vv[i] = static_cast<T>(a.beta2 * vv[i] + (1.0 - a.beta2) * gi * gi);
            const double mhat = mm[i] / c1, vhat = vv[i] / c2;
            p[i] = static_cast<T>(p[i] - a.lr * mhat / (std::sqrt(vhat) + a.eps));
        }
    }
}

/// Modalities a variant may present in one training sample.
inline ModalitySet training_set(const VariantSpec& v, Modality drawn) {
    return v.multi_modal() ? ModalitySet::all() : ModalitySet{drawn};
}

struct StepOptions {
    std::optional<Modality> force_modality;  // test hook
    std::optional<double> p_uncond;          // test hook, overrides the config
    bool apply_update = true;                // false leaves gradients for inspection
};

struct StepReport {
    double loss = 0.0;
    Modality modality = Modality::Mask;  // drawn modality (multi-modal variants present all)
};

/// One optimisation step: draw a modality, a batch of faces, dropout to the
/// empty set, timesteps and noise; accumulate the mean noise-regression loss
/// over per-sample graphs; then one Adam update of every parameter.
template <class T>
StepReport train_step(TrainState<T>& state, const RunConfig& cfg, const NoiseSchedule& sched,
                      const StepOptions& opt = {}) {
    auto rng = detail::stream_rng(cfg.seed, state.iteration, detail::kStepStream);
    const auto accepted = state.model.fusion.accepted.members();
    std::uniform_int_distribution<std::size_t> pick(0, accepted.size() - 1);
    const Modality drawn = accepted[pick(rng)];  // always consumed, keeps streams aligned
    StepReport rep;
    rep.modality = opt.force_modality.value_or(drawn);
    const ModalitySet present = training_set(cfg.variant, rep.modality);

    const double p_uncond = opt.p_uncond.value_or(cfg.p_uncond);
    std::bernoulli_distribution drop(p_uncond);
    std::uniform_int_distribution<int> pick_t(1, sched.T());
    std::normal_distribution<double> nd(0.0, 1.0);
    const int side = cfg.side;
    const std::size_t px = static_cast<std::size_t>(side * side);
    const T inv_b = static_cast<T>(1.0 / double(cfg.batch));

    state.model.params.zero_grad();
    double total = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
        const std::uint64_t face_seed = rng();
        const bool uncond = drop(rng);
        const int t = pick_t(rng);
        Image eps = Image::matrix(1, px);
        for (auto& v : eps.values()) v = nd(rng);

        const auto p = sample_params(face_seed);
        const Image x0 = render(p, side).reshaped({1, px});
        ConditionSet cs(side);
        if (!uncond) cs = derive_conditions(p, side).restricted(present);
        const Image x_t(x0.dims(), q_sample<double>(x0.span(), t, eps.span(), sched));

        Graph<T> g(true);
        const auto out = state.model.forward(g, x_t.reshaped({static_cast<std::size_t>(side), static_cast<std::size_t>(side)}), t, cs);
        const auto loss = g.scale(g.mse(out.eps, g.constant(eps.template cast<T>())), inv_b);
        const double lv = static_cast<double>(g.value(loss)[0]);
        if (!std::isfinite(lv)) {
            throw NumericError("non-finite loss at iteration " + std::to_string(state.iteration + 1));
        }
        total += lv;
        g.backward(loss);
    }
    rep.loss = total;
    if (opt.apply_update) {
        adam_update(state.model.params, state.adam_m, state.adam_v, state.iteration + 1, AdamConfig{cfg.lr});
        ++state.iteration;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json + one tensor file per parameter and moment.

inline nlohmann::json config_json(const RunConfig& cfg) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [section, kv] : cfg.entries())
        for (const auto& [k, v] : kv) j[section][k] = v;
    return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    for (const auto& [section, body] : j.items())
        for (const auto& [k, v] : body.items()) cfg.set(section, k, v.get<std::string>());
    cfg.validate();
    return cfg;
}

inline std::string hex64(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

/// Writes into a sibling temp directory and renames it into place, so an
/// interrupted write never replaces the previous checkpoint.
template <class T>
void save_checkpoint(const TrainState<T>& state, const RunConfig& cfg, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const fs::path tmp = dir.string() + ".tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    nlohmann::json files = nlohmann::json::array();
    auto put = [&](const std::string& group, const ParamStore<T>& store) {
        for (const auto& [name, t] : store.params()) {
            const std::string rel = group + "/" + name + ".mdlt";
            fs::create_directories(tmp / group);
            const auto bytes = encode_tensor(t);
            write_file_bytes(tmp / rel, bytes);
            files.push_back({{"group", group}, {"name", name}, {"file", rel},
                             {"fnv1a", hex64(fnv1a(bytes.data(), bytes.size()))}});
        }
    };
    put("params", state.model.params);
    put("adam_m", state.adam_m);
    put("adam_v", state.adam_v);
    nlohmann::json manifest{
        {"format", "mmface-checkpoint"},
        {"version", 1},
        {"dtype", sizeof(T) == 8 ? "f64" : "f32"},
        {"iteration", state.iteration},
        {"rng", {{"seed", cfg.seed}, {"next_step", state.iteration}}},
        {"param_hash", hex64(state.model.params.content_hash())},
        {"config", config_json(cfg)},
        {"tensors", files},
    };
    std::ofstream(tmp / "manifest.json") << manifest.dump(2) << '\n';
    std::ofstream(tmp / "config.ini") << cfg.to_ini();
    fs::remove_all(dir);
    fs::rename(tmp, dir);
}

struct CheckpointInfo {
    RunConfig config;
    bool fp64 = false;
    std::uint64_t iteration = 0;
};

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw ConfigError("no checkpoint manifest at " + path.string());
    try {
        auto j = nlohmann::json::parse(in);
        if (j.value("format", "") != "mmface-checkpoint") throw ConfigError("not a checkpoint manifest: " + path.string());
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed checkpoint manifest " + path.string() + ": " + e.what());
    }
}

inline CheckpointInfo checkpoint_info(const std::filesystem::path& dir) {
    const auto j = read_manifest(dir);
    return CheckpointInfo{config_from_json(j.at("config")), j.at("dtype") == "f64", j.at("iteration").get<std::uint64_t>()};
}

/// Loads and verifies every tensor hash; shapes must match a fresh
/// initialisation of the echoed config.
template <class T>
TrainState<T> load_checkpoint(const std::filesystem::path& dir, RunConfig* cfg_out = nullptr) {
    const auto j = read_manifest(dir);
    const RunConfig cfg = config_from_json(j.at("config"));
    TrainState<T> state = TrainState<T>::create(cfg);
    state.iteration = j.at("iteration").get<std::uint64_t>();
    std::size_t loaded = 0;
    for (const auto& f : j.at("tensors")) {
        const auto bytes = read_file_bytes(dir / f.at("file").get<std::string>());
        if (hex64(fnv1a(bytes.data(), bytes.size())) != f.at("fnv1a").get<std::string>()) {
            throw ConfigError("checkpoint tensor hash mismatch: " + f.at("file").get<std::string>());
        }
        const std::string group = f.at("group"), name = f.at("name");
        ParamStore<T>* store = group == "params" ? &state.model.params
                               : group == "adam_m" ? &state.adam_m
                               : group == "adam_v" ? &state.adam_v
                                                   : nullptr;
        if (!store) throw ConfigError("unknown checkpoint tensor group " + group);
        auto& slot = store->param(name);
        auto t = decode_tensor<T>(bytes, name);
        if (t.dims() != slot.dims()) {
            throw ConfigError("checkpoint tensor " + name + " has dims " + dims_str(t.dims()) + ", config expects " +
                              dims_str(slot.dims()));
        }
        slot = std::move(t);
        ++loaded;
    }
    if (loaded != 3 * state.model.params.params().size()) throw ConfigError("checkpoint is missing tensors");
    if (cfg_out) *cfg_out = cfg;
    return state;
}

/// Owning predictor over a checkpoint of either precision.
class CheckpointPredictor final : public NoisePredictor {
public:
    explicit CheckpointPredictor(const std::filesystem::path& dir) {
        const auto info = checkpoint_info(dir);
        if (info.fp64) model_ = load_checkpoint<double>(dir, &config_).model;
        else model_ = load_checkpoint<float>(dir, &config_).model;
    }
    Image predict(const Image& x_t, int t, const ConditionSet& cs) const override {
        return std::visit([&](const auto& m) { return m.predict(x_t, t, cs); }, model_);
    }
    ModalitySet accepted() const override {
        return std::visit([](const auto& m) { return m.fusion.accepted; }, model_);
    }
    int side() const override { return config_.side; }
    const RunConfig& config() const { return config_; }

private:
    RunConfig config_;
    std::variant<Model<float>, Model<double>> model_;
};

// ---------------------------------------------------------------------------
// Runs

struct RunResult {
    std::filesystem::path final_checkpoint;
    std::filesystem::path loss_csv;
    std::vector<double> losses;  // this invocation's steps only
};

using ProgressFn = std::function<void(std::uint64_t iter, double loss)>;

/// Trains `cfg.iters` steps into `out_dir`: loss.csv (iter,loss,modality),
/// checkpoints/latest every `checkpoint_every` steps, final/ at the end and
/// config.ini. With `resume`, continues from checkpoints/latest.
template <class T>
RunResult run_typed(const RunConfig& cfg, const std::filesystem::path& out_dir, bool resume, const ProgressFn& progress) {
    namespace fs = std::filesystem;
    cfg.validate();
    fs::create_directories(out_dir);
    cfg.save(out_dir / "config.ini");
    const auto latest = out_dir / "checkpoints" / "latest";
    const auto csv_path = out_dir / "loss.csv";
    const NoiseSchedule sched = cfg.schedule();

    TrainState<T> state = [&] {
        if (resume && fs::exists(latest / "manifest.json")) {
            RunConfig saved;
            auto s = load_checkpoint<T>(latest, &saved);
            if (config_json(saved) != config_json(cfg)) {
                // Only the iteration budget may change between invocations.
                RunConfig a = saved, b = cfg;
                a.iters = b.iters = 0;
                if (config_json(a) != config_json(b)) throw ConfigError("resume: config differs from checkpoint");
            }
            return s;
        }
        return TrainState<T>::create(cfg);
    }();

    // Keep only the rows covered by the state being resumed.
    std::vector<std::string> kept;
    if (state.iteration > 0 && fs::exists(csv_path)) {
        std::ifstream in(csv_path);
        std::string line;
        std::getline(in, line);
        while (kept.size() < state.iteration && std::getline(in, line)) kept.push_back(line);
    }
    {
        std::ofstream csv(csv_path, std::ios::trunc);
        if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
        csv << "iter,loss,modality\n";
        for (const auto& l : kept) csv << l << '\n';
    }
    std::ofstream csv(csv_path, std::ios::app);
    csv << std::setprecision(std::numeric_limits<double>::max_digits10);

    RunResult result;
    result.loss_csv = csv_path;
    while (state.iteration < cfg.iters) {
        const auto rep = train_step(state, cfg, sched);
        result.losses.push_back(rep.loss);
        const std::string mod = cfg.variant.multi_modal() ? "all" : std::string(modality_name(rep.modality));
        csv << state.iteration << ',' << rep.loss << ',' << mod << '\n';
        if (!csv) throw std::runtime_error("write failed: " + csv_path.string());
        if (progress) progress(state.iteration, rep.loss);
        if (state.iteration % cfg.checkpoint_every == 0) {
            csv.flush();
            save_checkpoint(state, cfg, latest);
        }
    }
    csv.flush();
    if (state.iteration % cfg.checkpoint_every != 0 || !fs::exists(latest / "manifest.json")) {
        save_checkpoint(state, cfg, latest);
    }
    result.final_checkpoint = out_dir / "final";
    save_checkpoint(state, cfg, result.final_checkpoint);
    return result;
}

inline RunResult run(const RunConfig& cfg, const std::filesystem::path& out_dir, bool resume = false,
                     const ProgressFn& progress = {}) {
    return cfg.fp64 ? run_typed<double>(cfg, out_dir, resume, progress)
                    : run_typed<float>(cfg, out_dir, resume, progress);
}

/// Independent single-modality models, one per modality, in out_dir/uni_<m>.
inline std::vector<std::filesystem::path> train_parallel_baseline(const RunConfig& cfg,
                                                                  const std::filesystem::path& out_dir,
                                                                  bool resume = false,
                                                                  const ProgressFn& progress = {}) {
    std::vector<std::filesystem::path> out;
    for (auto m : kAllModalities) {
        RunConfig c = cfg;
        c.variant = VariantSpec{Variant::UniSingle, m};
        c.out_dir = (out_dir / ("uni_" + std::string(modality_name(m)))).string();
        out.push_back(run(c, c.out_dir, resume, progress).final_checkpoint);
    }
    return out;
}

/// Mean of the first and last `window` losses of a loss CSV.
struct LossTrend {
    double initial = 0.0, final = 0.0;
    std::size_t rows = 0;
};

inline LossTrend loss_trend(const std::filesystem::path& csv_path, std::size_t window = 100) {
    std::ifstream in(csv_path);
    if (!in) throw ConfigError("cannot open " + csv_path.string());
    std::string line;
    std::getline(in, line);
    std::vector<double> losses;
    while (std::getline(in, line)) {
        const auto a = line.find(','), b = line.find(',', a + 1);
        losses.push_back(std::stod(line.substr(a + 1, b - a - 1)));
    }
    LossTrend tr;
    tr.rows = losses.size();
    const std::size_t w = std::min(window, losses.size());
    if (w == 0) return tr;
    for (std::size_t i = 0; i < w; ++i) {
        tr.initial += losses[i] / double(w);
        tr.final += losses[losses.size() - w + i] / double(w);
    }
    return tr;
}

}  // namespace mmface
