#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unmixsr/checkpoint.hpp"
#include "unmixsr/sr_net.hpp"
#include "unmixsr/unmixing_net.hpp"

namespace unmixsr {

struct TrainConfig {
    int scale = 2;
    int epochs_step1 = 30;
    int epochs_step2 = 30;
    int steps_per_epoch = 50;  // optimizer steps per epoch
    int batch = 1;             // patches averaged into one optimizer step
    int patch = 16;            // LR-side crop
    double lr0 = 5e-4;
    int lr_halve_every = 40;
    double alpha = 0.1;
    double beta_tv = 1e-3;
    double beta_ab = 0.2;
    std::uint64_t seed = 0;
    int p = 3;  // endmember count for the unmixing autoencoder
    int unmix_width = 32;
    int unmix_grams = 2;
    int sr_width = 64;
    int sr_grams = 9;
    bool mam_enabled = true;
    DeconvMode deconv_mode = DeconvMode::replicate;
    std::string out_dir;  // when set, checkpoints and CSV logs land here

    void validate() const {
        if (scale < 1) throw ConfigError("train: scale must be >= 1");
        if (epochs_step1 < 1 || epochs_step2 < 1) throw ConfigError("train: epochs must be >= 1");
        if (steps_per_epoch < 1) throw ConfigError("train: steps_per_epoch must be >= 1");
        if (batch < 1) throw ConfigError("train: batch must be >= 1");
        if (patch < 1) throw ConfigError("train: patch must be >= 1");
        if (lr0 <= 0.0) throw ConfigError("train: lr0 must be positive");
        if (lr_halve_every < 1) throw ConfigError("train: lr halving period must be >= 1");
        if (alpha < 0.0 || beta_tv < 0.0 || beta_ab < 0.0)
            throw ConfigError("train: loss weights must be nonnegative");
        if (p < 2) throw ConfigError("train: p must be >= 2");
    }
};

struct EpochStats {
    int epoch = 0;
    double total = 0.0, l1 = 0.0, sad = 0.0, third = 0.0;  // third: TV in step I, abun in step II
    double lr = 0.0;
};

// One CSV row per epoch: epoch,step,loss_total,loss_l1,loss_sad,loss_tv_or_abun,lr
inline void write_loss_csv(const std::string& path, const std::vector<EpochStats>& log, int step_index) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot open for writing: " + path);
    std::fputs("epoch,step,loss_total,loss_l1,loss_sad,loss_tv_or_abun,lr\n", f);
    for (const auto& row : log)
        std::fprintf(f, "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", row.epoch, step_index, row.total,
                     row.l1, row.sad, row.third, row.lr);
    std::fclose(f);
}

// ---------------------------------------------------------------------------
// patch sampling

struct PatchPair {
    HsiCube lr, hr;
};

namespace detail {

inline HsiCube crop(const HsiCube& cube, int y0, int x0, int side) {
    HsiCube out = HsiCube::zeros(side, side, cube.bands);
    for (int b = 0; b < cube.bands; ++b)
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) out.at(b, y, x) = cube.at(b, y0 + y, x0 + x);
    return out;
}

}  // namespace detail

// Aligned random crops: an LR crop at (i, j) pairs with the HR crop at
// (n*i, n*j) of side n*patch. Deterministic for a fixed seed.
class PatchSampler {
public:
    PatchSampler(std::span<const ScenePair> scenes, int patch, int scale, Rng rng)
        : pairs_(scenes.begin(), scenes.end()), patch_(patch), scale_(scale), rng_(rng) {
        if (pairs_.empty()) throw ConfigError("patch_sampler: no scenes");
        for (const auto& s : pairs_) {
            if (s.lr.h < patch_ || s.lr.w < patch_)
                throw ConfigError("patch_sampler: patch " + std::to_string(patch_) +
                                  " larger than LR scene " + std::to_string(s.lr.h) + "x" +
                                  std::to_string(s.lr.w));
            if (s.hr.h != s.lr.h * scale_ || s.hr.w != s.lr.w * scale_)
                throw ConfigError("patch_sampler: HR dims are not scale x LR dims");
        }
    }

    PatchPair next() {
        const ScenePair& s = pairs_[pairs_.size() == 1 ? 0 : static_cast<std::size_t>(
                                 rng_.uniform_int(0, static_cast<int>(pairs_.size()) - 1))];
        int i = s.lr.h == patch_ ? 0 : rng_.uniform_int(0, s.lr.h - patch_);
        int j = s.lr.w == patch_ ? 0 : rng_.uniform_int(0, s.lr.w - patch_);
        return {detail::crop(s.lr, i, j, patch_),
                detail::crop(s.hr, i * scale_, j * scale_, patch_ * scale_)};
    }

private:
    std::vector<ScenePair> pairs_;
    int patch_;
    int scale_;
    Rng rng_;
};

// LR-only sampler for the unsupervised step.
class LrPatchSampler {
public:
    LrPatchSampler(std::span<const HsiCube> cubes, int patch, Rng rng)
        : cubes_(cubes.begin(), cubes.end()), patch_(patch), rng_(rng) {
        if (cubes_.empty()) throw ConfigError("patch_sampler: no cubes");
        for (const auto& c : cubes_)
            if (c.h < patch_ || c.w < patch_)
                throw ConfigError("patch_sampler: patch " + std::to_string(patch_) +
                                  " larger than cube " + std::to_string(c.h) + "x" + std::to_string(c.w));
    }

    HsiCube next() {
        const HsiCube& c = cubes_[cubes_.size() == 1 ? 0 : static_cast<std::size_t>(
                               rng_.uniform_int(0, static_cast<int>(cubes_.size()) - 1))];
        int i = c.h == patch_ ? 0 : rng_.uniform_int(0, c.h - patch_);
        int j = c.w == patch_ ? 0 : rng_.uniform_int(0, c.w - patch_);
        return detail::crop(c, i, j, patch_);
    }

private:
    std::vector<HsiCube> cubes_;
    int patch_;
    Rng rng_;
};

// ---------------------------------------------------------------------------
// diagnostics

namespace detail {

inline std::string param_norm_digest(const std::vector<Parameter*>& params) {
    std::string out;
    for (const Parameter* p : params) {
        double s = 0.0;
        for (double v : p->tensor.value()) s += v * v;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6g", std::sqrt(s));
        out += "  " + p->name + " l2=" + buf + "\n";
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// step I: unsupervised unmixing on LR cubes

struct Step1Obs {
    int epoch = 0, step = 0;
    double total = 0.0, l1 = 0.0, sad = 0.0, tv = 0.0;
    const Tensor* abundances = nullptr;  // encoder output of this step
    UnmixingNetwork* net = nullptr;      // state after the optimizer step
};
using Step1Callback = std::function<void(const Step1Obs&)>;

struct Step1Result {
    UnmixingNetwork net;
    Adam adam;
    std::vector<EpochStats> log;
};

inline Step1Result train_step_one(std::span<const HsiCube> lr_cubes, const TrainConfig& cfg,
                                  const Step1Callback& callback = {}) {
    cfg.validate();
    if (lr_cubes.empty()) throw ConfigError("train_step_one: no training cubes");
    const int bands = lr_cubes[0].bands;
    for (const auto& c : lr_cubes)
        if (c.bands != bands) throw ConfigError("train_step_one: cubes disagree on band count");

    Rng root(cfg.seed);
    UnmixingConfig ucfg{bands, cfg.p, cfg.unmix_width, cfg.unmix_grams};
    UnmixingNetwork net(ucfg, root.fork("step1"));
    auto params = net.parameters();
    Adam adam(params);
    LrPatchSampler sampler(lr_cubes, cfg.patch, root.fork("step1.patches"));
    UnlossWeights weights{cfg.alpha, cfg.beta_tv};

    std::vector<EpochStats> log;
    for (int epoch = 0; epoch < cfg.epochs_step1; ++epoch) {
        double lr = lr_schedule(cfg.lr0, epoch, cfg.lr_halve_every);
        EpochStats stats{epoch, 0, 0, 0, 0, lr};
        for (int step = 0; step < cfg.steps_per_epoch; ++step) {
            for (Parameter* p : params) p->tensor.zero_grad();
            double btotal = 0, bl1 = 0, bsad = 0, btv = 0;
            Tensor last_abundances;
            for (int b = 0; b < cfg.batch; ++b) {
                Tensor y = to_tensor(sampler.next());
                auto [a, yhat] = net.forward(y);
                UnlossParts parts = unloss_total(y, yhat, net.decoder_kernel(), weights);
                btotal += parts.total.item();
                bl1 += parts.l1.item();
                bsad += parts.sad.item();
                btv += parts.tv.item();
                backward(cfg.batch == 1 ? parts.total : scale(parts.total, 1.0 / cfg.batch));
                last_abundances = a;
            }
            btotal /= cfg.batch;
            bl1 /= cfg.batch;
            bsad /= cfg.batch;
            btv /= cfg.batch;
            if (!std::isfinite(btotal))
                throw NumericError("step I loss is not finite at epoch " + std::to_string(epoch) +
                                   " step " + std::to_string(step) + "\n" +
                                   detail::param_norm_digest(params));
            adam.step(params, lr);
            stats.total += btotal;
            stats.l1 += bl1;
            stats.sad += bsad;
            stats.third += btv;
            if (callback) {
                Step1Obs obs{epoch, step, btotal, bl1, bsad, btv, &last_abundances, &net};
                callback(obs);
            }
        }
        stats.total /= cfg.steps_per_epoch;
        stats.l1 /= cfg.steps_per_epoch;
        stats.sad /= cfg.steps_per_epoch;
        stats.third /= cfg.steps_per_epoch;
        log.push_back(stats);
    }

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        write_loss_csv(cfg.out_dir + "/step1.csv", log, 1);
        std::map<std::string, std::string> meta = {
            {"bands", std::to_string(ucfg.bands)},     {"p", std::to_string(ucfg.p)},
            {"width", std::to_string(ucfg.width)},     {"gram_count", std::to_string(ucfg.gram_count)},
            {"seed", std::to_string(cfg.seed)},
        };
        save_checkpoint(cfg.out_dir + "/unmix.ckpt",
                        make_checkpoint("unmix", static_cast<std::uint32_t>(cfg.epochs_step1), params,
                                        &adam, std::move(meta)));
    }
    return {std::move(net), std::move(adam), std::move(log)};
}

// ---------------------------------------------------------------------------
// step II: supervised SR with the step-I unmixing weights shared and frozen

struct Step2Obs {
    int epoch = 0, step = 0;
    double total = 0.0, l1 = 0.0, sad = 0.0, abun = 0.0;
    SrNetwork* net = nullptr;
    const UnmixingNetwork* frozen = nullptr;
};
using Step2Callback = std::function<void(const Step2Obs&)>;

struct Step2Result {
    SrNetwork net;
    Adam adam;
    std::vector<EpochStats> log;
};

inline Step2Result train_step_two(std::span<const ScenePair> pairs, UnmixingNetwork& unmixing,
                                  const TrainConfig& cfg, const Step2Callback& callback = {}) {
    cfg.validate();
    if (pairs.empty()) throw ConfigError("train_step_two: no training pairs");
    const int bands = pairs[0].lr.bands;
    for (const auto& s : pairs) {
        if (s.lr.bands != bands || s.hr.bands != bands)
            throw ConfigError("train_step_two: cubes disagree on band count");
        if (s.scale != cfg.scale)
            throw ConfigError("train_step_two: scene pair scale does not match config");
    }
    if (unmixing.config().bands != bands)
        throw ConfigError("train_step_two: unmixing checkpoint expects " +
                          std::to_string(unmixing.config().bands) + " bands, data has " +
                          std::to_string(bands));

    unmixing.set_frozen(true);  // shared weights receive no updates in this step
    Rng root(cfg.seed);
    SrConfig scfg{bands,         unmixing.config().p, cfg.sr_width,   cfg.sr_grams,
                  cfg.scale,     cfg.mam_enabled,     cfg.deconv_mode};
    SrNetwork net(scfg, root.fork("step2"));
    auto params = net.parameters();
    Adam adam(params);
    PatchSampler sampler(pairs, cfg.patch, cfg.scale, root.fork("step2.patches"));
    SrLossWeights weights{cfg.alpha, cfg.beta_ab};
    const bool track_abun = cfg.beta_ab != 0.0;

    std::vector<EpochStats> log;
    for (int epoch = 0; epoch < cfg.epochs_step2; ++epoch) {
        double lr = lr_schedule(cfg.lr0, epoch, cfg.lr_halve_every);
        EpochStats stats{epoch, 0, 0, 0, 0, lr};
        for (int step = 0; step < cfg.steps_per_epoch; ++step) {
            for (Parameter* p : params) p->tensor.zero_grad();
            double btotal = 0, bl1 = 0, bsad = 0, babun = 0;
            for (int b = 0; b < cfg.batch; ++b) {
                PatchPair pp = sampler.next();
                Tensor y_lr = to_tensor(pp.lr);
                Tensor a_lr = unmixing.encode(y_lr);  // constant: no grad reaches it
                Tensor y_sr = net.forward(y_lr, a_lr);
                Tensor loss, l1t, sadt;
                double abun_val = 0.0;
                l1t = l1_mean(to_tensor(pp.hr), y_sr);
                sadt = sad_mean(to_tensor(pp.hr), y_sr);
                loss = add(l1t, scale(sadt, weights.alpha));
                if (track_abun) {
                    Tensor a_sr = unmixing.encode(y_sr);  // grads pass through the frozen encoder
                    Tensor target = cfg.deconv_mode == DeconvMode::learned
                                        ? net.deconv_learned(a_lr)
                                        : to_tensor(deconv_abundance(to_abundance(a_lr), cfg.scale));
                    Tensor abun = abun_loss(a_sr, target);
                    abun_val = abun.item();
                    loss = add(loss, scale(abun, weights.beta_ab));
                }
                btotal += loss.item();
                bl1 += l1t.item();
                bsad += sadt.item();
                babun += abun_val;
                backward(cfg.batch == 1 ? loss : scale(loss, 1.0 / cfg.batch));
            }
            btotal /= cfg.batch;
            bl1 /= cfg.batch;
            bsad /= cfg.batch;
            babun /= cfg.batch;
            if (!std::isfinite(btotal))
                throw NumericError("step II loss is not finite at epoch " + std::to_string(epoch) +
                                   " step " + std::to_string(step) + "\n" +
                                   detail::param_norm_digest(params));
            adam.step(params, lr);
            stats.total += btotal;
            stats.l1 += bl1;
            stats.sad += bsad;
            stats.third += babun;
            if (callback) {
                Step2Obs obs{epoch, step, btotal, bl1, bsad, babun, &net, &unmixing};
                callback(obs);
            }
        }
        stats.total /= cfg.steps_per_epoch;
        stats.l1 /= cfg.steps_per_epoch;
        stats.sad /= cfg.steps_per_epoch;
        stats.third /= cfg.steps_per_epoch;
        log.push_back(stats);
    }

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        write_loss_csv(cfg.out_dir + "/step2.csv", log, 2);
        // the SR checkpoint embeds the frozen unmixing weights so inference
        // needs a single file
        auto all_params = params;
        auto unmix_params = unmixing.parameters();
        all_params.insert(all_params.end(), unmix_params.begin(), unmix_params.end());
        std::map<std::string, std::string> meta = {
            {"bands", std::to_string(bands)},
            {"p", std::to_string(unmixing.config().p)},
            {"width", std::to_string(scfg.width)},
            {"gram_count", std::to_string(scfg.gram_count)},
            {"scale", std::to_string(scfg.scale)},
            {"mam_enabled", scfg.mam_enabled ? "true" : "false"},
            {"deconv_mode", scfg.deconv_mode == DeconvMode::learned ? "learned" : "replicate"},
            {"unmix_width", std::to_string(unmixing.config().width)},
            {"unmix_gram_count", std::to_string(unmixing.config().gram_count)},
            {"seed", std::to_string(cfg.seed)},
        };
        if (!cfg.mam_enabled && cfg.beta_ab == 0.0) meta["mode"] = "baseline";
        // adam moments cover the leading SR block; the trailing unmixing
        // parameters are frozen and carry no optimizer state
        save_checkpoint(cfg.out_dir + "/sr.ckpt",
                        make_checkpoint("sr", static_cast<std::uint32_t>(cfg.epochs_step2), all_params,
                                        &adam, std::move(meta)));
    }
    return {std::move(net), std::move(adam), std::move(log)};
}

}  // namespace unmixsr
