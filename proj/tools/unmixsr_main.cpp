// Command-line front end: scene synthesis, degradation, two-step training,
// inference, evaluation, and PNG export. Exit codes: 0 success, 1 usage or
// validation, 2 I/O, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unmixsr/checkpoint.hpp"
#include "unmixsr/metrics.hpp"
#include "unmixsr/png.hpp"
#include "unmixsr/run_config.hpp"
#include "unmixsr/sr_net.hpp"
#include "unmixsr/trainer.hpp"
#include "unmixsr/unmixing_net.hpp"

namespace fs = std::filesystem;
using namespace unmixsr;

namespace {

int meta_int(const Checkpoint& ck, const std::string& key) {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw IoError("checkpoint is missing metadata key '" + key + "'");
    return static_cast<int>(detail::cfg_int(key, it->second));
}

std::string meta_str(const Checkpoint& ck, const std::string& key) {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw IoError("checkpoint is missing metadata key '" + key + "'");
    return it->second;
}

UnmixingNetwork unmixing_from_checkpoint(const Checkpoint& ck, bool restore_adam, Adam* adam) {
    UnmixingConfig cfg;
    cfg.bands = meta_int(ck, "bands");
    cfg.p = meta_int(ck, "p");
    cfg.width = meta_int(ck, ck.kind == "sr" ? "unmix_width" : "width");
    cfg.gram_count = meta_int(ck, ck.kind == "sr" ? "unmix_gram_count" : "gram_count");
    UnmixingNetwork net(cfg, Rng(0));
    auto params = net.parameters();
    apply_checkpoint(ck, params, restore_adam ? adam : nullptr);
    return net;
}

SrNetwork sr_from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "sr") throw ConfigError("checkpoint kind is '" + ck.kind + "', expected 'sr'");
    SrConfig cfg;
    cfg.bands = meta_int(ck, "bands");
    cfg.p = meta_int(ck, "p");
    cfg.width = meta_int(ck, "width");
    cfg.gram_count = meta_int(ck, "gram_count");
    cfg.scale = meta_int(ck, "scale");
    cfg.mam_enabled = meta_str(ck, "mam_enabled") == "true";
    cfg.deconv_mode = meta_str(ck, "deconv_mode") == "learned" ? DeconvMode::learned
                                                               : DeconvMode::replicate;
    SrNetwork net(cfg, Rng(0));
    auto params = net.parameters();
    apply_checkpoint(ck, params, nullptr);
    return net;
}

void write_endmember_csv(const std::string& path, const EndmemberMatrix& m) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot open for writing: " + path);
    for (int i = 0; i < m.p; ++i) {
        for (int b = 0; b < m.bands; ++b)
            std::fprintf(f, "%s%.17g", b ? "," : "", m.at(i, b));
        std::fputc('\n', f);
    }
    std::fclose(f);
}

int cmd_synth(int p, int size, int bands, std::uint64_t seed, int smoothness,
              const std::string& out_dir) {
    Scene scene = synth_scene(p, size, size, bands, smoothness, seed);
    fs::create_directories(out_dir);
    save_hsc(out_dir + "/scene.hsc", scene.cube);
    save_abn(out_dir + "/abundances.abn", scene.abundances);
    write_endmember_csv(out_dir + "/endmembers.csv", scene.endmembers);
    std::cout << "wrote " << out_dir << "/scene.hsc (" << size << "x" << size << "x" << bands
              << "), abundances.abn, endmembers.csv\n";
    return 0;
}

int cmd_degrade(const std::string& in, int scale, double blur, double noise, std::uint64_t seed,
                const std::string& out) {
    HsiCube hr = load_hsc(in);
    double sigma = blur < 0.0 ? 0.4 * scale : blur;
    HsiCube lr = degrade(hr, scale, sigma, noise, seed);
    save_hsc(out, lr);
    std::cout << "wrote " << out << " (" << lr.h << "x" << lr.w << "x" << lr.bands << ")\n";
    return 0;
}

int cmd_train(const std::string& config_path) {
    RunConfig rc = parse_run_config(config_path);

    std::vector<ScenePair> pairs;
    Rng seeds = Rng(rc.train.seed).fork("scenes");
    for (const auto& path : rc.scene_paths) {
        HsiCube hr = load_hsc(path);
        if (rc.bands != 0 && hr.bands != rc.bands)
            throw ConfigError("scene " + path + " has " + std::to_string(hr.bands) +
                              " bands, config says " + std::to_string(rc.bands));
        if (!pairs.empty() && hr.bands != pairs[0].hr.bands)
            throw ConfigError("scenes disagree on band count");
        pairs.push_back(make_scene_pair(hr, rc.train.scale, rc.effective_blur_sigma(),
                                        rc.noise_sigma, seeds.next_u64()));
    }

    const bool baseline = !rc.train.mam_enabled && rc.train.beta_ab == 0.0;
    if (baseline) std::cout << "mode=baseline\n";

    std::vector<HsiCube> lr_cubes;
    for (const auto& s : pairs) lr_cubes.push_back(s.lr);
    std::cout << "step I: unmixing on " << lr_cubes.size() << " LR cube(s), "
              << rc.train.epochs_step1 << " epochs\n";
    Step1Result s1 = train_step_one(lr_cubes, rc.train);
    std::cout << "step I done, final loss " << s1.log.back().total << "\n";

    std::cout << "step II: SR on " << pairs.size() << " pair(s), " << rc.train.epochs_step2
              << " epochs\n";
    Step2Result s2 = train_step_two(pairs, s1.net, rc.train);
    std::cout << "step II done, final loss " << s2.log.back().total << "\n";
    std::cout << "wrote " << rc.train.out_dir << "/{unmix.ckpt, sr.ckpt, step1.csv, step2.csv}\n";
    return 0;
}

int cmd_sr(const std::string& ckpt_path, const std::string& in, const std::string& out) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    SrNetwork sr = sr_from_checkpoint(ck);
    UnmixingNetwork unmixing = unmixing_from_checkpoint(ck, false, nullptr);
    unmixing.set_frozen(true);
    HsiCube lr = load_hsc(in);
    if (lr.bands != sr.config().bands)
        throw ConfigError("input has " + std::to_string(lr.bands) + " bands, checkpoint expects " +
                          std::to_string(sr.config().bands));
    AbundanceMap a_lr = unmixing.unmix(lr).abundances;
    HsiCube out_cube = sr.super_resolve(lr, a_lr);
    save_hsc(out, out_cube);
    std::cout << "wrote " << out << " (" << out_cube.h << "x" << out_cube.w << "x"
              << out_cube.bands << ")\n";
    return 0;
}

int cmd_unmix(const std::string& ckpt_path, const std::string& in, const std::string& out,
              const std::string& recon) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    if (ck.kind != "unmix")
        throw ConfigError("checkpoint kind is '" + ck.kind + "', expected 'unmix'");
    UnmixingNetwork net = unmixing_from_checkpoint(ck, false, nullptr);
    net.set_frozen(true);
    HsiCube cube = load_hsc(in);
    if (cube.bands != net.config().bands)
        throw ConfigError("input has " + std::to_string(cube.bands) + " bands, checkpoint expects " +
                          std::to_string(net.config().bands));
    UnmixOutput result = net.unmix(cube);
    save_abn(out, result.abundances);
    if (!recon.empty()) save_hsc(recon, result.reconstruction);
    std::cout << "wrote " << out << " (" << result.abundances.h << "x" << result.abundances.w << "x"
              << result.abundances.p << ")\n";
    return 0;
}

int cmd_eval(const std::string& ref_path, const std::string& est_path, int scale) {
    HsiCube ref = load_hsc(ref_path);
    HsiCube est = load_hsc(est_path);
    std::cout << evaluate(ref, est, scale).to_text();
    return 0;
}

int cmd_export_png(const std::string& in, int index, const std::string& out) {
    std::ifstream f(in, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + in);
    char magic[4] = {};
    f.read(magic, 4);
    f.close();
    std::string m(magic, 4);
    if (m == "HSC1")
        export_png(load_hsc(in), index, out);
    else if (m == "ABN1")
        export_png(load_abn(in), index, out);
    else
        throw IoError("unrecognized container magic in " + in);
    std::cout << "wrote " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unmixsr: hyperspectral single-image super-resolution with an unsupervised "
                 "unmixing auxiliary task"};
    app.require_subcommand(1);

    int p = 3, size = 32, bands = 16, scale = 2, smoothness = 1, index = 0;
    std::uint64_t seed = 0;
    double blur = -1.0, noise = 0.0;
    std::string in, out, ref, est, ckpt, config, recon;

    auto* synth = app.add_subcommand("synth", "generate a synthetic LMM scene");
    synth->add_option("--p", p, "endmember count (>= 2)")->capture_default_str();
    synth->add_option("--size", size, "square scene side in pixels")->capture_default_str();
    synth->add_option("--bands", bands, "spectral band count")->capture_default_str();
    synth->add_option("--seed", seed, "generator seed")->capture_default_str();
    synth->add_option("--smoothness", smoothness, "abundance box-blur passes")->capture_default_str();
    synth->add_option("--out", out, "output directory")->required();

    auto* degrade_cmd = app.add_subcommand("degrade", "blur, decimate, and add noise to a cube");
    degrade_cmd->add_option("--in", in, "input cube (.hsc)")->required();
    degrade_cmd->add_option("--scale", scale, "decimation factor")->capture_default_str();
    degrade_cmd->add_option("--blur", blur, "Gaussian sigma; -1 = 0.4 * scale")->capture_default_str();
    degrade_cmd->add_option("--noise", noise, "additive Gaussian sigma")->capture_default_str();
    degrade_cmd->add_option("--seed", seed, "noise seed")->capture_default_str();
    degrade_cmd->add_option("--out", out, "output cube (.hsc)")->required();

    auto* train = app.add_subcommand("train", "two-step training: unmixing, then SR");
    train->add_option("--config", config, "key=value run configuration")->required();

    auto* sr = app.add_subcommand("sr", "super-resolve a cube with a trained checkpoint");
    sr->add_option("--ckpt", ckpt, "SR checkpoint")->required();
    sr->add_option("--in", in, "input LR cube (.hsc)")->required();
    sr->add_option("--out", out, "output cube (.hsc)")->required();

    auto* unmix = app.add_subcommand("unmix", "extract abundances with a trained checkpoint");
    unmix->add_option("--ckpt", ckpt, "unmixing checkpoint")->required();
    unmix->add_option("--in", in, "input cube (.hsc)")->required();
    unmix->add_option("--out", out, "output abundances (.abn)")->required();
    unmix->add_option("--recon", recon, "optional reconstructed cube (.hsc)");

    auto* eval = app.add_subcommand("eval", "PSNR / SSIM / SAM / ERGAS between two cubes");
    eval->add_option("--ref", ref, "reference cube (.hsc)")->required();
    eval->add_option("--est", est, "estimated cube (.hsc)")->required();
    eval->add_option("--scale", scale, "SR scale for ERGAS")->capture_default_str();

    auto* export_cmd = app.add_subcommand("export-png", "export one band or channel as 8-bit PNG");
    export_cmd->add_option("--in", in, "input .hsc or .abn file")->required();
    export_cmd->add_option("--index", index, "band or channel index")->capture_default_str();
    export_cmd->add_option("--out", out, "output PNG path")->required();

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return cmd_synth(p, size, bands, seed, smoothness, out);
        if (degrade_cmd->parsed()) return cmd_degrade(in, scale, blur, noise, seed, out);
        if (train->parsed()) return cmd_train(config);
        if (sr->parsed()) return cmd_sr(ckpt, in, out);
        if (unmix->parsed()) return cmd_unmix(ckpt, in, out, recon);
        if (eval->parsed()) return cmd_eval(ref, est, scale);
        if (export_cmd->parsed()) return cmd_export_png(in, index, out);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const GenerationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
