#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "unmixsr/trainer.hpp"

namespace unmixsr {

// Flat key=value run description for the train command. UTF-8, '#' comments,
// unknown keys rejected.
struct RunConfig {
    TrainConfig train;
    std::vector<std::string> scene_paths;  // HR cubes (HSC1)
    int bands = 0;                         // 0 = infer from the first scene
    double blur_sigma = -1.0;              // -1 = default 0.4 * scale
    double noise_sigma = 0.0;

    double effective_blur_sigma() const {
        return blur_sigma < 0.0 ? 0.4 * train.scale : blur_sigma;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline long long cfg_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        long long v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not an integer: '" + value + "'");
    }
}

inline double cfg_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not a number: '" + value + "'");
    }
}

inline bool cfg_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    RunConfig rc;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));

        if (key == "scale")
            rc.train.scale = static_cast<int>(detail::cfg_int(key, value));
        else if (key == "p")
            rc.train.p = static_cast<int>(detail::cfg_int(key, value));
        else if (key == "bands")
            rc.bands = static_cast<int>(detail::cfg_int(key, value));
        else if (key == "gram_count")
            rc.train.sr_grams = static_cast<int>(detail::cfg_int(key, value));
        else if (key == "width")
            rc.train.sr_width = static_cast<int>(detail::cfg_int(key, value));
        else if (key == "unmix_width")
            rc.train.unmix_width = static_cast<int>(detail::cfg_int(key, value));
        else if (key == "unmix_grams")
            rc.train.unmix_grams = static_cast<int>(detail::cfg_int(key, value));
        else if (key == "alpha")
            rc.train.alpha = detail::cfg_double(key, value);
        else if (key == "beta_tv")
            rc.train.beta_tv = detail::cfg_double(key, value);
        else if (key == "beta_ab")
            rc.train.beta_ab = detail::cfg_double(key, value);
        else if (key == "mam_enabled")
            rc.train.mam_enabled = detail::cfg_bool(key, value);
        else if (key == "deconv_mode") {
            if (value == "replicate")
                rc.train.deconv_mode = DeconvMode::replicate;
            else if (value == "learned")
                rc.train.deconv_mode = DeconvMode::learned;
            else
                throw ConfigError("config key 'deconv_mode': expected replicate|learned, got '" +
                                  value + "'");
        } else if (key == "epochs_step1")
            rc.train.epochs_step1 = static_cast<int>(detail::cfg_int(key, value));
        else if (key == "epochs_step2")
            rc.train.epochs_step2 = static_cast<int>(detail::cfg_int(key, value));
        else if (key == "steps_per_epoch")
            rc.train.steps_per_epoch = static_cast<int>(detail::cfg_int(key, value));
        else if (key == "batch")
            rc.train.batch = static_cast<int>(detail::cfg_int(key, value));
        else if (key == "patch")
            rc.train.patch = static_cast<int>(detail::cfg_int(key, value));
        else if (key == "lr0")
            rc.train.lr0 = detail::cfg_double(key, value);
        else if (key == "lr_halve_every")
            rc.train.lr_halve_every = static_cast<int>(detail::cfg_int(key, value));
        else if (key == "seed")
            rc.train.seed = static_cast<std::uint64_t>(detail::cfg_int(key, value));
        else if (key == "blur_sigma")
            rc.blur_sigma = detail::cfg_double(key, value);
        else if (key == "noise_sigma")
            rc.noise_sigma = detail::cfg_double(key, value);
        else if (key == "scenes") {
            rc.scene_paths.clear();
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ',')) {
                item = detail::trim(item);
                if (!item.empty()) rc.scene_paths.push_back(item);
            }
        } else if (key == "out_dir")
            rc.train.out_dir = value;
        else
            throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown config key '" + key +
                              "'");
    }

    if (rc.scene_paths.empty()) throw ConfigError("config: 'scenes' must list at least one cube");
    if (rc.train.out_dir.empty()) throw ConfigError("config: 'out_dir' is required");
    if (rc.train.scale != 2 && rc.train.scale != 4 && rc.train.scale != 8)
        throw ConfigError("config: scale must be one of 2, 4, 8");
    if (rc.bands != 0 && rc.bands < 2) throw ConfigError("config: bands must be >= 2");
    if (rc.train.sr_grams < 1 || rc.train.unmix_grams < 1)
        throw ConfigError("config: gram counts must be >= 1");
    if (rc.train.sr_width < 4 || rc.train.sr_width % 4 != 0 || rc.train.unmix_width < 4 ||
        rc.train.unmix_width % 4 != 0)
        throw ConfigError("config: widths must be positive multiples of 4");
    if (rc.noise_sigma < 0.0) throw ConfigError("config: noise_sigma must be >= 0");
    rc.train.validate();
    return rc;
}

}  // namespace unmixsr
