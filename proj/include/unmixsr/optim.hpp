#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "unmixsr/tensor.hpp"

namespace unmixsr {

enum class Constraint { none, nonnegative };

// A named, trainable tensor. Decoder weights carry the nonnegative constraint
// because they are read back as endmember spectra.
struct Parameter {
    std::string name;
    Tensor tensor;
    bool trainable = true;
    Constraint constraint = Constraint::none;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

// Bias-corrected Adam with post-step projection for constrained parameters.
class Adam {
public:
    struct Slot {
        std::vector<double> m, v;
    };

    Adam() = default;

    explicit Adam(const std::vector<Parameter*>& params, AdamConfig cfg = {}) : cfg_(cfg) {
        slots_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            slots_[i].m.assign(params[i]->tensor.value().size(), 0.0);
            slots_[i].v.assign(params[i]->tensor.value().size(), 0.0);
        }
    }

    void step(const std::vector<Parameter*>& params, double lr) {
        if (params.size() != slots_.size())
            throw ConfigError("adam: parameter list does not match optimizer state");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Parameter& p = *params[i];
            if (!p.trainable) continue;
            auto& value = p.tensor.value();
            const auto& grad = p.tensor.grad();
            auto& m = slots_[i].m;
            auto& v = slots_[i].v;
            if (m.size() != value.size())
                throw ConfigError("adam: moment shape mismatch for " + p.name);
            for (std::size_t j = 0; j < value.size(); ++j) {
                double g = grad[j];
                if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * value[j];
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                value[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
            }
            if (p.constraint == Constraint::nonnegative)
                for (auto& x : value) x = x < 0.0 ? 0.0 : x;
        }
    }

    std::int64_t step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    const std::vector<Slot>& slots() const { return slots_; }

    void restore(std::int64_t t, std::vector<Slot> slots) {
        t_ = t;
        slots_ = std::move(slots);
    }

private:
    AdamConfig cfg_;
    std::vector<Slot> slots_;
    std::int64_t t_ = 0;
};

// Step-decay schedule: lr0 halved once per `halve_every` epochs.
inline double lr_schedule(double lr0, int epoch, int halve_every = 40) {
    if (epoch < 0) throw ConfigError("lr_schedule: negative epoch");
    if (halve_every < 1) throw ConfigError("lr_schedule: halving period must be >= 1");
    return lr0 * std::pow(0.5, static_cast<double>(epoch / halve_every));
}

}  // namespace unmixsr
