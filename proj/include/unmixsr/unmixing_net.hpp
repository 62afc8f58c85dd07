#pragma once

#include <string>
#include <utility>
#include <vector>

#include "unmixsr/nn.hpp"

namespace unmixsr {

struct UnmixingConfig {
    int bands = 16;
    int p = 3;
    int width = 32;       // encoder feature channels
    int gram_count = 2;   // encoder GRAM depth
};

struct UnmixOutput {
    AbundanceMap abundances;
    HsiCube reconstruction;
};

// Unsupervised unmixing autoencoder. The encoder maps a cube to per-pixel
// abundances (softmax enforces ASC and ANC); the decoder is a bias-free 1x1
// convolution whose nonnegative weights are the endmember spectra, so
// decoding is exactly the linear mixing model.
class UnmixingNetwork {
public:
    UnmixingNetwork() = default;

    UnmixingNetwork(const UnmixingConfig& cfg, const Rng& rng) : cfg_(cfg) {
        if (cfg.p < 2) throw ConfigError("unmixing: p must be >= 2");
        if (cfg.bands < 2) throw ConfigError("unmixing: bands must be >= 2");
        Rng net = rng.fork("unmix");
        head_ = Conv2d("unmix.head", cfg.bands, cfg.width, 3, 1, net);
        GramConfig gc{cfg.width, 3, 4, 0.2};
        for (int i = 0; i < cfg.gram_count; ++i)
            grams_.emplace_back("unmix.gram" + std::to_string(i), gc, net);
        proj_ = Conv2d("unmix.proj", cfg.width, cfg.p, 3, 1, net);
        decoder_ = Conv2d("unmix.decoder", cfg.p, cfg.bands, 1, 0, net, Init::uniform01,
                          /*with_bias=*/false, Constraint::nonnegative);
    }

    // Abundances for an input cube tensor; softmax output, so every pixel is
    // a point on the probability simplex.
    Tensor encode(const Tensor& y) const {
        if (y.shape().size() != 3 || y.shape()[0] != cfg_.bands)
            throw ConfigError("unmixing encode: expected " + std::to_string(cfg_.bands) +
                              " bands, got input " + shape_str(y.shape()));
        Tensor f = head_.forward(y);
        for (const auto& g : grams_) f = g.forward(f);
        return softmax_channels(proj_.forward(f));
    }

    Tensor decode(const Tensor& abundances) const { return decoder_.forward(abundances); }

    std::pair<Tensor, Tensor> forward(const Tensor& y) const {
        Tensor a = encode(y);
        return {a, decode(a)};
    }

    UnmixOutput unmix(const HsiCube& cube) const {
        auto [a, yhat] = forward(to_tensor(cube));
        return {to_abundance(a), to_cube(yhat)};
    }

    // Decoder weights read as p x B spectra.
    EndmemberMatrix extract_endmembers() const {
        EndmemberMatrix m = EndmemberMatrix::zeros(cfg_.p, cfg_.bands);
        const auto& k = decoder_.kernel.tensor.value();  // B x p x 1 x 1
        for (int b = 0; b < cfg_.bands; ++b)
            for (int i = 0; i < cfg_.p; ++i)
                m.at(i, b) = k[static_cast<std::size_t>(b) * cfg_.p + i];
        return m;
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        head_.collect(out);
        for (auto& g : grams_) g.collect(out);
        proj_.collect(out);
        decoder_.collect(out);
        return out;
    }

    void set_frozen(bool frozen) {
        auto params = parameters();
        set_trainable(params, !frozen);
    }

    const UnmixingConfig& config() const { return cfg_; }
    const Tensor& decoder_kernel() const { return decoder_.kernel.tensor; }

private:
    UnmixingConfig cfg_;
    Conv2d head_;
    std::vector<GramBlock> grams_;
    Conv2d proj_;
    Conv2d decoder_;
};

// ---------------------------------------------------------------------------
// unmixing losses

inline Tensor unloss_l1(const Tensor& y, const Tensor& yhat) { return l1_mean(y, yhat); }

inline Tensor unloss_sad(const Tensor& y, const Tensor& yhat) { return sad_mean(y, yhat); }

inline Tensor unloss_tv(const Tensor& decoder_kernel) { return endmember_tv(decoder_kernel); }

struct UnlossWeights {
    double alpha = 0.1;    // spectral-angle weight
    double beta_tv = 1e-3; // endmember smoothness weight
};

struct UnlossParts {
    Tensor total, l1, sad, tv;
};

inline UnlossParts unloss_total(const Tensor& y, const Tensor& yhat, const Tensor& decoder_kernel,
                                const UnlossWeights& w = {}) {
    UnlossParts parts;
    parts.l1 = unloss_l1(y, yhat);
    parts.sad = unloss_sad(y, yhat);
    parts.tv = unloss_tv(decoder_kernel);
    parts.total = add(parts.l1, add(scale(parts.sad, w.alpha), scale(parts.tv, w.beta_tv)));
    return parts;
}

// Plain-value conveniences over raster types.
inline double unloss_l1(const HsiCube& y, const HsiCube& yhat) {
    return unloss_l1(to_tensor(y), to_tensor(yhat)).item();
}

inline double unloss_sad(const HsiCube& y, const HsiCube& yhat) {
    return unloss_sad(to_tensor(y), to_tensor(yhat)).item();
}

inline double unloss_tv(const EndmemberMatrix& m) {
    // same normalization as the kernel form: sum |e_{b+1} - e_b| / (p*(B-1))
    if (m.bands < 2) throw ConfigError("unloss_tv: needs at least 2 bands");
    double total = 0.0;
    for (int i = 0; i < m.p; ++i)
        for (int b = 0; b + 1 < m.bands; ++b) total += std::fabs(m.at(i, b + 1) - m.at(i, b));
    return total / (static_cast<double>(m.p) * (m.bands - 1));
}

inline double unloss_total(const HsiCube& y, const HsiCube& yhat, const EndmemberMatrix& m,
                           const UnlossWeights& w = {}) {
    return unloss_l1(y, yhat) + w.alpha * unloss_sad(y, yhat) + w.beta_tv * unloss_tv(m);
}

}  // namespace unmixsr
