#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "unmixsr/nn.hpp"
#include "unmixsr/unmixing_net.hpp"

namespace unmixsr {

// ---------------------------------------------------------------------------
// differentiable bicubic upsampling (shares the plane kernel with the raster
// version so the global-residual path is bit-identical to bicubic_upsample)

inline Tensor bicubic_upsample_op(const Tensor& input, int n) {
    detail::check_chw(input, "bicubic_upsample");
    if (n < 1) throw ConfigError("bicubic_upsample: scale must be >= 1");
    const int c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
    const int ho = h * n, wo = w * n;
    auto in = input.node();
    Tensor out = Tensor::make_op({c, ho, wo}, {input}, [in, c, h, w, n, ho, wo](detail::TensorNode& self) {
        if (!in->requires_grad) return;
        // adjoint of the separable forward: scatter through the column pass,
        // then through the row pass
        auto taps = [](int idx, int scale, int extent, std::array<int, 4>& src, std::array<double, 4>& wgt) {
            double s = (idx + 0.5) / scale - 0.5;
            int i0 = static_cast<int>(std::floor(s));
            double t = s - i0;
            wgt = {detail::cubic_kernel(t + 1.0), detail::cubic_kernel(t), detail::cubic_kernel(1.0 - t),
                   detail::cubic_kernel(2.0 - t)};
            for (int j = 0; j < 4; ++j) src[static_cast<std::size_t>(j)] = reflect_index(i0 - 1 + j, extent);
        };
        std::vector<double> gtmp(static_cast<std::size_t>(h) * wo);
        for (int ch = 0; ch < c; ++ch) {
            std::fill(gtmp.begin(), gtmp.end(), 0.0);
            const double* gout = &self.grad[static_cast<std::size_t>(ch) * ho * wo];
            for (int y = 0; y < ho; ++y) {
                std::array<int, 4> sy;
                std::array<double, 4> wy;
                taps(y, n, h, sy, wy);
                for (int x = 0; x < wo; ++x) {
                    double g = gout[static_cast<std::size_t>(y) * wo + x];
                    for (int j = 0; j < 4; ++j) gtmp[static_cast<std::size_t>(sy[j]) * wo + x] += wy[j] * g;
                }
            }
            double* gin = &in->grad[static_cast<std::size_t>(ch) * h * w];
            for (int x = 0; x < wo; ++x) {
                std::array<int, 4> sx;
                std::array<double, 4> wxv;
                taps(x, n, w, sx, wxv);
                for (int y = 0; y < h; ++y) {
                    double g = gtmp[static_cast<std::size_t>(y) * wo + x];
                    for (int j = 0; j < 4; ++j) gin[static_cast<std::size_t>(y) * w + sx[j]] += wxv[j] * g;
                }
            }
        }
    });
    for (int ch = 0; ch < c; ++ch)
        detail::bicubic_upsample_plane(&in->value[static_cast<std::size_t>(ch) * h * w],
                                       &out.value()[static_cast<std::size_t>(ch) * ho * wo], h, w, n);
    return out;
}

// ---------------------------------------------------------------------------
// abundance upscaling

// Copies each LR abundance pixel into its n x n HR block; the unique
// ASC-preserving upscaling whose block means reproduce the input.
inline AbundanceMap deconv_abundance(const AbundanceMap& a, int n) {
    if (n < 1) throw ConfigError("deconv_abundance: scale must be >= 1");
    AbundanceMap out = AbundanceMap::zeros(a.h * n, a.w * n, a.p);
    for (int c = 0; c < a.p; ++c)
        for (int y = 0; y < a.h; ++y)
            for (int x = 0; x < a.w; ++x) {
                double v = a.at(c, y, x);
                for (int dy = 0; dy < n; ++dy)
                    for (int dx = 0; dx < n; ++dx) out.at(c, y * n + dy, x * n + dx) = v;
            }
    return out;
}

enum class DeconvMode { replicate, learned };

// ---------------------------------------------------------------------------
// super-resolution network

struct SrConfig {
    int bands = 16;
    int p = 3;
    int width = 64;      // trunk feature channels
    int gram_count = 9;  // GRAMs in the trunk
    int scale = 2;       // one of 2, 4, 8
    bool mam_enabled = true;
    DeconvMode deconv_mode = DeconvMode::replicate;
};

// Head conv, GRAM trunk with a trunk-level residual, material-aware fusion of
// the frozen LR abundances, progressive pixel-shuffle upsampling, tail conv,
// and a bicubic global residual.
class SrNetwork {
public:
    SrNetwork() = default;

    SrNetwork(const SrConfig& cfg, const Rng& rng) : cfg_(cfg) {
        if (cfg.scale != 2 && cfg.scale != 4 && cfg.scale != 8)
            throw ConfigError("sr: scale must be one of 2, 4, 8");
        if (cfg.width % 4 != 0) throw ConfigError("sr: width must be divisible by 4 (attention)");
        Rng net = rng.fork("sr");
        const int c = cfg.width;
        head_ = Conv2d("sr.head", cfg.bands, c, 3, 1, net);
        GramConfig gc{c, 3, 4, 0.2};
        for (int i = 0; i < cfg.gram_count; ++i)
            grams_.emplace_back("sr.gram" + std::to_string(i), gc, net);
        if (cfg.mam_enabled) mam_conv_ = Conv2d("sr.mam", c + cfg.p, c, 1, 0, net);
        stage1_factor_ = cfg.scale / 2;  // identity for x2
        if (stage1_factor_ > 1)
            up1_ = Conv2d("sr.up1", c, c * stage1_factor_ * stage1_factor_, 3, 1, net);
        up2_ = Conv2d("sr.up2", c, c * 4, 3, 1, net);
        // zero start: the network opens as exact bicubic interpolation and
        // training moves it away from there
        tail_ = Conv2d("sr.tail", c, cfg.bands, 3, 1, net, Init::zero);
        if (cfg.deconv_mode == DeconvMode::learned) {
            // p x p x n x n transposed-conv kernel, identity replication at init
            const int n = cfg.scale;
            std::vector<double> k(static_cast<std::size_t>(cfg.p) * cfg.p * n * n, 0.0);
            for (int i = 0; i < cfg.p; ++i)
                for (int j = 0; j < n * n; ++j)
                    k[(static_cast<std::size_t>(i) * cfg.p + i) * n * n + j] = 1.0;
            deconv_kernel_ = Parameter{"sr.deconv.kernel",
                                       Tensor::from_data({cfg.p, cfg.p, n, n}, std::move(k), true)};
        }
    }

    // Residual concat-then-1x1-conv fusion of the frozen abundances into the
    // trunk features; the ablation switch makes this the identity.
    Tensor mam_fuse(const Tensor& features, const Tensor& abundances) const {
        if (!cfg_.mam_enabled) return features;
        if (features.shape()[1] != abundances.shape()[1] || features.shape()[2] != abundances.shape()[2])
            throw ConfigError("mam_fuse: spatial dims differ " + shape_str(features.shape()) + " vs " +
                              shape_str(abundances.shape()));
        return add(features, mam_conv_.forward(concat_channels(features, abundances)));
    }

    Tensor forward(const Tensor& y_lr, const Tensor& a_lr) const {
        if (y_lr.shape().size() != 3 || y_lr.shape()[0] != cfg_.bands)
            throw ConfigError("sr forward: expected " + std::to_string(cfg_.bands) +
                              " bands, got input " + shape_str(y_lr.shape()));
        if (a_lr.shape().size() != 3 || a_lr.shape()[0] != cfg_.p ||
            a_lr.shape()[1] != y_lr.shape()[1] || a_lr.shape()[2] != y_lr.shape()[2])
            throw ConfigError("sr forward: abundance shape " + shape_str(a_lr.shape()) +
                              " does not pair with input " + shape_str(y_lr.shape()));
        Tensor f0 = head_.forward(y_lr);
        Tensor t = f0;
        for (const auto& g : grams_) t = g.forward(t);
        t = add(t, f0);  // trunk residual
        t = mam_fuse(t, a_lr);
        if (stage1_factor_ > 1) t = pixel_shuffle(up1_.forward(t), stage1_factor_);
        t = pixel_shuffle(up2_.forward(t), 2);
        Tensor restored = tail_.forward(t);
        return add(restored, bicubic_upsample_op(y_lr, cfg_.scale));
    }

    HsiCube super_resolve(const HsiCube& y_lr, const AbundanceMap& a_lr) const {
        if (a_lr.h != y_lr.h || a_lr.w != y_lr.w)
            throw ConfigError("super_resolve: abundance dims " + std::to_string(a_lr.h) + "x" +
                              std::to_string(a_lr.w) + " do not match input " + std::to_string(y_lr.h) +
                              "x" + std::to_string(y_lr.w));
        return to_cube(forward(to_tensor(y_lr), to_tensor(a_lr)));
    }

    // Learned upscaling of abundances (transposed conv, stride = scale).
    Tensor deconv_learned(const Tensor& a_lr) const {
        if (cfg_.deconv_mode != DeconvMode::learned)
            throw ConfigError("deconv_learned: network built in replicate mode");
        return transposed_conv2d(a_lr, deconv_kernel_.tensor, cfg_.scale);
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        head_.collect(out);
        for (auto& g : grams_) g.collect(out);
        if (cfg_.mam_enabled) mam_conv_.collect(out);
        if (stage1_factor_ > 1) up1_.collect(out);
        up2_.collect(out);
        tail_.collect(out);
        if (deconv_kernel_.tensor.defined()) out.push_back(&deconv_kernel_);
        return out;
    }

    void zero_parameters() {
        for (Parameter* p : parameters()) {
            auto& v = p->tensor.value();
            std::fill(v.begin(), v.end(), 0.0);
        }
    }

    const SrConfig& config() const { return cfg_; }

private:
    SrConfig cfg_;
    Conv2d head_;
    std::vector<GramBlock> grams_;
    Conv2d mam_conv_;
    Conv2d up1_;
    Conv2d up2_;
    Conv2d tail_;
    Parameter deconv_kernel_;
    int stage1_factor_ = 1;
};

// ---------------------------------------------------------------------------
// SR losses

inline Tensor abun_loss(const Tensor& a_sr, const Tensor& deconv_target) {
    return l1_mean(a_sr, deconv_target);
}

inline double abun_loss(const AbundanceMap& a_sr, const AbundanceMap& a_lr, int n) {
    if (a_sr.p != a_lr.p || a_sr.h != a_lr.h * n || a_sr.w != a_lr.w * n)
        throw ConfigError("abun_loss: HR map must be exactly n x the LR map");
    AbundanceMap target = deconv_abundance(a_lr, n);
    double total = 0.0;
    for (std::size_t i = 0; i < a_sr.data.size(); ++i) total += std::fabs(a_sr.data[i] - target.data[i]);
    return total / static_cast<double>(a_sr.data.size());
}

struct SrLossWeights {
    double alpha = 0.1;    // spectral-angle weight
    double beta_ab = 0.2;  // abundance-consistency weight
};

struct SrLossParts {
    Tensor total, l1, sad, abun;
};

inline SrLossParts sr_loss_total(const Tensor& y_hr, const Tensor& y_sr, const Tensor& a_sr,
                                 const Tensor& deconv_target, const SrLossWeights& w = {}) {
    SrLossParts parts;
    parts.l1 = l1_mean(y_hr, y_sr);
    parts.sad = sad_mean(y_hr, y_sr);
    parts.abun = abun_loss(a_sr, deconv_target);
    parts.total = add(parts.l1, add(scale(parts.sad, w.alpha), scale(parts.abun, w.beta_ab)));
    return parts;
}

inline double sr_loss_total(const HsiCube& y_hr, const HsiCube& y_sr, const AbundanceMap& a_sr,
                            const AbundanceMap& a_lr, int n, const SrLossWeights& w = {}) {
    return unloss_l1(y_hr, y_sr) + w.alpha * unloss_sad(y_hr, y_sr) + w.beta_ab * abun_loss(a_sr, a_lr, n);
}

}  // namespace unmixsr
