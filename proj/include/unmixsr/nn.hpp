#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "unmixsr/hsi.hpp"
#include "unmixsr/optim.hpp"
#include "unmixsr/rng.hpp"
#include "unmixsr/tensor.hpp"

namespace unmixsr {

// ---------------------------------------------------------------------------
// tensor <-> raster bridging (bands and abundance channels map to tensor
// channels, so every image tensor is C x H x W)

inline Tensor to_tensor(const HsiCube& cube, bool requires_grad = false) {
    return Tensor::from_data({cube.bands, cube.h, cube.w}, cube.data, requires_grad);
}

inline Tensor to_tensor(const AbundanceMap& a, bool requires_grad = false) {
    return Tensor::from_data({a.p, a.h, a.w}, a.data, requires_grad);
}

inline HsiCube to_cube(const Tensor& t) {
    if (t.shape().size() != 3) throw ConfigError("to_cube: expected C x H x W tensor");
    HsiCube c;
    c.bands = t.shape()[0];
    c.h = t.shape()[1];
    c.w = t.shape()[2];
    c.data = t.value();
    return c;
}

inline AbundanceMap to_abundance(const Tensor& t) {
    if (t.shape().size() != 3) throw ConfigError("to_abundance: expected C x H x W tensor");
    AbundanceMap a;
    a.p = t.shape()[0];
    a.h = t.shape()[1];
    a.w = t.shape()[2];
    a.data = t.value();
    return a;
}

// ---------------------------------------------------------------------------
// layers

enum class Init { he, zero, uniform01 };

// Square-kernel convolution layer with owned parameters.
struct Conv2d {
    Parameter kernel;
    Parameter bias;  // tensor undefined for bias-free layers
    int padding = 0;

    Conv2d() = default;

    Conv2d(const std::string& name, int in_ch, int out_ch, int k, int pad, const Rng& rng,
           Init init = Init::he, bool with_bias = true, Constraint constraint = Constraint::none) {
        padding = pad;
        std::vector<double> kw(static_cast<std::size_t>(out_ch) * in_ch * k * k, 0.0);
        Rng krng = rng.fork(name + ".kernel");
        if (init == Init::he) {
            double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
            for (auto& v : kw) v = stddev * krng.normal();
        } else if (init == Init::uniform01) {
            for (auto& v : kw) v = krng.uniform();
        }
        kernel = Parameter{name + ".kernel",
                           Tensor::from_data({out_ch, in_ch, k, k}, std::move(kw), true), true,
                           constraint};
        if (with_bias)
            bias = Parameter{name + ".bias", Tensor::zeros({out_ch}, true), true, Constraint::none};
    }

    Tensor forward(const Tensor& x) const {
        return conv2d(x, kernel.tensor, bias.tensor.defined() ? bias.tensor : Tensor(), padding);
    }

    void collect(std::vector<Parameter*>& out) {
        out.push_back(&kernel);
        if (bias.tensor.defined()) out.push_back(&bias);
    }

    int out_channels() const { return kernel.tensor.shape()[0]; }
    int in_channels() const { return kernel.tensor.shape()[1]; }
};

struct LayerNorm {
    Parameter gain;
    Parameter offset;

    LayerNorm() = default;

    LayerNorm(const std::string& name, int channels) {
        gain = Parameter{name + ".gain",
                         Tensor::from_data({channels}, std::vector<double>(channels, 1.0), true)};
        offset = Parameter{name + ".offset", Tensor::zeros({channels}, true)};
    }

    Tensor forward(const Tensor& x) const { return layer_norm(x, gain.tensor, offset.tensor); }

    void collect(std::vector<Parameter*>& out) {
        out.push_back(&gain);
        out.push_back(&offset);
    }
};

// Squeeze-excite channel attention: global average pool, 1x1 bottleneck with
// ReLU, 1x1 expansion with sigmoid, channelwise rescale.
struct ChannelAttention {
    Conv2d squeeze;
    Conv2d excite;

    ChannelAttention() = default;

    ChannelAttention(const std::string& name, int channels, int reduction, const Rng& rng) {
        if (reduction < 1 || channels % reduction != 0)
            throw ConfigError("channel_attention: channels " + std::to_string(channels) +
                              " not divisible by reduction " + std::to_string(reduction));
        squeeze = Conv2d(name + ".squeeze", channels, channels / reduction, 1, 0, rng);
        excite = Conv2d(name + ".excite", channels / reduction, channels, 1, 0, rng);
    }

    Tensor forward(const Tensor& x) const {
        Tensor w = global_avg_pool(x);
        w = relu(squeeze.forward(w));
        w = sigmoid(excite.forward(w));
        return scale_channels(x, w);
    }

    void collect(std::vector<Parameter*>& out) {
        squeeze.collect(out);
        excite.collect(out);
    }
};

struct GramConfig {
    int channels = 64;
    int kernel = 3;
    int reduction = 4;
    double leaky_slope = 0.2;
};

// General residual attention module: a spectral residual branch (layer norm,
// conv, leaky ReLU, channel attention) followed by a spatial residual branch
// (layer norm, conv, ReLU, conv), each added back to its input.
struct GramBlock {
    GramConfig cfg;
    LayerNorm spectral_norm;
    Conv2d spectral_conv;
    ChannelAttention attention;
    LayerNorm spatial_norm;
    Conv2d spatial_conv1;
    Conv2d spatial_conv2;

    GramBlock() = default;

    GramBlock(const std::string& name, const GramConfig& config, const Rng& rng) : cfg(config) {
        if (cfg.kernel % 2 == 0) throw ConfigError("gram: kernel size must be odd");
        if (cfg.channels % cfg.reduction != 0)
            throw ConfigError("gram: channels must be divisible by the attention reduction");
        const int c = cfg.channels, k = cfg.kernel, pad = k / 2;
        spectral_norm = LayerNorm(name + ".spectral_norm", c);
        spectral_conv = Conv2d(name + ".spectral_conv", c, c, k, pad, rng);
        attention = ChannelAttention(name + ".attention", c, cfg.reduction, rng);
        spatial_norm = LayerNorm(name + ".spatial_norm", c);
        spatial_conv1 = Conv2d(name + ".spatial_conv1", c, c, k, pad, rng);
        spatial_conv2 = Conv2d(name + ".spatial_conv2", c, c, k, pad, rng);
    }

    Tensor forward(const Tensor& x) const {
        if (x.shape().size() != 3 || x.shape()[0] != cfg.channels)
            throw ConfigError("gram: expected " + std::to_string(cfg.channels) +
                              " channels, got input " + shape_str(x.shape()));
        Tensor spectral =
            attention.forward(leaky_relu(spectral_conv.forward(spectral_norm.forward(x)), cfg.leaky_slope));
        Tensor x1 = add(x, spectral);
        Tensor spatial = spatial_conv2.forward(relu(spatial_conv1.forward(spatial_norm.forward(x1))));
        return add(x1, spatial);
    }

    void collect(std::vector<Parameter*>& out) {
        spectral_norm.collect(out);
        spectral_conv.collect(out);
        attention.collect(out);
        spatial_norm.collect(out);
        spatial_conv1.collect(out);
        spatial_conv2.collect(out);
    }

    // Zeroes every conv kernel and bias; the block then reduces to the
    // identity map, which the tests pin down.
    void zero_branches() {
        for (Parameter* p : std::vector<Parameter*>{&spectral_conv.kernel, &spectral_conv.bias,
                                                    &attention.squeeze.kernel, &attention.squeeze.bias,
                                                    &attention.excite.kernel, &attention.excite.bias,
                                                    &spatial_conv1.kernel, &spatial_conv1.bias,
                                                    &spatial_conv2.kernel, &spatial_conv2.bias}) {
            auto& v = p->tensor.value();
            std::fill(v.begin(), v.end(), 0.0);
        }
    }
};

// Standalone channel-attention entry point matching the primitive-op surface.
inline Tensor channel_attention(const Tensor& x, const ChannelAttention& module) {
    return module.forward(x);
}

inline void set_trainable(std::vector<Parameter*>& params, bool trainable) {
    for (Parameter* p : params) {
        p->trainable = trainable;
        // requires_grad mirrors trainability so frozen networks build
        // gradient-free subgraphs unless an upstream input needs grads
        p->tensor.node()->requires_grad = trainable;
    }
}

}  // namespace unmixsr
