#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "unmixsr/common.hpp"

namespace unmixsr {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ')';
    return os.str();
}

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // same extent as value, zero until backward touches it
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Pulls this node's grad into the parents' grads. Empty for leaves and
    // for nodes built outside any differentiable path.
    std::function<void(TensorNode&)> backprop;

    bool is_leaf() const { return parents.empty(); }
};

inline std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

}  // namespace detail

// Dense N-d array of doubles participating in a reverse-mode graph. Copying a
// Tensor copies the handle, not the storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), {}, requires_grad);
    }

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw ConfigError("tensor data size does not match shape " + shape_str(shape));
        return Tensor(std::move(shape), std::move(data), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
    bool requires_grad() const { return node_->requires_grad; }
    std::uint64_t node_id() const { return node_->id; }

    std::vector<double>& value() { return node_->value; }
    const std::vector<double>& value() const { return node_->value; }
    std::vector<double>& grad() { return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }

    double item() const {
        if (numel() != 1) throw ConfigError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

    // Builder for ops: allocates the output node and wires parent edges only
    // when some input needs gradients.
    static Tensor make_op(Shape shape, std::vector<Tensor> inputs,
                          std::function<void(detail::TensorNode&)> backprop) {
        bool needs = false;
        for (const auto& t : inputs) needs = needs || t.node_->requires_grad;
        Tensor out(std::move(shape), {}, needs);
        if (needs) {
            out.node_->parents.reserve(inputs.size());
            for (auto& t : inputs) out.node_->parents.push_back(t.node_);
            out.node_->backprop = std::move(backprop);
        }
        return out;
    }

private:
    Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
        node_ = std::make_shared<detail::TensorNode>();
        node_->shape = std::move(shape);
        std::int64_t n = shape_numel(node_->shape);
        if (n < 1) throw ConfigError("empty tensor shape " + shape_str(node_->shape));
        if (data.empty())
            node_->value.assign(static_cast<std::size_t>(n), 0.0);
        else
            node_->value = std::move(data);
        node_->grad.assign(node_->value.size(), 0.0);
        node_->requires_grad = requires_grad;
        node_->id = detail::next_node_id();
    }

    std::shared_ptr<detail::TensorNode> node_;
};

// ---------------------------------------------------------------------------
// backward

namespace detail {

inline void topo_collect(const std::shared_ptr<TensorNode>& root, std::vector<TensorNode*>& order) {
    // Iterative post-order DFS; parent visitation follows construction order,
    // so the schedule is deterministic for a given graph.
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Reverse-mode accumulation from a scalar root. Interior grads are recomputed
// fresh on each call; leaf grads accumulate across calls until zero_grad().
inline void backward(const Tensor& root) {
    if (root.numel() != 1)
        throw ConfigError("backward requires a scalar root, got " + shape_str(root.shape()));
    if (!root.requires_grad()) return;

    std::vector<detail::TensorNode*> order;
    detail::topo_collect(root.node(), order);
    for (detail::TensorNode* n : order)
        if (!n->is_leaf()) std::fill(n->grad.begin(), n->grad.end(), 0.0);

    root.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise ops

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    auto an = a.node(), bn = b.node();
    Tensor out = Tensor::make_op(a.shape(), {a, b}, [an, bn](detail::TensorNode& self) {
        if (an->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        if (bn->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
    });
    for (std::size_t i = 0; i < out.value().size(); ++i) out.value()[i] = an->value[i] + bn->value[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    auto an = a.node(), bn = b.node();
    Tensor out = Tensor::make_op(a.shape(), {a, b}, [an, bn](detail::TensorNode& self) {
        if (an->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        if (bn->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
    });
    for (std::size_t i = 0; i < out.value().size(); ++i) out.value()[i] = an->value[i] - bn->value[i];
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    auto an = a.node(), bn = b.node();
    Tensor out = Tensor::make_op(a.shape(), {a, b}, [an, bn](detail::TensorNode& self) {
        if (an->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
        if (bn->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
    });
    for (std::size_t i = 0; i < out.value().size(); ++i) out.value()[i] = an->value[i] * bn->value[i];
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    auto an = a.node();
    Tensor out = Tensor::make_op(a.shape(), {a}, [an, c](detail::TensorNode& self) {
        if (an->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
    });
    for (std::size_t i = 0; i < out.value().size(); ++i) out.value()[i] = an->value[i] * c;
    return out;
}

// Subgradient at the kink is 0 for relu, abs and leaky_relu alike.
inline Tensor relu(const Tensor& a) {
    auto an = a.node();
    Tensor out = Tensor::make_op(a.shape(), {a}, [an](detail::TensorNode& self) {
        if (!an->requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (an->value[i] > 0.0) an->grad[i] += self.grad[i];
    });
    for (std::size_t i = 0; i < out.value().size(); ++i)
        out.value()[i] = an->value[i] > 0.0 ? an->value[i] : 0.0;
    return out;
}

inline Tensor leaky_relu(const Tensor& a, double slope = 0.2) {
    auto an = a.node();
    Tensor out = Tensor::make_op(a.shape(), {a}, [an, slope](detail::TensorNode& self) {
        if (!an->requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * (an->value[i] > 0.0 ? 1.0 : (an->value[i] < 0.0 ? slope : 0.0));
    });
    for (std::size_t i = 0; i < out.value().size(); ++i)
        out.value()[i] = an->value[i] > 0.0 ? an->value[i] : slope * an->value[i];
    return out;
}

inline Tensor sigmoid(const Tensor& a) {
    auto an = a.node();
    Tensor out = Tensor::make_op(a.shape(), {a}, [an](detail::TensorNode& self) {
        if (!an->requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            double s = self.value[i];
            an->grad[i] += self.grad[i] * s * (1.0 - s);
        }
    });
    for (std::size_t i = 0; i < out.value().size(); ++i)
        out.value()[i] = 1.0 / (1.0 + std::exp(-an->value[i]));
    return out;
}

inline Tensor tensor_abs(const Tensor& a) {
    auto an = a.node();
    Tensor out = Tensor::make_op(a.shape(), {a}, [an](detail::TensorNode& self) {
        if (!an->requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * (an->value[i] > 0.0 ? 1.0 : (an->value[i] < 0.0 ? -1.0 : 0.0));
    });
    for (std::size_t i = 0; i < out.value().size(); ++i) out.value()[i] = std::fabs(an->value[i]);
    return out;
}

inline Tensor sum(const Tensor& a) {
    auto an = a.node();
    Tensor out = Tensor::make_op({1}, {a}, [an](detail::TensorNode& self) {
        if (!an->requires_grad) return;
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0];
    });
    double s = 0.0;
    for (double v : an->value) s += v;
    out.value()[0] = s;
    return out;
}

inline Tensor mean(const Tensor& a) {
    auto an = a.node();
    double inv_n = 1.0 / static_cast<double>(a.numel());
    Tensor out = Tensor::make_op({1}, {a}, [an, inv_n](detail::TensorNode& self) {
        if (!an->requires_grad) return;
        double g = self.grad[0] * inv_n;
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
    });
    double s = 0.0;
    for (double v : an->value) s += v;
    out.value()[0] = s * inv_n;
    return out;
}

// ---------------------------------------------------------------------------
// convolution family (all image tensors are channel-major C x H x W)

namespace detail {

inline void check_chw(const Tensor& t, const char* op) {
    if (t.shape().size() != 3)
        throw ConfigError(std::string(op) + ": expected C x H x W tensor, got " + shape_str(t.shape()));
}

// Copies a C x H x W volume into a zero-padded buffer (C, H + 2p, W + 2p).
inline std::vector<double> pad_chw(const std::vector<double>& src, int c, int h, int w, int p) {
    int hp = h + 2 * p, wp = w + 2 * p;
    std::vector<double> dst(static_cast<std::size_t>(c) * hp * wp, 0.0);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y) {
            const double* s = &src[(static_cast<std::size_t>(ch) * h + y) * w];
            double* d = &dst[(static_cast<std::size_t>(ch) * hp + y + p) * wp + p];
            std::copy(s, s + w, d);
        }
    return dst;
}

}  // namespace detail

// Cross-correlation (no kernel flip). input C x H x W, kernel O x C x k x k,
// bias O (may be undefined for bias-free layers), square padding.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding) {
    detail::check_chw(input, "conv2d");
    if (kernel.shape().size() != 4 || kernel.shape()[2] != kernel.shape()[3])
        throw ConfigError("conv2d: kernel must be O x C x k x k, got " + shape_str(kernel.shape()));
    const int c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
    const int o = kernel.shape()[0], kc = kernel.shape()[1], k = kernel.shape()[2];
    if (kc != c)
        throw ConfigError("conv2d: kernel expects " + std::to_string(kc) + " input channels, got " +
                          std::to_string(c));
    if (k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd");
    if (padding < 0) throw ConfigError("conv2d: negative padding");
    const int ho = h + 2 * padding - k + 1, wo = w + 2 * padding - k + 1;
    if (ho < 1 || wo < 1) throw ConfigError("conv2d: output would be empty");
    const bool has_bias = bias.defined();
    if (has_bias && (bias.shape().size() != 1 || bias.shape()[0] != o))
        throw ConfigError("conv2d: bias must be a length-O vector");

    auto in = input.node();
    auto kn = kernel.node();
    auto bn = has_bias ? bias.node() : nullptr;
    const int hp = h + 2 * padding, wp = w + 2 * padding;

    std::vector<Tensor> parents{input, kernel};
    if (has_bias) parents.push_back(bias);

    Tensor out = Tensor::make_op(
        {o, ho, wo}, std::move(parents),
        [in, kn, bn, c, h, w, o, k, padding, ho, wo, hp, wp](detail::TensorNode& self) {
            const auto& gout = self.grad;
            if (bn && bn->requires_grad) {
                for (int oc = 0; oc < o; ++oc) {
                    double s = 0.0;
                    const double* g = &gout[static_cast<std::size_t>(oc) * ho * wo];
                    for (int i = 0; i < ho * wo; ++i) s += g[i];
                    bn->grad[oc] += s;
                }
            }
            std::vector<double> padded;
            if (kn->requires_grad || in->requires_grad)
                padded = detail::pad_chw(in->value, c, h, w, padding);
            if (kn->requires_grad) {
                for (int oc = 0; oc < o; ++oc)
                    for (int ic = 0; ic < c; ++ic)
                        for (int i = 0; i < k; ++i)
                            for (int j = 0; j < k; ++j) {
                                double s = 0.0;
                                for (int y = 0; y < ho; ++y) {
                                    const double* g = &gout[(static_cast<std::size_t>(oc) * ho + y) * wo];
                                    const double* p =
                                        &padded[(static_cast<std::size_t>(ic) * hp + y + i) * wp + j];
                                    for (int x = 0; x < wo; ++x) s += g[x] * p[x];
                                }
                                kn->grad[((static_cast<std::size_t>(oc) * c + ic) * k + i) * k + j] += s;
                            }
            }
            if (in->requires_grad) {
                std::vector<double> gpad(static_cast<std::size_t>(c) * hp * wp, 0.0);
                for (int oc = 0; oc < o; ++oc)
                    for (int ic = 0; ic < c; ++ic)
                        for (int i = 0; i < k; ++i)
                            for (int j = 0; j < k; ++j) {
                                double kv =
                                    kn->value[((static_cast<std::size_t>(oc) * c + ic) * k + i) * k + j];
                                if (kv == 0.0) continue;
                                for (int y = 0; y < ho; ++y) {
                                    const double* g = &gout[(static_cast<std::size_t>(oc) * ho + y) * wo];
                                    double* p = &gpad[(static_cast<std::size_t>(ic) * hp + y + i) * wp + j];
                                    for (int x = 0; x < wo; ++x) p[x] += kv * g[x];
                                }
                            }
                for (int ic = 0; ic < c; ++ic)
                    for (int y = 0; y < h; ++y) {
                        const double* s = &gpad[(static_cast<std::size_t>(ic) * hp + y + padding) * wp + padding];
                        double* d = &in->grad[(static_cast<std::size_t>(ic) * h + y) * w];
                        for (int x = 0; x < w; ++x) d[x] += s[x];
                    }
            }
        });

    std::vector<double> padded = detail::pad_chw(in->value, c, h, w, padding);
    auto& ov = out.value();
    for (int oc = 0; oc < o; ++oc) {
        double b = has_bias ? bn->value[oc] : 0.0;
        double* obase = &ov[static_cast<std::size_t>(oc) * ho * wo];
        for (int i = 0; i < ho * wo; ++i) obase[i] = b;
        for (int ic = 0; ic < c; ++ic)
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                    double kv = kn->value[((static_cast<std::size_t>(oc) * c + ic) * k + i) * k + j];
                    if (kv == 0.0) continue;
                    for (int y = 0; y < ho; ++y) {
                        const double* p = &padded[(static_cast<std::size_t>(ic) * hp + y + i) * wp + j];
                        double* orow = &obase[static_cast<std::size_t>(y) * wo];
                        for (int x = 0; x < wo; ++x) orow[x] += kv * p[x];
                    }
                }
    }
    return out;
}

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int padding) {
    return conv2d(input, kernel, Tensor(), padding);
}

// Adjoint of strided convolution. input C x H x W, kernel C x O x k x k,
// zero padding; output O x ((H-1)*stride + k) x ((W-1)*stride + k).
inline Tensor transposed_conv2d(const Tensor& input, const Tensor& kernel, int stride) {
    detail::check_chw(input, "transposed_conv2d");
    if (kernel.shape().size() != 4 || kernel.shape()[2] != kernel.shape()[3])
        throw ConfigError("transposed_conv2d: kernel must be C x O x k x k");
    if (stride < 1) throw ConfigError("transposed_conv2d: stride must be >= 1");
    const int c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
    const int kc = kernel.shape()[0], o = kernel.shape()[1], k = kernel.shape()[2];
    if (kc != c) throw ConfigError("transposed_conv2d: kernel expects " + std::to_string(kc) +
                                   " input channels, got " + std::to_string(c));
    const int ho = (h - 1) * stride + k, wo = (w - 1) * stride + k;

    auto in = input.node();
    auto kn = kernel.node();

    Tensor out = Tensor::make_op(
        {o, ho, wo}, {input, kernel},
        [in, kn, c, h, w, o, k, stride, ho, wo](detail::TensorNode& self) {
            const auto& gout = self.grad;
            if (kn->requires_grad) {
                for (int ic = 0; ic < c; ++ic)
                    for (int oc = 0; oc < o; ++oc)
                        for (int i = 0; i < k; ++i)
                            for (int j = 0; j < k; ++j) {
                                double s = 0.0;
                                for (int y = 0; y < h; ++y) {
                                    const double* iv = &in->value[(static_cast<std::size_t>(ic) * h + y) * w];
                                    const double* g =
                                        &gout[(static_cast<std::size_t>(oc) * ho + y * stride + i) * wo + j];
                                    for (int x = 0; x < w; ++x) s += iv[x] * g[static_cast<std::size_t>(x) * stride];
                                }
                                kn->grad[((static_cast<std::size_t>(ic) * o + oc) * k + i) * k + j] += s;
                            }
            }
            if (in->requires_grad) {
                for (int ic = 0; ic < c; ++ic)
                    for (int oc = 0; oc < o; ++oc)
                        for (int i = 0; i < k; ++i)
                            for (int j = 0; j < k; ++j) {
                                double kv =
                                    kn->value[((static_cast<std::size_t>(ic) * o + oc) * k + i) * k + j];
                                if (kv == 0.0) continue;
                                for (int y = 0; y < h; ++y) {
                                    double* gi = &in->grad[(static_cast<std::size_t>(ic) * h + y) * w];
                                    const double* g =
                                        &gout[(static_cast<std::size_t>(oc) * ho + y * stride + i) * wo + j];
                                    for (int x = 0; x < w; ++x) gi[x] += kv * g[static_cast<std::size_t>(x) * stride];
                                }
                            }
            }
        });

    auto& ov = out.value();
    for (int ic = 0; ic < c; ++ic)
        for (int oc = 0; oc < o; ++oc)
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                    double kv = kn->value[((static_cast<std::size_t>(ic) * o + oc) * k + i) * k + j];
                    if (kv == 0.0) continue;
                    for (int y = 0; y < h; ++y) {
                        const double* iv = &in->value[(static_cast<std::size_t>(ic) * h + y) * w];
                        double* orow = &ov[(static_cast<std::size_t>(oc) * ho + y * stride + i) * wo + j];
                        for (int x = 0; x < w; ++x) orow[static_cast<std::size_t>(x) * stride] += kv * iv[x];
                    }
                }
    return out;
}

// Sub-pixel rearrangement: (C*r^2) x H x W -> C x rH x rW.
inline Tensor pixel_shuffle(const Tensor& input, int r) {
    detail::check_chw(input, "pixel_shuffle");
    const int cin = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
    if (r < 1) throw ConfigError("pixel_shuffle: factor must be >= 1");
    if (cin % (r * r) != 0)
        throw ConfigError("pixel_shuffle: channels " + std::to_string(cin) + " not divisible by r^2");
    const int c = cin / (r * r), ho = h * r, wo = w * r;
    auto in = input.node();
    Tensor out = Tensor::make_op({c, ho, wo}, {input}, [in, c, h, w, r, ho, wo](detail::TensorNode& self) {
        if (!in->requires_grad) return;
        for (int ch = 0; ch < c; ++ch)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    std::size_t src = (static_cast<std::size_t>(ch) * r * r + static_cast<std::size_t>(dy) * r + dx) * h * w;
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x)
                            in->grad[src + static_cast<std::size_t>(y) * w + x] +=
                                self.grad[(static_cast<std::size_t>(ch) * ho + y * r + dy) * wo + x * r + dx];
                }
    });
    auto& ov = out.value();
    for (int ch = 0; ch < c; ++ch)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx) {
                std::size_t src = (static_cast<std::size_t>(ch) * r * r + static_cast<std::size_t>(dy) * r + dx) * h * w;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        ov[(static_cast<std::size_t>(ch) * ho + y * r + dy) * wo + x * r + dx] =
                            in->value[src + static_cast<std::size_t>(y) * w + x];
            }
    return out;
}

// Exact inverse of pixel_shuffle.
inline Tensor pixel_unshuffle(const Tensor& input, int r) {
    detail::check_chw(input, "pixel_unshuffle");
    const int c = input.shape()[0], ho = input.shape()[1], wo = input.shape()[2];
    if (r < 1) throw ConfigError("pixel_unshuffle: factor must be >= 1");
    if (ho % r != 0 || wo % r != 0)
        throw ConfigError("pixel_unshuffle: spatial dims not divisible by r");
    const int h = ho / r, w = wo / r;
    auto in = input.node();
    Tensor out = Tensor::make_op({c * r * r, h, w}, {input}, [in, c, h, w, r, ho, wo](detail::TensorNode& self) {
        if (!in->requires_grad) return;
        for (int ch = 0; ch < c; ++ch)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    std::size_t dst = (static_cast<std::size_t>(ch) * r * r + static_cast<std::size_t>(dy) * r + dx) * h * w;
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x)
                            in->grad[(static_cast<std::size_t>(ch) * ho + y * r + dy) * wo + x * r + dx] +=
                                self.grad[dst + static_cast<std::size_t>(y) * w + x];
                }
    });
    auto& ov = out.value();
    for (int ch = 0; ch < c; ++ch)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx) {
                std::size_t dst = (static_cast<std::size_t>(ch) * r * r + static_cast<std::size_t>(dy) * r + dx) * h * w;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        ov[dst + static_cast<std::size_t>(y) * w + x] =
                            in->value[(static_cast<std::size_t>(ch) * ho + y * r + dy) * wo + x * r + dx];
            }
    return out;
}

// ---------------------------------------------------------------------------
// per-pixel channel ops

// Max-stabilized softmax across the channel axis at every spatial location.
inline Tensor softmax_channels(const Tensor& input) {
    detail::check_chw(input, "softmax_channels");
    const int c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    auto in = input.node();
    Tensor out = Tensor::make_op(input.shape(), {input}, [in, c, plane](detail::TensorNode& self) {
        if (!in->requires_grad) return;
        for (std::size_t px = 0; px < plane; ++px) {
            double dot = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                std::size_t i = static_cast<std::size_t>(ch) * plane + px;
                dot += self.value[i] * self.grad[i];
            }
            for (int ch = 0; ch < c; ++ch) {
                std::size_t i = static_cast<std::size_t>(ch) * plane + px;
                in->grad[i] += self.value[i] * (self.grad[i] - dot);
            }
        }
    });
    auto& ov = out.value();
    for (std::size_t px = 0; px < plane; ++px) {
        double m = -std::numeric_limits<double>::infinity();
        for (int ch = 0; ch < c; ++ch) m = std::max(m, in->value[static_cast<std::size_t>(ch) * plane + px]);
        double denom = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            std::size_t i = static_cast<std::size_t>(ch) * plane + px;
            ov[i] = std::exp(in->value[i] - m);
            denom += ov[i];
        }
        for (int ch = 0; ch < c; ++ch) ov[static_cast<std::size_t>(ch) * plane + px] /= denom;
    }
    return out;
}

// Standardizes every pixel across channels (biased variance, eps inside the
// square root), then applies per-channel gain and offset.
inline Tensor layer_norm(const Tensor& input, const Tensor& gain, const Tensor& offset,
                         double eps = 1e-6) {
    detail::check_chw(input, "layer_norm");
    const int c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
    if (gain.shape() != Shape{c} || offset.shape() != Shape{c})
        throw ConfigError("layer_norm: gain/offset must be length-C vectors");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    auto in = input.node();
    auto gn = gain.node();
    auto on = offset.node();
    Tensor out = Tensor::make_op(
        input.shape(), {input, gain, offset}, [in, gn, on, c, plane, eps](detail::TensorNode& self) {
            double inv_c = 1.0 / c;
            for (std::size_t px = 0; px < plane; ++px) {
                double mu = 0.0, var = 0.0;
                for (int ch = 0; ch < c; ++ch) mu += in->value[static_cast<std::size_t>(ch) * plane + px];
                mu *= inv_c;
                for (int ch = 0; ch < c; ++ch) {
                    double d = in->value[static_cast<std::size_t>(ch) * plane + px] - mu;
                    var += d * d;
                }
                var *= inv_c;
                double inv_sigma = 1.0 / std::sqrt(var + eps);
                double sum_gg = 0.0, sum_ggx = 0.0;
                for (int ch = 0; ch < c; ++ch) {
                    std::size_t i = static_cast<std::size_t>(ch) * plane + px;
                    double xhat = (in->value[i] - mu) * inv_sigma;
                    double gg = self.grad[i] * gn->value[ch];
                    sum_gg += gg;
                    sum_ggx += gg * xhat;
                    if (gn->requires_grad) gn->grad[ch] += self.grad[i] * xhat;
                    if (on->requires_grad) on->grad[ch] += self.grad[i];
                }
                if (in->requires_grad) {
                    for (int ch = 0; ch < c; ++ch) {
                        std::size_t i = static_cast<std::size_t>(ch) * plane + px;
                        double xhat = (in->value[i] - mu) * inv_sigma;
                        double gg = self.grad[i] * gn->value[ch];
                        in->grad[i] += (gg - inv_c * sum_gg - xhat * inv_c * sum_ggx) * inv_sigma;
                    }
                }
            }
        });
    auto& ov = out.value();
    double inv_c = 1.0 / c;
    for (std::size_t px = 0; px < plane; ++px) {
        double mu = 0.0, var = 0.0;
        for (int ch = 0; ch < c; ++ch) mu += in->value[static_cast<std::size_t>(ch) * plane + px];
        mu *= inv_c;
        for (int ch = 0; ch < c; ++ch) {
            double d = in->value[static_cast<std::size_t>(ch) * plane + px] - mu;
            var += d * d;
        }
        var *= inv_c;
        double inv_sigma = 1.0 / std::sqrt(var + eps);
        for (int ch = 0; ch < c; ++ch) {
            std::size_t i = static_cast<std::size_t>(ch) * plane + px;
            ov[i] = (in->value[i] - mu) * inv_sigma * gn->value[ch] + on->value[ch];
        }
    }
    return out;
}

// C x H x W -> C x 1 x 1 spatial mean per channel.
inline Tensor global_avg_pool(const Tensor& input) {
    detail::check_chw(input, "global_avg_pool");
    const int c = input.shape()[0];
    const std::size_t plane = static_cast<std::size_t>(input.shape()[1]) * input.shape()[2];
    const double inv = 1.0 / static_cast<double>(plane);
    auto in = input.node();
    Tensor out = Tensor::make_op({c, 1, 1}, {input}, [in, c, plane, inv](detail::TensorNode& self) {
        if (!in->requires_grad) return;
        for (int ch = 0; ch < c; ++ch) {
            double g = self.grad[ch] * inv;
            double* gi = &in->grad[static_cast<std::size_t>(ch) * plane];
            for (std::size_t i = 0; i < plane; ++i) gi[i] += g;
        }
    });
    for (int ch = 0; ch < c; ++ch) {
        const double* v = &in->value[static_cast<std::size_t>(ch) * plane];
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += v[i];
        out.value()[ch] = s * inv;
    }
    return out;
}

// Rescales each channel of x by the matching entry of weights (C x 1 x 1).
inline Tensor scale_channels(const Tensor& x, const Tensor& weights) {
    detail::check_chw(x, "scale_channels");
    const int c = x.shape()[0];
    if (weights.shape() != Shape{c, 1, 1})
        throw ConfigError("scale_channels: weights must be C x 1 x 1");
    const std::size_t plane = static_cast<std::size_t>(x.shape()[1]) * x.shape()[2];
    auto xn = x.node();
    auto wn = weights.node();
    Tensor out = Tensor::make_op(x.shape(), {x, weights}, [xn, wn, c, plane](detail::TensorNode& self) {
        for (int ch = 0; ch < c; ++ch) {
            std::size_t base = static_cast<std::size_t>(ch) * plane;
            if (xn->requires_grad) {
                double wv = wn->value[ch];
                for (std::size_t i = 0; i < plane; ++i) xn->grad[base + i] += self.grad[base + i] * wv;
            }
            if (wn->requires_grad) {
                double s = 0.0;
                for (std::size_t i = 0; i < plane; ++i) s += self.grad[base + i] * xn->value[base + i];
                wn->grad[ch] += s;
            }
        }
    });
    for (int ch = 0; ch < c; ++ch) {
        std::size_t base = static_cast<std::size_t>(ch) * plane;
        double wv = wn->value[ch];
        for (std::size_t i = 0; i < plane; ++i) out.value()[base + i] = xn->value[base + i] * wv;
    }
    return out;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    detail::check_chw(a, "concat_channels");
    detail::check_chw(b, "concat_channels");
    if (a.shape()[1] != b.shape()[1] || a.shape()[2] != b.shape()[2])
        throw ConfigError("concat_channels: spatial dims differ " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    const int ca = a.shape()[0], cb = b.shape()[0];
    const std::size_t plane = static_cast<std::size_t>(a.shape()[1]) * a.shape()[2];
    auto an = a.node(), bn = b.node();
    Tensor out = Tensor::make_op({ca + cb, a.shape()[1], a.shape()[2]}, {a, b},
                                 [an, bn, ca, cb, plane](detail::TensorNode& self) {
                                     std::size_t na = static_cast<std::size_t>(ca) * plane;
                                     std::size_t nb = static_cast<std::size_t>(cb) * plane;
                                     if (an->requires_grad)
                                         for (std::size_t i = 0; i < na; ++i) an->grad[i] += self.grad[i];
                                     if (bn->requires_grad)
                                         for (std::size_t i = 0; i < nb; ++i) bn->grad[i] += self.grad[na + i];
                                 });
    std::copy(an->value.begin(), an->value.end(), out.value().begin());
    std::copy(bn->value.begin(), bn->value.end(),
              out.value().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ca) * plane));
    return out;
}

// ---------------------------------------------------------------------------
// spectral losses as primitives

// Mean over pixels of the angle between the two channel spectra, in radians.
// Zero-norm spectra contribute angle 0 and no gradient; the arccos argument is
// clamped to [-1, 1] with zero subgradient at the clamp.
inline Tensor sad_mean(const Tensor& a, const Tensor& b) {
    detail::check_chw(a, "sad_mean");
    detail::check_same_shape(a, b, "sad_mean");
    const int c = a.shape()[0];
    const std::size_t plane = static_cast<std::size_t>(a.shape()[1]) * a.shape()[2];
    auto an = a.node(), bn = b.node();

    auto pixel_stats = [c, plane](const std::vector<double>& av, const std::vector<double>& bv,
                                  std::size_t px, double& dot, double& na2, double& nb2) {
        dot = na2 = nb2 = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            std::size_t i = static_cast<std::size_t>(ch) * plane + px;
            dot += av[i] * bv[i];
            na2 += av[i] * av[i];
            nb2 += bv[i] * bv[i];
        }
    };

    Tensor out = Tensor::make_op({1}, {a, b}, [an, bn, c, plane, pixel_stats](detail::TensorNode& self) {
        const double g = self.grad[0] / static_cast<double>(plane);
        for (std::size_t px = 0; px < plane; ++px) {
            double dot, na2, nb2;
            pixel_stats(an->value, bn->value, px, dot, na2, nb2);
            if (na2 == 0.0 || nb2 == 0.0) continue;
            double na = std::sqrt(na2), nb = std::sqrt(nb2);
            double u = dot / (na * nb);
            if (u >= 1.0 - 1e-12 || u <= -1.0 + 1e-12) continue;  // clamp region
            double dangle_du = -1.0 / std::sqrt(1.0 - u * u);
            for (int ch = 0; ch < c; ++ch) {
                std::size_t i = static_cast<std::size_t>(ch) * plane + px;
                if (an->requires_grad) {
                    double du_da = bn->value[i] / (na * nb) - u * an->value[i] / na2;
                    an->grad[i] += g * dangle_du * du_da;
                }
                if (bn->requires_grad) {
                    double du_db = an->value[i] / (na * nb) - u * bn->value[i] / nb2;
                    bn->grad[i] += g * dangle_du * du_db;
                }
            }
        }
    });

    double total = 0.0;
    for (std::size_t px = 0; px < plane; ++px) {
        double dot, na2, nb2;
        pixel_stats(an->value, bn->value, px, dot, na2, nb2);
        if (na2 == 0.0 || nb2 == 0.0) continue;
        // chord form of arccos: exactly 0 for identical spectra and well
        // conditioned near 0
        double na = std::sqrt(na2), nb = std::sqrt(nb2);
        double chord2 = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            std::size_t i = static_cast<std::size_t>(ch) * plane + px;
            double d = an->value[i] / na - bn->value[i] / nb;
            chord2 += d * d;
        }
        total += 2.0 * std::asin(std::min(1.0, 0.5 * std::sqrt(chord2)));
    }
    out.value()[0] = total / static_cast<double>(plane);
    return out;
}

// Spectral smoothness of a 1x1 decoder kernel (B x p x 1 x 1): mean absolute
// band-to-band difference per endmember, normalized by p*(B-1).
inline Tensor endmember_tv(const Tensor& decoder_kernel) {
    if (decoder_kernel.shape().size() != 4 || decoder_kernel.shape()[2] != 1 ||
        decoder_kernel.shape()[3] != 1)
        throw ConfigError("endmember_tv: expected a B x p x 1 x 1 kernel");
    const int bands = decoder_kernel.shape()[0], p = decoder_kernel.shape()[1];
    if (bands < 2) throw ConfigError("endmember_tv: needs at least 2 bands");
    auto kn = decoder_kernel.node();
    const double norm = 1.0 / (static_cast<double>(p) * (bands - 1));
    Tensor out = Tensor::make_op({1}, {decoder_kernel}, [kn, bands, p, norm](detail::TensorNode& self) {
        if (!kn->requires_grad) return;
        double g = self.grad[0] * norm;
        for (int i = 0; i < p; ++i)
            for (int b = 0; b + 1 < bands; ++b) {
                double d = kn->value[static_cast<std::size_t>(b + 1) * p + i] -
                           kn->value[static_cast<std::size_t>(b) * p + i];
                double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                kn->grad[static_cast<std::size_t>(b + 1) * p + i] += g * s;
                kn->grad[static_cast<std::size_t>(b) * p + i] -= g * s;
            }
    });
    double total = 0.0;
    for (int i = 0; i < p; ++i)
        for (int b = 0; b + 1 < bands; ++b)
            total += std::fabs(kn->value[static_cast<std::size_t>(b + 1) * p + i] -
                               kn->value[static_cast<std::size_t>(b) * p + i]);
    out.value()[0] = total * norm;
    return out;
}

// Mean absolute difference, the shared L1 form of the reconstruction losses.
inline Tensor l1_mean(const Tensor& a, const Tensor& b) { return mean(tensor_abs(sub(a, b))); }

}  // namespace unmixsr
