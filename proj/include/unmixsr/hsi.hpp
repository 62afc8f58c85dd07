#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "unmixsr/common.hpp"
#include "unmixsr/rng.hpp"

namespace unmixsr {

// Nonnegative reflectance raster, band-major (BSQ): one contiguous plane per
// band, data[(b*h + y)*w + x].
struct HsiCube {
    int h = 0, w = 0, bands = 0;
    std::vector<double> data;

    static HsiCube zeros(int h, int w, int bands) {
        HsiCube c;
        c.h = h;
        c.w = w;
        c.bands = bands;
        c.data.assign(static_cast<std::size_t>(h) * w * bands, 0.0);
        return c;
    }

    double& at(int b, int y, int x) { return data[(static_cast<std::size_t>(b) * h + y) * w + x]; }
    double at(int b, int y, int x) const { return data[(static_cast<std::size_t>(b) * h + y) * w + x]; }
    const double* plane(int b) const { return &data[static_cast<std::size_t>(b) * h * w]; }
    double* plane(int b) { return &data[static_cast<std::size_t>(b) * h * w]; }
    std::size_t size() const { return data.size(); }
};

// Per-pixel material fractions, channel-major like HsiCube with p planes.
struct AbundanceMap {
    int h = 0, w = 0, p = 0;
    std::vector<double> data;

    static AbundanceMap zeros(int h, int w, int p) {
        AbundanceMap a;
        a.h = h;
        a.w = w;
        a.p = p;
        a.data.assign(static_cast<std::size_t>(h) * w * p, 0.0);
        return a;
    }

    double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * h + y) * w + x]; }
    double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * h + y) * w + x]; }
    const double* plane(int c) const { return &data[static_cast<std::size_t>(c) * h * w]; }
    double* plane(int c) { return &data[static_cast<std::size_t>(c) * h * w]; }
};

// p x B nonnegative spectra, row per endmember.
struct EndmemberMatrix {
    int p = 0, bands = 0;
    std::vector<double> data;

    static EndmemberMatrix zeros(int p, int bands) {
        EndmemberMatrix m;
        m.p = p;
        m.bands = bands;
        m.data.assign(static_cast<std::size_t>(p) * bands, 0.0);
        return m;
    }

    double& at(int i, int b) { return data[static_cast<std::size_t>(i) * bands + b]; }
    double at(int i, int b) const { return data[static_cast<std::size_t>(i) * bands + b]; }
    const double* row(int i) const { return &data[static_cast<std::size_t>(i) * bands]; }
};

struct Scene {
    AbundanceMap abundances;
    EndmemberMatrix endmembers;
    HsiCube cube;
};

// An LR/HR training pair plus the generator ground truth when available.
struct ScenePair {
    HsiCube hr;
    HsiCube lr;
    int scale = 2;
    std::optional<AbundanceMap> true_abundances_hr;
    std::optional<EndmemberMatrix> true_endmembers;
    double blur_sigma = 0.0;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// linear mixing model

// Angle between two spectra in radians via the chord length between the
// normalized vectors: exactly 0 for identical or power-of-two-scaled inputs
// and well conditioned near 0, unlike the raw arccos form. Zero-norm spectra
// contribute angle 0 by convention.
inline double spectral_angle(const double* a, const double* b, int n) {
    double na = 0.0, nb = 0.0;
    for (int i = 0; i < n; ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    double chord2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double d = a[i] / na - b[i] / nb;
        chord2 += d * d;
    }
    return 2.0 * std::asin(std::min(1.0, 0.5 * std::sqrt(chord2)));
}

// Per pixel: spectrum = sum_i a_i * M_i.
inline HsiCube lmm_compose(const AbundanceMap& a, const EndmemberMatrix& m) {
    if (a.p != m.p)
        throw ConfigError("lmm_compose: abundance p=" + std::to_string(a.p) +
                          " does not match endmember p=" + std::to_string(m.p));
    HsiCube cube = HsiCube::zeros(a.h, a.w, m.bands);
    const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
    for (int b = 0; b < m.bands; ++b) {
        double* out = cube.plane(b);
        for (int i = 0; i < a.p; ++i) {
            const double e = m.at(i, b);
            const double* ap = a.plane(i);
            for (std::size_t px = 0; px < plane; ++px) out[px] += ap[px] * e;
        }
    }
    return cube;
}

// ---------------------------------------------------------------------------
// synthetic LMM scenes

namespace detail {

// 3x3 box blur with reflect padding, applied per channel; preserves the
// per-pixel channel sum exactly up to rounding.
inline void box_blur3(std::vector<double>& data, int channels, int h, int w) {
    std::vector<double> tmp(static_cast<std::size_t>(h) * w);
    for (int c = 0; c < channels; ++c) {
        double* p = &data[static_cast<std::size_t>(c) * h * w];
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx)
                        s += p[static_cast<std::size_t>(reflect_index(y + dy, h)) * w +
                              reflect_index(x + dx, w)];
                tmp[static_cast<std::size_t>(y) * w + x] = s / 9.0;
            }
        std::copy(tmp.begin(), tmp.end(), p);
    }
}

}  // namespace detail

// Smooth nonnegative endmembers (sums of 2-4 Gaussian bumps, peak-normalized,
// pairwise angle >= 0.25 rad by rejection) and a Dirichlet abundance field
// box-blurred `smoothness` times. Deterministic per seed.
inline Scene synth_scene(int p, int h, int w, int bands, int smoothness, std::uint64_t seed) {
    if (p < 2) throw ConfigError("synth_scene: p must be >= 2");
    if (bands < p) throw ConfigError("synth_scene: bands must be >= p");
    if (h < 1 || w < 1) throw ConfigError("synth_scene: empty raster");
    if (smoothness < 0) throw ConfigError("synth_scene: negative smoothness");

    Rng root(seed);
    Rng erng = root.fork("endmembers");

    EndmemberMatrix m = EndmemberMatrix::zeros(p, bands);
    constexpr double kMinAngle = 0.25;
    int accepted = 0;
    for (int attempt = 0; attempt < 1000 && accepted < p; ++attempt) {
        std::vector<double> spec(static_cast<std::size_t>(bands), 0.0);
        int bumps = erng.uniform_int(2, 4);
        for (int j = 0; j < bumps; ++j) {
            double amp = erng.uniform(0.3, 1.0);
            double mu = erng.uniform(0.0, static_cast<double>(bands - 1));
            double sigma = erng.uniform(bands / 16.0, bands / 5.0);
            for (int b = 0; b < bands; ++b) {
                double d = (b - mu) / sigma;
                spec[b] += amp * std::exp(-0.5 * d * d);
            }
        }
        double peak = *std::max_element(spec.begin(), spec.end());
        for (auto& v : spec) v /= peak;
        bool ok = true;
        for (int i = 0; i < accepted && ok; ++i)
            ok = spectral_angle(spec.data(), m.row(i), bands) >= kMinAngle;
        if (ok) {
            std::copy(spec.begin(), spec.end(), &m.data[static_cast<std::size_t>(accepted) * bands]);
            ++accepted;
        }
    }
    if (accepted < p)
        throw GenerationError("synth_scene: could not draw " + std::to_string(p) +
                              " endmembers with pairwise angle >= 0.25 rad in 1000 tries");

    Rng arng = root.fork("abundances");
    AbundanceMap a = AbundanceMap::zeros(h, w, p);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::vector<double> frac = arng.dirichlet(p);
            for (int i = 0; i < p; ++i) a.at(i, y, x) = frac[i];
        }
    for (int s = 0; s < smoothness; ++s) detail::box_blur3(a.data, p, h, w);
    // renormalize so the sum-to-one constraint holds to the last bit
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = 0; i < p; ++i) s += a.at(i, y, x);
            for (int i = 0; i < p; ++i) a.at(i, y, x) /= s;
        }

    Scene scene;
    scene.cube = lmm_compose(a, m);
    scene.abundances = std::move(a);
    scene.endmembers = std::move(m);
    return scene;
}

// ---------------------------------------------------------------------------
// spatial degradation

namespace detail {

inline std::vector<double> gaussian_kernel1d(double sigma) {
    int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i / sigma) * (i / sigma));
        sum += k[static_cast<std::size_t>(i + radius)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable Gaussian blur with reflect padding, one plane.
inline void gaussian_blur_plane(const double* src, double* dst, int h, int w,
                                const std::vector<double>& k) {
    const int radius = static_cast<int>(k.size() / 2);
    std::vector<double> tmp(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i)
                s += k[static_cast<std::size_t>(i + radius)] *
                     src[static_cast<std::size_t>(y) * w + reflect_index(x + i, w)];
            tmp[static_cast<std::size_t>(y) * w + x] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i)
                s += k[static_cast<std::size_t>(i + radius)] *
                     tmp[static_cast<std::size_t>(reflect_index(y + i, h)) * w + x];
            dst[static_cast<std::size_t>(y) * w + x] = s;
        }
}

// Blur + n x n block average for a stack of channel planes. Noise and
// clipping are left to the callers that need them.
inline std::vector<double> degrade_channels(const std::vector<double>& src, int channels, int h,
                                            int w, int n, double blur_sigma) {
    if (n < 1) throw ConfigError("degrade: scale must be >= 1");
    if (h % n != 0 || w % n != 0)
        throw ConfigError("degrade: dims " + std::to_string(h) + "x" + std::to_string(w) +
                          " not divisible by scale " + std::to_string(n));
    const int hl = h / n, wl = w / n;
    std::vector<double> blurred;
    const double* source = src.data();
    if (blur_sigma > 0.0) {
        blurred.resize(src.size());
        auto k = gaussian_kernel1d(blur_sigma);
        for (int c = 0; c < channels; ++c)
            gaussian_blur_plane(&src[static_cast<std::size_t>(c) * h * w],
                                &blurred[static_cast<std::size_t>(c) * h * w], h, w, k);
        source = blurred.data();
    }
    std::vector<double> out(static_cast<std::size_t>(channels) * hl * wl, 0.0);
    const double inv = 1.0 / (static_cast<double>(n) * n);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < hl; ++y)
            for (int x = 0; x < wl; ++x) {
                double s = 0.0;
                for (int dy = 0; dy < n; ++dy)
                    for (int dx = 0; dx < n; ++dx)
                        s += source[(static_cast<std::size_t>(c) * h + y * n + dy) * w + x * n + dx];
                out[(static_cast<std::size_t>(c) * hl + y) * wl + x] = s * inv;
            }
    return out;
}

}  // namespace detail

// Per band: Gaussian blur (skipped when sigma = 0), n x n block average,
// i.i.d. Gaussian noise, clip to [0, 1].
inline HsiCube degrade(const HsiCube& hr, int n, double blur_sigma, double noise_sigma,
                       std::uint64_t seed) {
    auto lo = detail::degrade_channels(hr.data, hr.bands, hr.h, hr.w, n, blur_sigma);
    HsiCube lr;
    lr.h = hr.h / n;
    lr.w = hr.w / n;
    lr.bands = hr.bands;
    lr.data = std::move(lo);
    if (noise_sigma > 0.0) {
        Rng rng = Rng(seed).fork("degrade.noise");
        for (auto& v : lr.data) v += noise_sigma * rng.normal();
    }
    for (auto& v : lr.data) v = std::clamp(v, 0.0, 1.0);
    return lr;
}

// Same blur + block average applied to abundance channels (no noise, no
// clipping); ASC survives because the kernel weights are a partition of one.
inline AbundanceMap degrade_abundances(const AbundanceMap& a, int n, double blur_sigma) {
    AbundanceMap out;
    out.h = a.h / n;
    out.w = a.w / n;
    out.p = a.p;
    out.data = detail::degrade_channels(a.data, a.p, a.h, a.w, n, blur_sigma);
    return out;
}

// Plain n x n block mean of an abundance map: the convex-combination
// downsampling that preserves ASC and ANC exactly.
inline AbundanceMap block_average(const AbundanceMap& a, int n) {
    return degrade_abundances(a, n, 0.0);
}

// ---------------------------------------------------------------------------
// bicubic upsampling (Catmull-Rom, a = -0.5, reflect padding)

namespace detail {

inline double cubic_kernel(double s) {
    constexpr double a = -0.5;
    s = std::fabs(s);
    if (s <= 1.0) return ((a + 2.0) * s - (a + 3.0)) * s * s + 1.0;
    if (s < 2.0) return ((a * s - 5.0 * a) * s + 8.0 * a) * s - 4.0 * a;
    return 0.0;
}

inline void bicubic_upsample_plane(const double* src, double* dst, int h, int w, int n) {
    const int ho = h * n, wo = w * n;
    // separable: rows first at the target horizontal grid, then columns
    std::vector<double> tmp(static_cast<std::size_t>(h) * wo);
    std::vector<std::array<double, 4>> wx(static_cast<std::size_t>(wo));
    std::vector<int> ix(static_cast<std::size_t>(wo));
    for (int x = 0; x < wo; ++x) {
        double sx = (x + 0.5) / n - 0.5;
        int x0 = static_cast<int>(std::floor(sx));
        double t = sx - x0;
        ix[x] = x0;
        wx[x] = {cubic_kernel(t + 1.0), cubic_kernel(t), cubic_kernel(1.0 - t), cubic_kernel(2.0 - t)};
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < wo; ++x) {
            double s = 0.0;
            for (int j = 0; j < 4; ++j)
                s += wx[x][j] * src[static_cast<std::size_t>(y) * w + reflect_index(ix[x] - 1 + j, w)];
            tmp[static_cast<std::size_t>(y) * wo + x] = s;
        }
    for (int y = 0; y < ho; ++y) {
        double sy = (y + 0.5) / n - 0.5;
        int y0 = static_cast<int>(std::floor(sy));
        double t = sy - y0;
        std::array<double, 4> wy = {cubic_kernel(t + 1.0), cubic_kernel(t), cubic_kernel(1.0 - t),
                                    cubic_kernel(2.0 - t)};
        for (int x = 0; x < wo; ++x) {
            double s = 0.0;
            for (int j = 0; j < 4; ++j)
                s += wy[j] * tmp[static_cast<std::size_t>(reflect_index(y0 - 1 + j, h)) * wo + x];
            dst[static_cast<std::size_t>(y) * wo + x] = s;
        }
    }
}

}  // namespace detail

inline HsiCube bicubic_upsample(const HsiCube& lr, int n) {
    if (n < 1) throw ConfigError("bicubic_upsample: scale must be >= 1");
    HsiCube hr = HsiCube::zeros(lr.h * n, lr.w * n, lr.bands);
    for (int b = 0; b < lr.bands; ++b)
        detail::bicubic_upsample_plane(lr.plane(b), hr.plane(b), lr.h, lr.w, n);
    return hr;
}

// Degrades a ground-truth cube into an LR/HR pair, keeping generator truth.
inline ScenePair make_scene_pair(const Scene& scene, int n, double blur_sigma, double noise_sigma,
                                 std::uint64_t seed) {
    ScenePair pair;
    pair.hr = scene.cube;
    pair.lr = degrade(scene.cube, n, blur_sigma, noise_sigma, seed);
    pair.scale = n;
    pair.true_abundances_hr = scene.abundances;
    pair.true_endmembers = scene.endmembers;
    pair.blur_sigma = blur_sigma;
    pair.noise_sigma = noise_sigma;
    pair.seed = seed;
    return pair;
}

inline ScenePair make_scene_pair(const HsiCube& hr, int n, double blur_sigma, double noise_sigma,
                                 std::uint64_t seed) {
    ScenePair pair;
    pair.hr = hr;
    pair.lr = degrade(hr, n, blur_sigma, noise_sigma, seed);
    pair.scale = n;
    pair.blur_sigma = blur_sigma;
    pair.noise_sigma = noise_sigma;
    pair.seed = seed;
    return pair;
}

// ---------------------------------------------------------------------------
// HSC1 / ABN1 container
//
// bytes 0-3   magic "HSC1" (cubes) or "ABN1" (abundance maps)
// bytes 4-15  u32le h, w, channels
// payload     h*w*channels f32le values, channel-major (channel, row, column)

namespace detail {

inline void write_hsc_payload(const std::string& path, const char magic[4], int h, int w,
                              int channels, const std::vector<double>& data) {
    for (double v : data)
        if (!std::isfinite(v)) throw IoError("refusing to write non-finite value to " + path);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(magic, 4);
    std::array<std::uint32_t, 3> dims = {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w),
                                         static_cast<std::uint32_t>(channels)};
    f.write(reinterpret_cast<const char*>(dims.data()), sizeof(dims));
    std::vector<float> payload(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) payload[i] = static_cast<float>(data[i]);
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!f) throw IoError("short write: " + path);
}

inline void read_hsc_payload(const std::string& path, const char magic[4], int& h, int& w,
                             int& channels, std::vector<double>& data) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    char got[4];
    f.read(got, 4);
    if (!f || std::memcmp(got, magic, 4) != 0)
        throw IoError("bad magic in " + path + " (expected " + std::string(magic, 4) + ")");
    std::array<std::uint32_t, 3> dims;
    f.read(reinterpret_cast<char*>(dims.data()), sizeof(dims));
    if (!f) throw IoError("truncated header in " + path);
    h = static_cast<int>(dims[0]);
    w = static_cast<int>(dims[1]);
    channels = static_cast<int>(dims[2]);
    if (h < 1 || w < 1 || channels < 1 ||
        static_cast<std::uint64_t>(dims[0]) * dims[1] * dims[2] > (1u << 30))
        throw IoError("implausible dimensions in " + path);
    std::size_t count = static_cast<std::size_t>(h) * w * channels;
    std::vector<float> payload(count);
    f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(f.gcount()) != count * sizeof(float))
        throw IoError("truncated payload in " + path + " (header declares " + std::to_string(count) +
                      " values)");
    data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::isfinite(payload[i])) throw IoError("non-finite value in " + path);
        data[i] = static_cast<double>(payload[i]);
    }
}

}  // namespace detail

inline void save_hsc(const std::string& path, const HsiCube& cube) {
    detail::write_hsc_payload(path, "HSC1", cube.h, cube.w, cube.bands, cube.data);
}

inline HsiCube load_hsc(const std::string& path) {
    HsiCube cube;
    detail::read_hsc_payload(path, "HSC1", cube.h, cube.w, cube.bands, cube.data);
    return cube;
}

inline void save_abn(const std::string& path, const AbundanceMap& a) {
    detail::write_hsc_payload(path, "ABN1", a.h, a.w, a.p, a.data);
}

inline AbundanceMap load_abn(const std::string& path) {
    AbundanceMap a;
    detail::read_hsc_payload(path, "ABN1", a.h, a.w, a.p, a.data);
    return a;
}

}  // namespace unmixsr
