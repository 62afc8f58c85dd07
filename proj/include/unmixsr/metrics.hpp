#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "unmixsr/common.hpp"
#include "unmixsr/hsi.hpp"

namespace unmixsr {

namespace detail {

inline void check_same_dims(const HsiCube& a, const HsiCube& b, const char* op) {
    if (a.h != b.h || a.w != b.w || a.bands != b.bands)
        throw ConfigError(std::string(op) + ": cube dims differ");
}

inline double band_mse(const HsiCube& ref, const HsiCube& est, int b) {
    const double* r = ref.plane(b);
    const double* e = est.plane(b);
    const std::size_t n = static_cast<std::size_t>(ref.h) * ref.w;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = r[i] - e[i];
        s += d * d;
    }
    return s / static_cast<double>(n);
}

}  // namespace detail

// Per-band PSNR on unit dynamic range; a zero-MSE band is +inf, and the
// reported value is the arithmetic band mean (so identical cubes are +inf).
inline std::vector<double> psnr_per_band(const HsiCube& ref, const HsiCube& est) {
    detail::check_same_dims(ref, est, "psnr");
    std::vector<double> out(static_cast<std::size_t>(ref.bands));
    for (int b = 0; b < ref.bands; ++b) {
        double mse = detail::band_mse(ref, est, b);
        out[b] = mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
    }
    return out;
}

inline double psnr(const HsiCube& ref, const HsiCube& est) {
    auto per_band = psnr_per_band(ref, est);
    double s = 0.0;
    for (double v : per_band) s += v;
    return s / static_cast<double>(per_band.size());
}

// Mean per-band SSIM, 11x11 Gaussian window (sigma 1.5) over valid positions,
// C1 = 0.01^2 and C2 = 0.03^2 on unit dynamic range.
inline double ssim(const HsiCube& ref, const HsiCube& est) {
    detail::check_same_dims(ref, est, "ssim");
    constexpr int kWin = 11;
    if (ref.h < kWin || ref.w < kWin)
        throw ConfigError("ssim: image smaller than the 11x11 window");
    constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;

    double window[kWin][kWin];
    {
        constexpr double sigma = 1.5;
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i)
            for (int j = 0; j < kWin; ++j) {
                double dy = i - kWin / 2, dx = j - kWin / 2;
                window[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
                sum += window[i][j];
            }
        for (auto& row : window)
            for (auto& v : row) v /= sum;
    }

    const int hv = ref.h - kWin + 1, wv = ref.w - kWin + 1;
    double band_sum = 0.0;
    for (int b = 0; b < ref.bands; ++b) {
        const double* x = ref.plane(b);
        const double* y = est.plane(b);
        double acc = 0.0;
        for (int oy = 0; oy < hv; ++oy)
            for (int ox = 0; ox < wv; ++ox) {
                double mx = 0.0, my = 0.0, mxx = 0.0, myy = 0.0, mxy = 0.0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        double wgt = window[i][j];
                        double xv = x[static_cast<std::size_t>(oy + i) * ref.w + ox + j];
                        double yv = y[static_cast<std::size_t>(oy + i) * ref.w + ox + j];
                        mx += wgt * xv;
                        my += wgt * yv;
                        mxx += wgt * xv * xv;
                        myy += wgt * yv * yv;
                        mxy += wgt * xv * yv;
                    }
                double vx = mxx - mx * mx, vy = myy - my * my, cxy = mxy - mx * my;
                acc += ((2.0 * mx * my + kC1) * (2.0 * cxy + kC2)) /
                       ((mx * mx + my * my + kC1) * (vx + vy + kC2));
            }
        band_sum += acc / (static_cast<double>(hv) * wv);
    }
    return band_sum / static_cast<double>(ref.bands);
}

// Mean per-pixel spectral angle in degrees; zero-norm pixels contribute 0.
inline double sam(const HsiCube& ref, const HsiCube& est) {
    detail::check_same_dims(ref, est, "sam");
    const std::size_t plane = static_cast<std::size_t>(ref.h) * ref.w;
    std::vector<double> r(static_cast<std::size_t>(ref.bands)), e(r.size());
    double total = 0.0;
    for (std::size_t px = 0; px < plane; ++px) {
        for (int b = 0; b < ref.bands; ++b) {
            r[static_cast<std::size_t>(b)] = ref.data[static_cast<std::size_t>(b) * plane + px];
            e[static_cast<std::size_t>(b)] = est.data[static_cast<std::size_t>(b) * plane + px];
        }
        total += spectral_angle(r.data(), e.data(), ref.bands);
    }
    return total / static_cast<double>(plane) * (180.0 / 3.14159265358979323846);
}

// Relative dimensionless global error: (100/n) * sqrt(mean_b(RMSE_b^2 /
// mean_b(ref)^2)). Zero-mean reference bands are excluded with a warning; if
// every band has zero mean the metric is undefined.
inline double ergas(const HsiCube& ref, const HsiCube& est, int n) {
    detail::check_same_dims(ref, est, "ergas");
    if (n < 1) throw ConfigError("ergas: scale must be >= 1");
    const std::size_t plane = static_cast<std::size_t>(ref.h) * ref.w;
    double acc = 0.0;
    int used = 0;
    for (int b = 0; b < ref.bands; ++b) {
        const double* r = ref.plane(b);
        double mean_ref = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mean_ref += r[i];
        mean_ref /= static_cast<double>(plane);
        if (mean_ref == 0.0) {
            std::cerr << "ergas: band " << b << " has zero mean, excluded\n";
            continue;
        }
        acc += detail::band_mse(ref, est, b) / (mean_ref * mean_ref);
        ++used;
    }
    if (used == 0) throw NumericError("ergas: undefined, every reference band has zero mean");
    return 100.0 / n * std::sqrt(acc / static_cast<double>(used));
}

// ---------------------------------------------------------------------------
// endmember matching

// Exhaustive best-permutation match between two p x B endmember sets (p <= 8),
// minimizing the mean pairwise spectral angle in radians.
inline std::pair<std::vector<int>, double> match_endmembers(const EndmemberMatrix& truth,
                                                            const EndmemberMatrix& est) {
    if (truth.p != est.p || truth.bands != est.bands)
        throw ConfigError("match_endmembers: dimension mismatch");
    if (truth.p > 8) throw ConfigError("match_endmembers: p > 8 unsupported (exhaustive search)");
    const int p = truth.p;
    std::vector<double> angle(static_cast<std::size_t>(p) * p);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j)
            angle[static_cast<std::size_t>(i) * p + j] =
                spectral_angle(truth.row(i), est.row(j), truth.bands);

    std::vector<int> perm(static_cast<std::size_t>(p));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_sum = std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (int i = 0; i < p; ++i) s += angle[static_cast<std::size_t>(i) * p + perm[i]];
        if (s < best_sum) {
            best_sum = s;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return {best, best_sum / static_cast<double>(p)};
}

// ---------------------------------------------------------------------------
// report

struct EvalReport {
    double psnr = 0.0;
    double ssim = 0.0;
    double sam = 0.0;   // degrees
    double ergas = 0.0;
    std::vector<double> per_band_psnr;
    int scale = 1;

    // flat key=value lines, 10 significant digits, "inf" for unbounded PSNR
    std::string to_text() const {
        auto fmt = [](double v) {
            if (std::isinf(v)) return std::string("inf");
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.10g", v);
            return std::string(buf);
        };
        std::string out;
        out += "psnr=" + fmt(psnr) + "\n";
        out += "ssim=" + fmt(ssim) + "\n";
        out += "sam=" + fmt(sam) + "\n";
        out += "ergas=" + fmt(ergas) + "\n";
        out += "scale=" + std::to_string(scale) + "\n";
        for (std::size_t b = 0; b < per_band_psnr.size(); ++b)
            out += "psnr_band_" + std::to_string(b) + "=" + fmt(per_band_psnr[b]) + "\n";
        return out;
    }
};

inline EvalReport evaluate(const HsiCube& ref, const HsiCube& est, int scale) {
    EvalReport r;
    r.per_band_psnr = psnr_per_band(ref, est);
    double s = 0.0;
    for (double v : r.per_band_psnr) s += v;
    r.psnr = s / static_cast<double>(r.per_band_psnr.size());
    r.ssim = ssim(ref, est);
    r.sam = sam(ref, est);
    r.ergas = ergas(ref, est, scale);
    r.scale = scale;
    return r;
}

}  // namespace unmixsr
