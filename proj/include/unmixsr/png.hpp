#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "unmixsr/common.hpp"
#include "unmixsr/hsi.hpp"

namespace unmixsr {
namespace detail {

inline std::uint32_t crc32_png(const unsigned char* data, std::size_t len, std::uint32_t crc = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t n = 0; n < 256; ++n) {
            std::uint32_t c = n;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[n] = c;
        }
        return t;
    }();
    crc ^= 0xffffffffu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

inline std::uint32_t adler32(const unsigned char* data, std::size_t len) {
    std::uint32_t a = 1, b = 0;
    for (std::size_t i = 0; i < len; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

inline void push_u32be(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

inline void push_chunk(std::vector<unsigned char>& out, const char type[4],
                       const std::vector<unsigned char>& payload) {
    push_u32be(out, static_cast<std::uint32_t>(payload.size()));
    std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    push_u32be(out, crc32_png(&out[crc_start], out.size() - crc_start));
}

// zlib wrapper around stored (uncompressed) deflate blocks; fine for the
// diagnostic images this writer serves.
inline std::vector<unsigned char> zlib_stored(const std::vector<unsigned char>& raw) {
    std::vector<unsigned char> z;
    z.push_back(0x78);
    z.push_back(0x01);
    std::size_t pos = 0;
    do {
        std::size_t len = std::min<std::size_t>(raw.size() - pos, 65535);
        bool final = pos + len == raw.size();
        z.push_back(final ? 1 : 0);
        z.push_back(static_cast<unsigned char>(len & 0xff));
        z.push_back(static_cast<unsigned char>(len >> 8));
        z.push_back(static_cast<unsigned char>(~len & 0xff));
        z.push_back(static_cast<unsigned char>((~len >> 8) & 0xff));
        z.insert(z.end(), raw.begin() + static_cast<std::ptrdiff_t>(pos),
                 raw.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    } while (pos < raw.size());
    std::uint32_t ad = raw.empty() ? 1u : adler32(raw.data(), raw.size());
    push_u32be(z, ad);
    return z;
}

}  // namespace detail

// 8-bit grayscale PNG of one h x w plane, min-max normalized; a constant
// plane maps to mid-gray 128.
inline void write_gray_png(const std::string& path, const double* plane, int h, int w) {
    if (h < 1 || w < 1) throw ConfigError("write_gray_png: empty plane");
    const std::size_t n = static_cast<std::size_t>(h) * w;
    double lo = plane[0], hi = plane[0];
    for (std::size_t i = 1; i < n; ++i) {
        lo = std::min(lo, plane[i]);
        hi = std::max(hi, plane[i]);
    }
    std::vector<unsigned char> raw;
    raw.reserve(n + static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0);  // per-row filter: none
        for (int x = 0; x < w; ++x) {
            double v = plane[static_cast<std::size_t>(y) * w + x];
            unsigned char px;
            if (hi == lo)
                px = 128;
            else
                px = static_cast<unsigned char>(std::clamp(255.0 * (v - lo) / (hi - lo), 0.0, 255.0) + 0.5);
            raw.push_back(px);
        }
    }

    std::vector<unsigned char> out = {0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<unsigned char> ihdr;
    detail::push_u32be(ihdr, static_cast<std::uint32_t>(w));
    detail::push_u32be(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    detail::push_chunk(out, "IHDR", ihdr);
    detail::push_chunk(out, "IDAT", detail::zlib_stored(raw));
    detail::push_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write: " + path);
}

inline void export_png(const HsiCube& cube, int band, const std::string& path) {
    if (band < 0 || band >= cube.bands)
        throw ConfigError("export_png: band " + std::to_string(band) + " out of range [0, " +
                          std::to_string(cube.bands) + ")");
    write_gray_png(path, cube.plane(band), cube.h, cube.w);
}

inline void export_png(const AbundanceMap& a, int channel, const std::string& path) {
    if (channel < 0 || channel >= a.p)
        throw ConfigError("export_png: channel " + std::to_string(channel) + " out of range [0, " +
                          std::to_string(a.p) + ")");
    write_gray_png(path, a.plane(channel), a.h, a.w);
}

}  // namespace unmixsr
