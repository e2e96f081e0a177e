#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dipblur/image.hpp"

namespace dipblur {

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

inline void write_chunk(std::vector<std::uint8_t>& out, const char type[4],
                        const std::vector<std::uint8_t>& payload) {
    put_u32(out, std::uint32_t(payload.size()));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    std::uint32_t crc = ::crc32(0, out.data() + start, uInt(out.size() - start));
    put_u32(out, crc);
}

inline std::vector<std::uint8_t> zlib_compress(const std::vector<std::uint8_t>& in) {
    uLongf bound = ::compressBound(uLong(in.size()));
    std::vector<std::uint8_t> out(bound);
    if (::compress2(out.data(), &bound, in.data(), uLong(in.size()), 6) != Z_OK)
        throw std::runtime_error("png: deflate failed");
    out.resize(bound);
    return out;
}

inline std::vector<std::uint8_t> zlib_decompress(const std::vector<std::uint8_t>& in,
                                                 std::size_t expected) {
    std::vector<std::uint8_t> out(expected);
    uLongf n = uLongf(expected);
    int rc = ::uncompress(out.data(), &n, in.data(), uLong(in.size()));
    if (rc != Z_OK || n != expected) throw std::runtime_error("png: inflate failed");
    return out;
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

// 8-bit PNG, grayscale or RGB depending on channel count. Values are clipped
// to [0,1] and rounded here; nowhere else in the pipeline clips.
inline void write_png(const std::string& path, const Image& img) {
    const int H = img.height, W = img.width, C = img.channels;
    std::vector<std::uint8_t> raw;
    raw.reserve(std::size_t(H) * (std::size_t(W) * C + 1));
    for (int y = 0; y < H; ++y) {
        raw.push_back(0);  // filter: none
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) raw.push_back(to_u8(img.at(c, y, x)));
    }

    std::vector<std::uint8_t> file;
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    file.insert(file.end(), sig, sig + 8);

    std::vector<std::uint8_t> ihdr;
    detail::put_u32(ihdr, std::uint32_t(W));
    detail::put_u32(ihdr, std::uint32_t(H));
    ihdr.push_back(8);                       // bit depth
    ihdr.push_back(C == 1 ? 0 : 2);          // gray / truecolor
    ihdr.push_back(0);                       // compression
    ihdr.push_back(0);                       // filter method
    ihdr.push_back(0);                       // no interlace
    detail::write_chunk(file, "IHDR", ihdr);
    detail::write_chunk(file, "IDAT", detail::zlib_compress(raw));
    detail::write_chunk(file, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png: cannot write " + path);
    f.write(reinterpret_cast<const char*>(file.data()), std::streamsize(file.size()));
    if (!f) throw std::runtime_error("png: short write to " + path);
}

// Reads 8-bit gray/RGB PNGs (alpha is dropped); palette, 16-bit and
// interlaced files are rejected.
inline Image read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png: cannot open " + path);
    std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0)
        throw std::runtime_error("png: bad signature in " + path);

    std::size_t pos = 8;
    int W = 0, H = 0, bit_depth = 0, color_type = 0;
    std::vector<std::uint8_t> idat;
    bool saw_ihdr = false, saw_iend = false;
    while (pos + 8 <= file.size()) {
        std::uint32_t len = detail::get_u32(&file[pos]);
        if (pos + 12 + len > file.size()) throw std::runtime_error("png: truncated " + path);
        char type[5] = {0};
        std::memcpy(type, &file[pos + 4], 4);
        const std::uint8_t* payload = &file[pos + 8];
        std::uint32_t crc = detail::get_u32(&file[pos + 8 + len]);
        if (crc != std::uint32_t(::crc32(0, &file[pos + 4], uInt(len + 4))))
            throw std::runtime_error("png: CRC mismatch in " + path);
        if (std::strcmp(type, "IHDR") == 0) {
            if (len != 13) throw std::runtime_error("png: bad IHDR in " + path);
            W = int(detail::get_u32(payload));
            H = int(detail::get_u32(payload + 4));
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw std::runtime_error("png: interlaced files unsupported");
            saw_ihdr = true;
        } else if (std::strcmp(type, "IDAT") == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::strcmp(type, "IEND") == 0) {
            saw_iend = true;
            break;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend || idat.empty())
        throw std::runtime_error("png: missing chunks in " + path);
    if (bit_depth != 8) throw std::runtime_error("png: only 8-bit depth supported");
    int src_c;
    switch (color_type) {
        case 0: src_c = 1; break;
        case 2: src_c = 3; break;
        case 4: src_c = 2; break;
        case 6: src_c = 4; break;
        default: throw std::runtime_error("png: unsupported color type (palette?)");
    }
    if (W <= 0 || H <= 0) throw std::runtime_error("png: bad dimensions");

    const std::size_t stride = std::size_t(W) * src_c;
    auto raw = detail::zlib_decompress(idat, std::size_t(H) * (stride + 1));

    // undo per-scanline filters in place
    std::vector<std::uint8_t> pix(std::size_t(H) * stride);
    for (int y = 0; y < H; ++y) {
        std::uint8_t filt = raw[std::size_t(y) * (stride + 1)];
        const std::uint8_t* src = &raw[std::size_t(y) * (stride + 1) + 1];
        std::uint8_t* dst = &pix[std::size_t(y) * stride];
        const std::uint8_t* prev = y > 0 ? &pix[std::size_t(y - 1) * stride] : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            int a = i >= std::size_t(src_c) ? dst[i - src_c] : 0;
            int b = prev ? prev[i] : 0;
            int c = (prev && i >= std::size_t(src_c)) ? prev[i - src_c] : 0;
            int v = src[i];
            switch (filt) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += detail::paeth(a, b, c); break;
                default: throw std::runtime_error("png: unknown filter type");
            }
            dst[i] = std::uint8_t(v);
        }
    }

    const int out_c = (src_c >= 3) ? 3 : 1;
    Image img(H, W, out_c);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < out_c; ++c)
                img.at(c, y, x) = from_u8(pix[std::size_t(y) * stride + std::size_t(x) * src_c + c]);
    return img;
}

}  // namespace dipblur
