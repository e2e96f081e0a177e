#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dipblur/rng.hpp"

namespace dipblur {

// Planar floating-point raster, values nominally in [0,1]. Degraded
// observations may leave that range; clipping happens only at 8-bit export.
struct Image {
    int height = 0, width = 0, channels = 0;
    std::vector<double> data;  // (channel, row, column)

    Image() = default;
    Image(int h, int w, int c)
        : height(h), width(w), channels(c), data(std::size_t(c) * h * w, 0.0) {
        if (h <= 0 || w <= 0 || (c != 1 && c != 3))
            throw std::invalid_argument("Image: bad shape");
    }

    double& at(int c, int y, int x) { return data[(std::size_t(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return data[(std::size_t(c) * height + y) * width + x]; }

    double* plane(int c) { return data.data() + std::size_t(c) * height * width; }
    const double* plane(int c) const { return data.data() + std::size_t(c) * height * width; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

inline Image clip01(Image img) {
    for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
    return img;
}

inline Image center_crop(const Image& img, int max_h, int max_w) {
    int ch = std::min(img.height, max_h);
    int cw = std::min(img.width, max_w);
    if (ch == img.height && cw == img.width) return img;
    int oy = (img.height - ch) / 2;
    int ox = (img.width - cw) / 2;
    Image out(ch, cw, img.channels);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < ch; ++y)
            for (int x = 0; x < cw; ++x) out.at(c, y, x) = img.at(c, oy + y, ox + x);
    return out;
}

// round-trip through these two changes any in-range value by at most 1/510
inline std::uint8_t to_u8(double v) {
    return std::uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}
inline double from_u8(std::uint8_t b) { return double(b) / 255.0; }

// Small nonnegative filter with unit tap sum; odd extent in both dimensions.
struct BlurKernel {
    int kh = 0, kw = 0;
    std::vector<double> taps;  // row-major
    std::string name;

    double at(int y, int x) const { return taps[std::size_t(y) * kw + x]; }
    double& at(int y, int x) { return taps[std::size_t(y) * kw + x]; }
};

namespace detail {
inline void normalize_kernel(BlurKernel& k) {
    double s = 0.0;
    for (double t : k.taps) {
        if (!(t >= 0.0)) throw std::invalid_argument("kernel: negative or non-finite tap");
        s += t;
    }
    if (!(s > 0.0)) throw std::invalid_argument("kernel: tap sum not positive");
    for (double& t : k.taps) t /= s;
}
inline void check_kernel_shape(int kh, int kw) {
    if (kh <= 0 || kw <= 0 || kh % 2 == 0 || kw % 2 == 0)
        throw std::invalid_argument("kernel: dimensions must be positive and odd");
}
}  // namespace detail

inline BlurKernel make_delta_kernel() {
    BlurKernel k{1, 1, {1.0}, "delta"};
    return k;
}

// 9x9 constant box
inline BlurKernel make_uniform_kernel() {
    BlurKernel k{9, 9, std::vector<double>(81, 1.0), "uniform"};
    detail::normalize_kernel(k);
    return k;
}

// 15x15 isotropic Gaussian sampled at integer offsets from the center
inline BlurKernel make_gaussian_kernel(double std_dev = 1.6, int size = 15) {
    if (!(std_dev > 0.0)) throw std::invalid_argument("gaussian kernel: std must be positive");
    detail::check_kernel_shape(size, size);
    BlurKernel k{size, size, std::vector<double>(std::size_t(size) * size), "gaussian"};
    int r = size / 2;
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x)
            k.at(y + r, x + r) = std::exp(-(double(y) * y + double(x) * x) / (2.0 * std_dev * std_dev));
    detail::normalize_kernel(k);
    return k;
}

// 15x15 with taps 1/(1 + x1^2 + x2^2), offsets -7..7
inline BlurKernel make_radial_kernel() {
    BlurKernel k{15, 15, std::vector<double>(225), "radial"};
    for (int y = -7; y <= 7; ++y)
        for (int x = -7; x <= 7; ++x)
            k.at(y + 7, x + 7) = 1.0 / (1.0 + double(y) * y + double(x) * x);
    detail::normalize_kernel(k);
    return k;
}

// Plain-text matrix: one kernel row per line, whitespace-separated decimals.
inline BlurKernel read_kernel_txt(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("kernel file: cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(f, line)) {
        std::istringstream iss(line);
        std::vector<double> row;
        double v;
        while (iss >> v) row.push_back(v);
        if (!iss.eof() && iss.fail()) throw std::runtime_error("kernel file: bad number in " + path);
        if (!row.empty()) rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("kernel file: empty " + path);
    std::size_t w = rows[0].size();
    for (const auto& r : rows)
        if (r.size() != w) throw std::runtime_error("kernel file: ragged rows in " + path);
    BlurKernel k;
    k.kh = int(rows.size());
    k.kw = int(w);
    detail::check_kernel_shape(k.kh, k.kw);
    for (const auto& r : rows) k.taps.insert(k.taps.end(), r.begin(), r.end());
    k.name = path;
    detail::normalize_kernel(k);
    return k;
}

inline void write_kernel_txt(const BlurKernel& k, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("kernel file: cannot write " + path);
    f.precision(17);
    for (int y = 0; y < k.kh; ++y) {
        for (int x = 0; x < k.kw; ++x) f << (x ? " " : "") << k.at(y, x);
        f << "\n";
    }
}

// Kernel spec strings: "uniform", "gaussian", "gaussian:<std>", "radial",
// "delta", "file:<path>".
inline BlurKernel make_kernel(const std::string& spec) {
    if (spec == "uniform") return make_uniform_kernel();
    if (spec == "radial") return make_radial_kernel();
    if (spec == "delta") return make_delta_kernel();
    if (spec == "gaussian") return make_gaussian_kernel();
    if (spec.rfind("gaussian:", 0) == 0) {
        double s = std::stod(spec.substr(9));
        return make_gaussian_kernel(s);
    }
    if (spec.rfind("file:", 0) == 0) return read_kernel_txt(spec.substr(5));
    throw std::invalid_argument("unknown kernel kind: " + spec);
}

struct DegradationSpec {
    BlurKernel kernel;
    double sigma255 = 0.0;  // noise std in 8-bit intensity units
    std::uint64_t seed = 0;
};

// Per-channel circular convolution with the centered kernel. Reference
// spatial implementation; the frequency path must match it exactly.
inline Image blur(const Image& x, const BlurKernel& k) {
    if (k.kh > x.height || k.kw > x.width)
        throw std::invalid_argument("blur: kernel larger than image");
    const int H = x.height, W = x.width;
    const int cy = k.kh / 2, cx = k.kw / 2;
    Image out(H, W, x.channels);
    for (int c = 0; c < x.channels; ++c) {
        const double* src = x.plane(c);
        double* dst = out.plane(c);
        for (int y = 0; y < H; ++y) {
            for (int x0 = 0; x0 < W; ++x0) {
                double acc = 0.0;
                for (int ky = 0; ky < k.kh; ++ky) {
                    int sy = y - (ky - cy);
                    sy %= H;
                    if (sy < 0) sy += H;
                    const double* srow = src + std::size_t(sy) * W;
                    for (int kx = 0; kx < k.kw; ++kx) {
                        int sx = x0 - (kx - cx);
                        sx %= W;
                        if (sx < 0) sx += W;
                        acc += k.at(ky, kx) * srow[sx];
                    }
                }
                dst[std::size_t(y) * W + x0] = acc;
            }
        }
    }
    return out;
}

// y = blur(x) + n with n ~ N(0, (sigma255/255)^2) i.i.d., drawn from the seed.
// Output is intentionally not clipped.
inline Image degrade(const Image& x, const DegradationSpec& spec) {
    if (!(spec.sigma255 >= 0.0)) throw std::invalid_argument("degrade: sigma255 must be >= 0");
    Image y = blur(x, spec.kernel);
    if (spec.sigma255 > 0.0) {
        Rng rng(spec.seed);
        double s = spec.sigma255 / 255.0;
        for (double& v : y.data) v += s * rng.normal();
    }
    return y;
}

}  // namespace dipblur
