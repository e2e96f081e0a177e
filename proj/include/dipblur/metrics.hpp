#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "dipblur/image.hpp"

namespace dipblur {

struct MetricResult {
    double psnr_db = 0.0;  // +infinity when MSE is exactly zero
    double ssim = 0.0;
};

// Single MSE over all pixels and channels, not luminance-only.
inline double psnr(const Image& a, const Image& b, double peak = 1.0) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
    double se = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        se += d * d;
    }
    double mse = se / double(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline std::vector<double> ssim_window(int size = 11, double sigma = 1.5) {
    std::vector<double> w(size);
    int r = size / 2;
    double s = 0.0;
    for (int i = 0; i < size; ++i) {
        w[i] = std::exp(-double(i - r) * (i - r) / (2.0 * sigma * sigma));
        s += w[i];
    }
    for (double& v : w) v /= s;
    return w;
}

// separable valid-mode filtering with a 1-D window
inline std::vector<double> filter_valid(const double* src, int h, int w,
                                        const std::vector<double>& win) {
    const int k = int(win.size());
    const int oh = h - k + 1, ow = w - k + 1;
    std::vector<double> tmp(std::size_t(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += win[i] * src[std::size_t(y) * w + x + i];
            tmp[std::size_t(y) * ow + x] = acc;
        }
    std::vector<double> out(std::size_t(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += win[i] * tmp[std::size_t(y + i) * ow + x];
            out[std::size_t(y) * ow + x] = acc;
        }
    return out;
}

}  // namespace detail

// Mean local SSIM, 11x11 Gaussian window (std 1.5), K1=0.01, K2=0.03,
// dynamic range 1.0. Per channel, then averaged.
inline double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
    const int win_size = 11;
    if (a.height < win_size || a.width < win_size)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const auto win = detail::ssim_window(win_size, 1.5);
    const int H = a.height, W = a.width;

    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        const double* pa = a.plane(c);
        const double* pb = b.plane(c);
        std::vector<double> aa(std::size_t(H) * W), bb(aa.size()), ab(aa.size());
        for (std::size_t i = 0; i < aa.size(); ++i) {
            aa[i] = pa[i] * pa[i];
            bb[i] = pb[i] * pb[i];
            ab[i] = pa[i] * pb[i];
        }
        auto mu_a = detail::filter_valid(pa, H, W, win);
        auto mu_b = detail::filter_valid(pb, H, W, win);
        auto m_aa = detail::filter_valid(aa.data(), H, W, win);
        auto m_bb = detail::filter_valid(bb.data(), H, W, win);
        auto m_ab = detail::filter_valid(ab.data(), H, W, win);
        double acc = 0.0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            double ma = mu_a[i], mb = mu_b[i];
            double va = m_aa[i] - ma * ma;
            double vb = m_bb[i] - mb * mb;
            double cov = m_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / double(mu_a.size());
    }
    return total / double(a.channels);
}

inline MetricResult compute_metrics(const Image& a, const Image& b) {
    return {psnr(a, b), ssim(a, b)};
}

}  // namespace dipblur
