#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include "dipblur/fft.hpp"
#include "dipblur/image.hpp"

namespace dipblur {

// DFT of the kernel zero-padded to the image grid and circularly shifted so
// the center tap sits at index (0,0). Multiplying spectra by it equals
// circular convolution with the kernel.
struct FrequencyResponse {
    int h = 0, w = 0;
    std::vector<std::complex<double>> values;  // row-major h*w
    std::string kernel_name;

    std::complex<double> at(int y, int x) const { return values[std::size_t(y) * w + x]; }
};

inline FrequencyResponse psf_to_otf(const BlurKernel& k, int h, int w) {
    if (k.kh > h || k.kw > w) throw std::invalid_argument("psf_to_otf: kernel larger than shape");
    FrequencyResponse r;
    r.h = h;
    r.w = w;
    r.kernel_name = k.name;
    r.values.assign(std::size_t(h) * w, {0.0, 0.0});
    const int cy = k.kh / 2, cx = k.kw / 2;
    for (int y = 0; y < k.kh; ++y) {
        for (int x = 0; x < k.kw; ++x) {
            int py = ((y - cy) % h + h) % h;
            int px = ((x - cx) % w + w) % w;
            r.values[std::size_t(py) * w + px] = {k.at(y, x), 0.0};
        }
    }
    fft::Plan2d<double> plan(h, w);
    plan.forward(r.values.data());
    return r;
}

// Elementwise 1/sqrt(|F(h)|^2 + eps1*sigma^2 + eps2). Real, positive and
// conjugate-symmetric; realizes the damped inverse square root of A*A^T.
// sigma255 is kept in 8-bit units, matching how eps1/eps2 are tuned.
struct BPFilter {
    int h = 0, w = 0;
    std::vector<double> values;
    double eps1 = 0.0, eps2 = 0.0, sigma255 = 0.0;

    double at(int y, int x) const { return values[std::size_t(y) * w + x]; }
    double max_value() const {
        double m = 0.0;
        for (double v : values) m = std::max(m, v);
        return m;
    }
    double min_value() const {
        double m = values.empty() ? 0.0 : values[0];
        for (double v : values) m = std::min(m, v);
        return m;
    }
};

inline BPFilter make_bp_filter(const FrequencyResponse& otf, double sigma255, double eps1,
                               double eps2) {
    if (!(eps1 >= 0.0) || !(eps2 >= 0.0) || !(sigma255 >= 0.0))
        throw std::invalid_argument("make_bp_filter: damping parameters must be >= 0");
    const double damp = eps1 * sigma255 * sigma255 + eps2;
    BPFilter f;
    f.h = otf.h;
    f.w = otf.w;
    f.eps1 = eps1;
    f.eps2 = eps2;
    f.sigma255 = sigma255;
    f.values.resize(otf.values.size());
    for (std::size_t i = 0; i < otf.values.size(); ++i) {
        double m2 = std::norm(otf.values[i]);
        if (damp == 0.0 && m2 < 1e-24)
            throw std::invalid_argument(
                "make_bp_filter: degenerate damping, |F(h)| vanishes with zero eps terms");
        f.values[i] = 1.0 / std::sqrt(m2 + damp);
    }
    return f;
}

namespace detail {

// Per-channel IDFT(filter .* DFT(r)). The filter callback multiplies the
// spectrum in place.
template <class Filt>
Image apply_spectral(const Image& r, int fh, int fw, Filt&& mul) {
    if (r.height != fh || r.width != fw)
        throw std::invalid_argument("apply_frequency_filter: shape mismatch");
    fft::Plan2d<double> plan(fh, fw);
    const std::size_t n = std::size_t(fh) * fw;
    Image out(r.height, r.width, r.channels);
    std::vector<std::complex<double>> buf(n);
    for (int c = 0; c < r.channels; ++c) {
        const double* src = r.plane(c);
        for (std::size_t i = 0; i < n; ++i) buf[i] = {src[i], 0.0};
        plan.forward(buf.data());
        mul(buf.data());
        plan.inverse(buf.data());
        double re2 = 0.0, im2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            re2 += buf[i].real() * buf[i].real();
            im2 += buf[i].imag() * buf[i].imag();
        }
        if (im2 > 1e-16 * re2 && im2 > 1e-300)
            throw std::runtime_error(
                "apply_frequency_filter: excessive imaginary residue, filter symmetry broken");
        double* dst = out.plane(c);
        for (std::size_t i = 0; i < n; ++i) dst[i] = buf[i].real();
    }
    return out;
}

}  // namespace detail

inline Image apply_frequency_filter(const Image& r, const BPFilter& f) {
    return detail::apply_spectral(r, f.h, f.w, [&](std::complex<double>* buf) {
        for (std::size_t i = 0; i < f.values.size(); ++i) buf[i] *= f.values[i];
    });
}

inline Image apply_frequency_filter(const Image& r, const FrequencyResponse& f) {
    return detail::apply_spectral(r, f.h, f.w, [&](std::complex<double>* buf) {
        for (std::size_t i = 0; i < f.values.size(); ++i) buf[i] *= f.values[i];
    });
}

// Circular convolution through the OTF; equals blur() up to float tolerance.
inline Image blur_via_otf(const Image& x, const FrequencyResponse& otf) {
    return apply_frequency_filter(x, otf);
}

}  // namespace dipblur
