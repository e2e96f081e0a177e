#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "dipblur/pool.hpp"

namespace dipblur::fft {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t m = 1;
    while (m < n) m <<= 1;
    return m;
}

// 1-D complex transform of a fixed length. Power-of-two lengths run the
// iterative radix-2 kernel directly; everything else goes through Bluestein's
// chirp-z reduction to a power-of-two convolution. Twiddles are precomputed
// at plan construction, so a plan is cheap to reuse and safe to share
// read-only between threads.
template <class T>
class Plan1d {
public:
    explicit Plan1d(std::size_t n) : n_(n) {
        if (n == 0) throw std::invalid_argument("fft: zero length");
        if (is_pow2(n)) {
            init_pow2_tables(n, tw_);
        } else {
            m_ = next_pow2(2 * n - 1);
            init_pow2_tables(m_, twm_);
            // chirp_[k] = exp(-i*pi*k^2/n), with k^2 reduced mod 2n to keep
            // the argument small and the table exact for large k
            chirp_.resize(n);
            for (std::size_t k = 0; k < n; ++k) {
                std::size_t k2 = (k * k) % (2 * n);
                long double ang = -(long double)(3.141592653589793238462643383279502884L) * (long double)k2 / (long double)n;
                chirp_[k] = std::complex<T>(T(std::cos((double)ang)), T(std::sin((double)ang)));
            }
            bfft_.assign(m_, std::complex<T>(0));
            bfft_[0] = std::complex<T>(1);
            for (std::size_t k = 1; k < n; ++k) {
                std::complex<T> b = std::conj(chirp_[k]);
                bfft_[k] = b;
                bfft_[m_ - k] = b;
            }
            pow2_inplace(bfft_.data(), m_, twm_);
        }
    }

    std::size_t length() const { return n_; }

    void forward(std::complex<T>* a) const {
        if (m_ == 0) {
            pow2_inplace(a, n_, tw_);
        } else {
            bluestein(a);
        }
    }

    void inverse(std::complex<T>* a) const {
        for (std::size_t i = 0; i < n_; ++i) a[i] = std::conj(a[i]);
        forward(a);
        T s = T(1) / T(n_);
        for (std::size_t i = 0; i < n_; ++i) a[i] = std::conj(a[i]) * s;
    }

private:
    static void init_pow2_tables(std::size_t n, std::vector<std::complex<T>>& tw) {
        tw.resize(n / 2);
        for (std::size_t k = 0; k < n / 2; ++k) {
            long double ang = -2.0L * 3.141592653589793238462643383279502884L * (long double)k / (long double)n;
            tw[k] = std::complex<T>(T(std::cos((double)ang)), T(std::sin((double)ang)));
        }
    }

    static void pow2_inplace(std::complex<T>* a, std::size_t n, const std::vector<std::complex<T>>& tw) {
        if (n == 1) return;
        // bit reversal
        for (std::size_t i = 1, j = 0; i < n; ++i) {
            std::size_t bit = n >> 1;
            for (; j & bit; bit >>= 1) j ^= bit;
            j ^= bit;
            if (i < j) std::swap(a[i], a[j]);
        }
        for (std::size_t len = 2; len <= n; len <<= 1) {
            std::size_t half = len >> 1;
            std::size_t step = n / len;
            for (std::size_t i = 0; i < n; i += len) {
                for (std::size_t j = 0; j < half; ++j) {
                    std::complex<T> w = tw[j * step];
                    std::complex<T> u = a[i + j];
                    std::complex<T> t = a[i + j + half] * w;
                    a[i + j] = u + t;
                    a[i + j + half] = u - t;
                }
            }
        }
    }

    void bluestein(std::complex<T>* a) const {
        PooledBuffer<std::complex<T>> tmp(m_, std::complex<T>(0));
        for (std::size_t k = 0; k < n_; ++k) tmp[k] = a[k] * chirp_[k];
        pow2_inplace(tmp.data(), m_, twm_);
        for (std::size_t k = 0; k < m_; ++k) tmp[k] *= bfft_[k];
        // inverse pow2 transform via conjugation
        for (std::size_t k = 0; k < m_; ++k) tmp[k] = std::conj(tmp[k]);
        pow2_inplace(tmp.data(), m_, twm_);
        T s = T(1) / T(m_);
        for (std::size_t k = 0; k < n_; ++k) a[k] = std::conj(tmp[k]) * s * chirp_[k];
    }

    std::size_t n_ = 0;
    std::size_t m_ = 0;  // 0 means plain power-of-two path
    std::vector<std::complex<T>> tw_, twm_, chirp_, bfft_;
};

// Row-major H x W complex transform, rows then columns.
template <class T>
class Plan2d {
public:
    Plan2d(int h, int w) : h_(h), w_(w), row_(std::size_t(w)), col_(std::size_t(h)) {}

    int height() const { return h_; }
    int width() const { return w_; }

    void forward(std::complex<T>* a) const { transform(a, /*inverse=*/false); }
    void inverse(std::complex<T>* a) const { transform(a, /*inverse=*/true); }

private:
    void transform(std::complex<T>* a, bool inverse) const {
        for (int y = 0; y < h_; ++y) {
            std::complex<T>* row = a + std::size_t(y) * w_;
            inverse ? row_.inverse(row) : row_.forward(row);
        }
        PooledBuffer<std::complex<T>> colbuf(h_);
        for (int x = 0; x < w_; ++x) {
            for (int y = 0; y < h_; ++y) colbuf[y] = a[std::size_t(y) * w_ + x];
            inverse ? col_.inverse(colbuf.data()) : col_.forward(colbuf.data());
            for (int y = 0; y < h_; ++y) a[std::size_t(y) * w_ + x] = colbuf[y];
        }
    }

    int h_, w_;
    Plan1d<T> row_, col_;
};

}  // namespace dipblur::fft
