#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "dipblur/pool.hpp"

namespace dipblur {

// Planar (channel, row, column) array. Also used for conv weights, where the
// layout is (out_channel, in_channel, ky*kw) with the kernel window flattened.
// Storage comes from the thread-local buffer pool.
template <class T>
struct Tensor {
    int c = 0, h = 0, w = 0;
    PooledBuffer<T> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(std::size_t(c_) * h_ * w_, T(0)) {}

    std::size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    T& at(int ci, int y, int x) { return v[(std::size_t(ci) * h + y) * w + x]; }
    const T& at(int ci, int y, int x) const { return v[(std::size_t(ci) * h + y) * w + x]; }

    T* plane(int ci) { return v.data() + std::size_t(ci) * h * w; }
    const T* plane(int ci) const { return v.data() + std::size_t(ci) * h * w; }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }

    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(c, h, w);
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = U(v[i]);
        return out;
    }
};

}  // namespace dipblur
