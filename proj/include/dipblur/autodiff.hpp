#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "dipblur/fft.hpp"
#include "dipblur/tensor.hpp"

namespace dipblur::ad {

template <class T>
struct Node {
    Tensor<T> val;
    Tensor<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::function<void(Node&)> back;

    void ensure_grad() {
        if (grad.empty()) grad = Tensor<T>(val.c, val.h, val.w);
    }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> make_param(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(v);
    n->requires_grad = true;
    return n;
}

namespace detail {
inline int reflect_index(int i, int n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
    return i;
}
}  // namespace detail

// Records every op in creation order; backward() replays the closures in
// reverse, which is a valid topological order for a define-by-run graph.
// One tape per optimization run; no shared or global state.
template <class T>
class Tape {
public:
    Var<T> leaf(Tensor<T> v, bool requires_grad = false) {
        auto n = std::make_shared<Node<T>>();
        n->val = std::move(v);
        n->requires_grad = requires_grad;
        nodes_.push_back(n);
        return n;
    }

    void clear() { nodes_.clear(); }

    void backward(const Var<T>& out) {
        if (out->val.size() != 1) throw std::invalid_argument("backward: output must be scalar");
        out->ensure_grad();
        out->grad.v[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node<T>& n = **it;
            if (n.back && n.requires_grad && !n.grad.empty()) n.back(n);
        }
    }

    // ---- elementwise and structural ops ----

    Var<T> sub(const Var<T>& a, const Var<T>& b) {
        if (!a->val.same_shape(b->val)) throw std::invalid_argument("sub: shape mismatch");
        auto out = fresh(a->val.c, a->val.h, a->val.w, a->requires_grad || b->requires_grad);
        for (std::size_t i = 0; i < out->val.size(); ++i)
            out->val.v[i] = a->val.v[i] - b->val.v[i];
        out->back = [a, b](Node<T>& self) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad.v[i] += self.grad.v[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) b->grad.v[i] -= self.grad.v[i];
            }
        };
        return out;
    }

    Var<T> leaky_relu(const Var<T>& x, T slope) {
        auto out = fresh(x->val.c, x->val.h, x->val.w, x->requires_grad);
        for (std::size_t i = 0; i < out->val.size(); ++i) {
            T v = x->val.v[i];
            out->val.v[i] = v > T(0) ? v : slope * v;
        }
        out->back = [x, slope](Node<T>& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                x->grad.v[i] += self.grad.v[i] * (x->val.v[i] > T(0) ? T(1) : slope);
        };
        return out;
    }

    Var<T> sigmoid(const Var<T>& x) {
        auto out = fresh(x->val.c, x->val.h, x->val.w, x->requires_grad);
        for (std::size_t i = 0; i < out->val.size(); ++i)
            out->val.v[i] = T(1) / (T(1) + std::exp(-x->val.v[i]));
        out->back = [x](Node<T>& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                T y = self.val.v[i];
                x->grad.v[i] += self.grad.v[i] * y * (T(1) - y);
            }
        };
        return out;
    }

    Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
        if (a->val.h != b->val.h || a->val.w != b->val.w)
            throw std::invalid_argument("concat: spatial mismatch");
        auto out =
            fresh(a->val.c + b->val.c, a->val.h, a->val.w, a->requires_grad || b->requires_grad);
        std::copy(a->val.v.begin(), a->val.v.end(), out->val.v.begin());
        std::copy(b->val.v.begin(), b->val.v.end(), out->val.v.begin() + a->val.size());
        out->back = [a, b](Node<T>& self) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad.v[i] += self.grad.v[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                std::size_t off = a->val.size();
                for (std::size_t i = 0; i < b->grad.size(); ++i)
                    b->grad.v[i] += self.grad.v[off + i];
            }
        };
        return out;
    }

    Var<T> reflect_pad(const Var<T>& x, int top, int bottom, int left, int right) {
        const int H = x->val.h, W = x->val.w, C = x->val.c;
        if (top >= H || bottom >= H || left >= W || right >= W)
            throw std::invalid_argument("reflect_pad: pad must be smaller than the dimension");
        const int OH = H + top + bottom, OW = W + left + right;
        auto out = fresh(C, OH, OW, x->requires_grad);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < OH; ++y) {
                int sy = detail::reflect_index(y - top, H);
                for (int xx = 0; xx < OW; ++xx)
                    out->val.at(c, y, xx) =
                        x->val.at(c, sy, detail::reflect_index(xx - left, W));
            }
        out->back = [x, top, left](Node<T>& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            const int H = x->val.h, W = x->val.w, C = x->val.c;
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < self.val.h; ++y) {
                    int sy = detail::reflect_index(y - top, H);
                    for (int xx = 0; xx < self.val.w; ++xx)
                        x->grad.at(c, sy, detail::reflect_index(xx - left, W)) +=
                            self.grad.at(c, y, xx);
                }
        };
        return out;
    }

    Var<T> crop(const Var<T>& x, int top, int left, int oh, int ow) {
        if (top < 0 || left < 0 || top + oh > x->val.h || left + ow > x->val.w)
            throw std::invalid_argument("crop: window out of range");
        auto out = fresh(x->val.c, oh, ow, x->requires_grad);
        for (int c = 0; c < x->val.c; ++c)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx)
                    out->val.at(c, y, xx) = x->val.at(c, top + y, left + xx);
        out->back = [x, top, left](Node<T>& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            for (int c = 0; c < x->val.c; ++c)
                for (int y = 0; y < self.val.h; ++y)
                    for (int xx = 0; xx < self.val.w; ++xx)
                        x->grad.at(c, top + y, left + xx) += self.grad.at(c, y, xx);
        };
        return out;
    }

    // ---- neural-net layers ----

    // weights laid out (out_c, in_c, kh*kw); reflection padding of (k-1)/2 so
    // stride 1 preserves the size and stride 2 exactly halves even sizes
    Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int kh, int kw, int stride) {
        const int C = x->val.c, H = x->val.h, W = x->val.w;
        const int OC = w->val.c;
        if (w->val.h != C || w->val.w != kh * kw)
            throw std::invalid_argument("conv2d: weight shape mismatch");
        if (b->val.c != OC || b->val.size() != std::size_t(OC))
            throw std::invalid_argument("conv2d: bias shape mismatch");
        const int py = (kh - 1) / 2, px = (kw - 1) / 2;
        const int PH = H + 2 * py, PW = W + 2 * px;
        const int OH = (PH - kh) / stride + 1, OW = (PW - kw) / stride + 1;

        std::shared_ptr<const Tensor<T>> padded;
        if (py == 0 && px == 0) {
            padded = std::shared_ptr<const Tensor<T>>(x, &x->val);  // 1x1 conv: no halo needed
        } else {
            auto p = std::make_shared<Tensor<T>>(C, PH, PW);
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < PH; ++y) {
                    int sy = detail::reflect_index(y - py, H);
                    const T* srow = &x->val.at(c, sy, 0);
                    T* drow = &p->at(c, y, 0);
                    for (int xx = 0; xx < PW; ++xx)
                        drow[xx] = srow[detail::reflect_index(xx - px, W)];
                }
            padded = p;
        }

        bool rg = x->requires_grad || w->requires_grad || b->requires_grad;
        auto out = fresh(OC, OH, OW, rg);
        // row-blocked: every input row is streamed once per output row while
        // all output channels accumulate from it in cache
        {
            PooledBuffer<T> acc(std::size_t(OC) * OW);
            for (int oy = 0; oy < OH; ++oy) {
                for (int co = 0; co < OC; ++co) {
                    const T bias = b->val.v[co];
                    T* a = acc.data() + std::size_t(co) * OW;
                    for (int ox = 0; ox < OW; ++ox) a[ox] = bias;
                }
                for (int ci = 0; ci < C; ++ci) {
                    const T* ip = padded->plane(ci);
                    for (int ky = 0; ky < kh; ++ky) {
                        const T* src = ip + std::size_t(oy * stride + ky) * PW;
                        for (int co = 0; co < OC; ++co) {
                            const T* wp = &w->val.at(co, ci, ky * kw);
                            T* a = acc.data() + std::size_t(co) * OW;
                            if (kw == 3 && stride == 1) {
                                const T w0 = wp[0], w1 = wp[1], w2 = wp[2];
#pragma omp simd
                                for (int ox = 0; ox < OW; ++ox)
                                    a[ox] += w0 * src[ox] + w1 * src[ox + 1] + w2 * src[ox + 2];
                            } else if (kw == 3 && stride == 2) {
                                const T w0 = wp[0], w1 = wp[1], w2 = wp[2];
#pragma omp simd
                                for (int ox = 0; ox < OW; ++ox)
                                    a[ox] += w0 * src[2 * ox] + w1 * src[2 * ox + 1] +
                                             w2 * src[2 * ox + 2];
                            } else if (kw == 1 && stride == 1) {
                                const T w0 = wp[0];
#pragma omp simd
                                for (int ox = 0; ox < OW; ++ox) a[ox] += w0 * src[ox];
                            } else {
                                for (int kx = 0; kx < kw; ++kx) {
                                    const T wv = wp[kx];
#pragma omp simd
                                    for (int ox = 0; ox < OW; ++ox)
                                        a[ox] += wv * src[ox * stride + kx];
                                }
                            }
                        }
                    }
                }
                for (int co = 0; co < OC; ++co)
                    std::copy_n(acc.data() + std::size_t(co) * OW, OW,
                                out->val.plane(co) + std::size_t(oy) * OW);
            }
        }

        out->back = [x, w, b, padded, kh, kw, stride, py, px, PH, PW](Node<T>& self) {
            const int C = x->val.c, H = x->val.h, W = x->val.w;
            const int OC = self.val.c, OH = self.val.h, OW = self.val.w;
            const Tensor<T>& g = self.grad;

            if (b->requires_grad) {
                b->ensure_grad();
                for (int co = 0; co < OC; ++co) {
                    const T* gp = g.plane(co);
                    const std::size_t n = std::size_t(OH) * OW;
                    T acc = T(0);
#pragma omp simd reduction(+ : acc)
                    for (std::size_t i = 0; i < n; ++i) acc += gp[i];
                    b->grad.v[co] += acc;
                }
            }
            if (w->requires_grad) {
                w->ensure_grad();
                // same row blocking as the forward: one pass over the rows,
                // all (co, ci, tap) partial sums updated while they are hot
                for (int oy = 0; oy < OH; ++oy) {
                    for (int ci = 0; ci < C; ++ci) {
                        const T* ip = padded->plane(ci);
                        for (int ky = 0; ky < kh; ++ky) {
                            const T* src = ip + std::size_t(oy * stride + ky) * PW;
                            for (int co = 0; co < OC; ++co) {
                                const T* gr = g.plane(co) + std::size_t(oy) * OW;
                                T* wgp = &w->grad.at(co, ci, ky * kw);
                                if (kw == 3 && stride == 1) {
                                    T a0 = T(0), a1 = T(0), a2 = T(0);
#pragma omp simd reduction(+ : a0, a1, a2)
                                    for (int ox = 0; ox < OW; ++ox) {
                                        a0 += gr[ox] * src[ox];
                                        a1 += gr[ox] * src[ox + 1];
                                        a2 += gr[ox] * src[ox + 2];
                                    }
                                    wgp[0] += a0;
                                    wgp[1] += a1;
                                    wgp[2] += a2;
                                } else if (kw == 3 && stride == 2) {
                                    T a0 = T(0), a1 = T(0), a2 = T(0);
#pragma omp simd reduction(+ : a0, a1, a2)
                                    for (int ox = 0; ox < OW; ++ox) {
                                        a0 += gr[ox] * src[2 * ox];
                                        a1 += gr[ox] * src[2 * ox + 1];
                                        a2 += gr[ox] * src[2 * ox + 2];
                                    }
                                    wgp[0] += a0;
                                    wgp[1] += a1;
                                    wgp[2] += a2;
                                } else {
                                    for (int kx = 0; kx < kw; ++kx) {
                                        T acc = T(0);
#pragma omp simd reduction(+ : acc)
                                        for (int ox = 0; ox < OW; ++ox)
                                            acc += gr[ox] * src[ox * stride + kx];
                                        wgp[kx] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if (x->requires_grad) {
                x->ensure_grad();
                Tensor<T> dp(C, PH, PW);
                for (int oy = 0; oy < OH; ++oy) {
                    for (int ci = 0; ci < C; ++ci) {
                        T* dpp = dp.plane(ci);
                        for (int ky = 0; ky < kh; ++ky) {
                            T* drow = dpp + std::size_t(oy * stride + ky) * PW;
                            for (int co = 0; co < OC; ++co) {
                                const T* gr = g.plane(co) + std::size_t(oy) * OW;
                                const T* wp = &w->val.at(co, ci, ky * kw);
                                for (int kx = 0; kx < kw; ++kx) {
                                    const T wv = wp[kx];
                                    T* dst = drow + kx;
                                    if (stride == 1) {
#pragma omp simd
                                        for (int ox = 0; ox < OW; ++ox) dst[ox] += wv * gr[ox];
                                    } else {
#pragma omp simd
                                        for (int ox = 0; ox < OW; ++ox)
                                            dst[ox * stride] += wv * gr[ox];
                                    }
                                }
                            }
                        }
                    }
                }
                // fold padded gradient back through the reflection
                for (int ci = 0; ci < C; ++ci)
                    for (int y = 0; y < PH; ++y) {
                        int sy = detail::reflect_index(y - py, H);
                        const T* srow = dp.plane(ci) + std::size_t(y) * PW;
                        for (int xx = 0; xx < PW; ++xx)
                            x->grad.at(ci, sy, detail::reflect_index(xx - px, W)) += srow[xx];
                    }
            }
        };
        return out;
    }

    // Per-channel normalization over the spatial extent with learned affine;
    // batch-of-one semantics of the usual 2-D batch norm.
    Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                      T eps = T(1e-5)) {
        const int C = x->val.c, H = x->val.h, W = x->val.w;
        if (gamma->val.size() != std::size_t(C) || beta->val.size() != std::size_t(C))
            throw std::invalid_argument("batch_norm: affine shape mismatch");
        const std::size_t N = std::size_t(H) * W;
        auto xhat = std::make_shared<Tensor<T>>(C, H, W);
        auto inv_std = std::make_shared<std::vector<T>>(C);
        bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
        auto out = fresh(C, H, W, rg);
        for (int c = 0; c < C; ++c) {
            const T* xp = x->val.plane(c);
            T mean = T(0);
#pragma omp simd reduction(+ : mean)
            for (std::size_t i = 0; i < N; ++i) mean += xp[i];
            mean /= T(N);
            T var = T(0);
#pragma omp simd reduction(+ : var)
            for (std::size_t i = 0; i < N; ++i) {
                T d = xp[i] - mean;
                var += d * d;
            }
            var /= T(N);
            T istd = T(1) / std::sqrt(var + eps);
            (*inv_std)[c] = istd;
            T* hp = xhat->plane(c);
            T* op = out->val.plane(c);
            const T gc = gamma->val.v[c], bc = beta->val.v[c];
            for (std::size_t i = 0; i < N; ++i) {
                hp[i] = (xp[i] - mean) * istd;
                op[i] = gc * hp[i] + bc;
            }
        }
        out->back = [x, gamma, beta, xhat, inv_std](Node<T>& self) {
            const int C = x->val.c;
            const std::size_t N = std::size_t(x->val.h) * x->val.w;
            for (int c = 0; c < C; ++c) {
                const T* gp = self.grad.plane(c);
                const T* hp = xhat->plane(c);
                T sum_g = T(0), sum_gh = T(0);
#pragma omp simd reduction(+ : sum_g, sum_gh)
                for (std::size_t i = 0; i < N; ++i) {
                    sum_g += gp[i];
                    sum_gh += gp[i] * hp[i];
                }
                if (gamma->requires_grad) {
                    gamma->ensure_grad();
                    gamma->grad.v[c] += sum_gh;
                }
                if (beta->requires_grad) {
                    beta->ensure_grad();
                    beta->grad.v[c] += sum_g;
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    T* xg = x->grad.plane(c);
                    const T k = gamma->val.v[c] * (*inv_std)[c];
                    const T mg = sum_g / T(N), mgh = sum_gh / T(N);
                    for (std::size_t i = 0; i < N; ++i)
                        xg[i] += k * (gp[i] - mg - hp[i] * mgh);
                }
            }
        };
        return out;
    }

    // 2x upsampling; bilinear uses half-pixel centers, nearest repeats
    Var<T> upsample2x(const Var<T>& x, bool bilinear) {
        const int C = x->val.c, H = x->val.h, W = x->val.w;
        const int OH = 2 * H, OW = 2 * W;
        auto out = fresh(C, OH, OW, x->requires_grad);
        if (!bilinear) {
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < OH; ++y)
                    for (int xx = 0; xx < OW; ++xx)
                        out->val.at(c, y, xx) = x->val.at(c, y / 2, xx / 2);
            out->back = [x](Node<T>& self) {
                if (!x->requires_grad) return;
                x->ensure_grad();
                for (int c = 0; c < x->val.c; ++c)
                    for (int y = 0; y < self.val.h; ++y)
                        for (int xx = 0; xx < self.val.w; ++xx)
                            x->grad.at(c, y / 2, xx / 2) += self.grad.at(c, y, xx);
            };
            return out;
        }
        auto idx = std::make_shared<std::vector<int>>();
        auto wgt = std::make_shared<std::vector<T>>();
        auto fill = [](int n, std::vector<int>& i0, std::vector<T>& w0) {
            for (int o = 0; o < 2 * n; ++o) {
                double src = (o + 0.5) / 2.0 - 0.5;
                int lo = int(std::floor(src));
                double f = src - lo;
                int a = std::clamp(lo, 0, n - 1);
                int bI = std::clamp(lo + 1, 0, n - 1);
                i0.push_back(a);
                i0.push_back(bI);
                w0.push_back(T(1.0 - f));
                w0.push_back(T(f));
            }
        };
        std::vector<int> yi, xi;
        std::vector<T> yw, xw;
        fill(H, yi, yw);
        fill(W, xi, xw);
        for (int c = 0; c < C; ++c) {
            const T* ip = x->val.plane(c);
            T* op = out->val.plane(c);
            for (int y = 0; y < OH; ++y) {
                int y0 = yi[2 * y], y1 = yi[2 * y + 1];
                T wy0 = yw[2 * y], wy1 = yw[2 * y + 1];
                for (int xx = 0; xx < OW; ++xx) {
                    int x0 = xi[2 * xx], x1 = xi[2 * xx + 1];
                    T wx0 = xw[2 * xx], wx1 = xw[2 * xx + 1];
                    op[std::size_t(y) * OW + xx] =
                        wy0 * (wx0 * ip[std::size_t(y0) * W + x0] + wx1 * ip[std::size_t(y0) * W + x1]) +
                        wy1 * (wx0 * ip[std::size_t(y1) * W + x0] + wx1 * ip[std::size_t(y1) * W + x1]);
                }
            }
        }
        // keep tables for backward
        idx->insert(idx->end(), yi.begin(), yi.end());
        idx->insert(idx->end(), xi.begin(), xi.end());
        wgt->insert(wgt->end(), yw.begin(), yw.end());
        wgt->insert(wgt->end(), xw.begin(), xw.end());
        out->back = [x, idx, wgt](Node<T>& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            const int H = x->val.h, W = x->val.w, OH = self.val.h, OW = self.val.w;
            const int* yi = idx->data();
            const int* xi = idx->data() + 2 * OH;
            const T* yw = wgt->data();
            const T* xw = wgt->data() + 2 * OH;
            for (int c = 0; c < x->val.c; ++c) {
                T* xg = x->grad.plane(c);
                const T* gp = self.grad.plane(c);
                for (int y = 0; y < OH; ++y) {
                    int y0 = yi[2 * y], y1 = yi[2 * y + 1];
                    T wy0 = yw[2 * y], wy1 = yw[2 * y + 1];
                    for (int xx = 0; xx < OW; ++xx) {
                        T g = gp[std::size_t(y) * OW + xx];
                        int x0 = xi[2 * xx], x1 = xi[2 * xx + 1];
                        xg[std::size_t(y0) * W + x0] += wy0 * xw[2 * xx] * g;
                        xg[std::size_t(y0) * W + x1] += wy0 * xw[2 * xx + 1] * g;
                        xg[std::size_t(y1) * W + x0] += wy1 * xw[2 * xx] * g;
                        xg[std::size_t(y1) * W + x1] += wy1 * xw[2 * xx + 1] * g;
                    }
                }
            }
        };
        return out;
    }

    // ---- frequency-domain ops (filters are constants w.r.t. the graph) ----

    // circular convolution via a cached OTF; adjoint multiplies the
    // conjugate spectrum
    Var<T> circ_blur(const Var<T>& x, std::shared_ptr<const fft::Plan2d<T>> plan,
                     std::shared_ptr<const std::vector<std::complex<T>>> otf) {
        auto out = fresh(x->val.c, x->val.h, x->val.w, x->requires_grad);
        spectral_apply(x->val, out->val, *plan, [&](std::complex<T>* b) {
            for (std::size_t i = 0; i < otf->size(); ++i) b[i] *= (*otf)[i];
        });
        out->back = [x, plan, otf](Node<T>& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            Tensor<T> dx(x->val.c, x->val.h, x->val.w);
            spectral_apply(self.grad, dx, *plan, [&](std::complex<T>* b) {
                for (std::size_t i = 0; i < otf->size(); ++i) b[i] *= std::conj((*otf)[i]);
            });
            for (std::size_t i = 0; i < dx.size(); ++i) x->grad.v[i] += dx.v[i];
        };
        return out;
    }

    // real symmetric spectral filter; self-adjoint
    Var<T> freq_filter(const Var<T>& x, std::shared_ptr<const fft::Plan2d<T>> plan,
                       std::shared_ptr<const std::vector<T>> filter) {
        auto out = fresh(x->val.c, x->val.h, x->val.w, x->requires_grad);
        spectral_apply(x->val, out->val, *plan, [&](std::complex<T>* b) {
            for (std::size_t i = 0; i < filter->size(); ++i) b[i] *= (*filter)[i];
        });
        out->back = [x, plan, filter](Node<T>& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            Tensor<T> dx(x->val.c, x->val.h, x->val.w);
            spectral_apply(self.grad, dx, *plan, [&](std::complex<T>* b) {
                for (std::size_t i = 0; i < filter->size(); ++i) b[i] *= (*filter)[i];
            });
            for (std::size_t i = 0; i < dx.size(); ++i) x->grad.v[i] += dx.v[i];
        };
        return out;
    }

    // Fused fidelity: 1/2 || idft( filter .* (Y - otf .* dft(x)) ) ||^2
    // evaluated in the spectrum via Parseval, one forward transform per
    // channel and one inverse transform per channel in the backward pass.
    // A null filter means the identity (the plain least-squares residual).
    Var<T> spectral_residual_loss(const Var<T>& x, std::shared_ptr<const fft::Plan2d<T>> plan,
                                  std::shared_ptr<const std::vector<std::complex<T>>> otf,
                                  std::shared_ptr<const std::vector<T>> filter,
                                  std::shared_ptr<const std::vector<std::complex<T>>> y_spec) {
        const int C = x->val.c, H = x->val.h, W = x->val.w;
        const std::size_t n = std::size_t(H) * W;
        if (plan->height() != H || plan->width() != W || otf->size() != n ||
            y_spec->size() != n * C || (filter && filter->size() != n))
            throw std::invalid_argument("spectral_residual_loss: shape mismatch");
        auto vres = std::make_shared<PooledBuffer<std::complex<T>>>(n * C);
        auto out = fresh(1, 1, 1, x->requires_grad);
        T acc = T(0);
        PooledBuffer<std::complex<T>> buf(n);
        for (int c = 0; c < C; ++c) {
            const T* xp = x->val.plane(c);
            for (std::size_t i = 0; i < n; ++i) buf[i] = {xp[i], T(0)};
            plan->forward(buf.data());
            const std::complex<T>* ys = y_spec->data() + c * n;
            std::complex<T>* v = vres->data() + c * n;
            if (filter) {
                const T* g = filter->data();
                for (std::size_t i = 0; i < n; ++i) v[i] = g[i] * (ys[i] - (*otf)[i] * buf[i]);
            } else {
                for (std::size_t i = 0; i < n; ++i) v[i] = ys[i] - (*otf)[i] * buf[i];
            }
            T ssq = T(0);
#pragma omp simd reduction(+ : ssq)
            for (std::size_t i = 0; i < n; ++i)
                ssq += v[i].real() * v[i].real() + v[i].imag() * v[i].imag();
            acc += ssq / T(2 * n);
        }
        out->val.v[0] = acc;
        out->back = [x, plan, otf, filter, vres](Node<T>& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            const int C = x->val.c, H = x->val.h, W = x->val.w;
            const std::size_t n = std::size_t(H) * W;
            const T gl = self.grad.v[0];
            PooledBuffer<std::complex<T>> buf(n);
            for (int c = 0; c < C; ++c) {
                const std::complex<T>* v = vres->data() + c * n;
                if (filter) {
                    const T* g = filter->data();
                    for (std::size_t i = 0; i < n; ++i)
                        buf[i] = std::conj((*otf)[i]) * g[i] * v[i];
                } else {
                    for (std::size_t i = 0; i < n; ++i) buf[i] = std::conj((*otf)[i]) * v[i];
                }
                plan->inverse(buf.data());
                T re2 = T(0), im2 = T(0);
                for (std::size_t i = 0; i < n; ++i) {
                    re2 += buf[i].real() * buf[i].real();
                    im2 += buf[i].imag() * buf[i].imag();
                }
                if (im2 > std::numeric_limits<T>::epsilon() * re2 && im2 > T(1e-30))
                    throw std::runtime_error("spectral_residual_loss: symmetry broken");
                T* xg = x->grad.plane(c);
                for (std::size_t i = 0; i < n; ++i) xg[i] -= gl * buf[i].real();
            }
        };
        return out;
    }

    // ---- reductions ----

    Var<T> half_sum_squares(const Var<T>& x) {
        auto out = fresh(1, 1, 1, x->requires_grad);
        T acc = T(0);
        const T* xp = x->val.data();
        const std::size_t n = x->val.size();
#pragma omp simd reduction(+ : acc)
        for (std::size_t i = 0; i < n; ++i) acc += xp[i] * xp[i];
        out->val.v[0] = acc / T(2);
        out->back = [x](Node<T>& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            const T g = self.grad.v[0];
            for (std::size_t i = 0; i < x->val.size(); ++i) x->grad.v[i] += g * x->val.v[i];
        };
        return out;
    }

    // anisotropic total variation, non-wrapping neighbor differences,
    // summed over channels; subgradient 0 at exact ties
    Var<T> tv_penalty(const Var<T>& x) {
        const int C = x->val.c, H = x->val.h, W = x->val.w;
        auto out = fresh(1, 1, 1, x->requires_grad);
        T acc = T(0);
        for (int c = 0; c < C; ++c) {
            const T* p = x->val.plane(c);
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    if (y + 1 < H) acc += std::abs(p[std::size_t(y + 1) * W + xx] - p[std::size_t(y) * W + xx]);
                    if (xx + 1 < W) acc += std::abs(p[std::size_t(y) * W + xx + 1] - p[std::size_t(y) * W + xx]);
                }
        }
        out->val.v[0] = acc;
        out->back = [x](Node<T>& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            const int C = x->val.c, H = x->val.h, W = x->val.w;
            const T g = self.grad.v[0];
            for (int c = 0; c < C; ++c) {
                const T* p = x->val.plane(c);
                T* xg = x->grad.plane(c);
                auto sgn = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) {
                        std::size_t i = std::size_t(y) * W + xx;
                        if (y + 1 < H) {
                            T s = g * sgn(p[i + W] - p[i]);
                            xg[i + W] += s;
                            xg[i] -= s;
                        }
                        if (xx + 1 < W) {
                            T s = g * sgn(p[i + 1] - p[i]);
                            xg[i + 1] += s;
                            xg[i] -= s;
                        }
                    }
            }
        };
        return out;
    }

    // a + beta * b for scalar nodes
    Var<T> add_scaled(const Var<T>& a, const Var<T>& b, T beta) {
        if (a->val.size() != 1 || b->val.size() != 1)
            throw std::invalid_argument("add_scaled: scalar nodes expected");
        auto out = fresh(1, 1, 1, a->requires_grad || b->requires_grad);
        out->val.v[0] = a->val.v[0] + beta * b->val.v[0];
        out->back = [a, b, beta](Node<T>& self) {
            const T g = self.grad.v[0];
            if (a->requires_grad) {
                a->ensure_grad();
                a->grad.v[0] += g;
            }
            if (b->requires_grad) {
                b->ensure_grad();
                b->grad.v[0] += beta * g;
            }
        };
        return out;
    }

private:
    Var<T> fresh(int c, int h, int w, bool rg) {
        auto n = std::make_shared<Node<T>>();
        n->val = Tensor<T>(c, h, w);
        n->requires_grad = rg;
        nodes_.push_back(n);
        return n;
    }

    template <class Mul>
    static void spectral_apply(const Tensor<T>& in, Tensor<T>& out, const fft::Plan2d<T>& plan,
                               Mul&& mul) {
        const std::size_t n = std::size_t(in.h) * in.w;
        if (plan.height() != in.h || plan.width() != in.w)
            throw std::invalid_argument("spectral op: plan shape mismatch");
        PooledBuffer<std::complex<T>> buf(n);
        for (int c = 0; c < in.c; ++c) {
            const T* src = in.plane(c);
            for (std::size_t i = 0; i < n; ++i) buf[i] = {src[i], T(0)};
            plan.forward(buf.data());
            mul(buf.data());
            plan.inverse(buf.data());
            T re2 = T(0), im2 = T(0);
            for (std::size_t i = 0; i < n; ++i) {
                re2 += buf[i].real() * buf[i].real();
                im2 += buf[i].imag() * buf[i].imag();
            }
            if (im2 > std::numeric_limits<T>::epsilon() * re2 && im2 > T(1e-30))
                throw std::runtime_error("spectral op: filter symmetry broken");
            T* dst = out.plane(c);
            for (std::size_t i = 0; i < n; ++i) dst[i] = buf[i].real();
        }
    }

    std::vector<Var<T>> nodes_;
};

}  // namespace dipblur::ad
