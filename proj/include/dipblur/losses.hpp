#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "dipblur/autodiff.hpp"
#include "dipblur/frequency.hpp"
#include "dipblur/image.hpp"

namespace dipblur {

enum class Fidelity { LS, BP };

inline Fidelity parse_fidelity(const std::string& s) {
    if (s == "ls" || s == "LS") return Fidelity::LS;
    if (s == "bp" || s == "BP") return Fidelity::BP;
    throw std::invalid_argument("unknown fidelity: " + s);
}

// All loss hyperparameters in one place. sigma255 enters the BP damping as
// eps1*sigma255^2 in 8-bit units; that is the scale the eps values are tuned
// against.
struct LossSpec {
    Fidelity fidelity = Fidelity::LS;
    double eps1 = 0.01;
    double eps2 = 1e-3;
    double sigma255 = 0.0;
    double tv_weight = 0.0;

    void validate() const {
        if (!(tv_weight >= 0.0)) throw std::invalid_argument("LossSpec: tv_weight must be >= 0");
        if (!(eps1 >= 0.0) || !(eps2 >= 0.0) || !(sigma255 >= 0.0))
            throw std::invalid_argument("LossSpec: eps/sigma must be >= 0");
    }
};

namespace detail {

template <class T>
Tensor<T> image_to_tensor(const Image& img) {
    Tensor<T> t(img.channels, img.height, img.width);
    for (std::size_t i = 0; i < img.data.size(); ++i) t.v[i] = T(img.data[i]);
    return t;
}

inline Image tensor_to_image(const Tensor<double>& t) {
    Image img(t.h, t.w, t.c);
    img.data.assign(t.v.begin(), t.v.end());
    return img;
}

}  // namespace detail

// Frequency-domain constants of one (kernel, observation) pair, shared by
// every loss evaluation of a run: the fft plan, the OTF, the BP weighting
// filter and the observation's per-channel spectrum.
template <class T>
struct LossOperators {
    std::shared_ptr<const fft::Plan2d<T>> plan;
    std::shared_ptr<const std::vector<std::complex<T>>> otf;
    std::shared_ptr<const std::vector<T>> bp_filter;  // null for LS
    std::shared_ptr<const std::vector<std::complex<T>>> y_spectrum;
};

template <class T>
LossOperators<T> make_loss_operators(const BlurKernel& kernel, const Image& y,
                                     const LossSpec& spec) {
    spec.validate();
    const int h = y.height, w = y.width;
    LossOperators<T> ops;
    auto plan = std::make_shared<fft::Plan2d<T>>(h, w);
    FrequencyResponse otf = psf_to_otf(kernel, h, w);
    auto cv = std::make_shared<std::vector<std::complex<T>>>(otf.values.size());
    for (std::size_t i = 0; i < otf.values.size(); ++i)
        (*cv)[i] = std::complex<T>(T(otf.values[i].real()), T(otf.values[i].imag()));
    ops.otf = std::move(cv);
    if (spec.fidelity == Fidelity::BP) {
        BPFilter f = make_bp_filter(otf, spec.sigma255, spec.eps1, spec.eps2);
        auto fv = std::make_shared<std::vector<T>>(f.values.size());
        for (std::size_t i = 0; i < f.values.size(); ++i) (*fv)[i] = T(f.values[i]);
        ops.bp_filter = std::move(fv);
    }
    const std::size_t n = std::size_t(h) * w;
    auto ys = std::make_shared<std::vector<std::complex<T>>>(n * y.channels);
    for (int c = 0; c < y.channels; ++c) {
        const double* src = y.plane(c);
        std::complex<T>* dst = ys->data() + c * n;
        for (std::size_t i = 0; i < n; ++i) dst[i] = {T(src[i]), T(0)};
        plan->forward(dst);
    }
    ops.y_spectrum = std::move(ys);
    ops.plan = std::move(plan);
    return ops;
}

// fidelity(x,y) + tv_weight * tv(x), built on the tape so gradients flow
// back into x (and through it into network parameters)
template <class T>
ad::Var<T> total_loss_graph(ad::Tape<T>& tape, const ad::Var<T>& x, const LossOperators<T>& ops,
                            const LossSpec& spec) {
    if (spec.fidelity == Fidelity::BP && !ops.bp_filter)
        throw std::invalid_argument("total_loss: BP filter missing");
    auto fid = tape.spectral_residual_loss(
        x, ops.plan, ops.otf, spec.fidelity == Fidelity::BP ? ops.bp_filter : nullptr,
        ops.y_spectrum);
    if (spec.tv_weight > 0.0) {
        auto tv = tape.tv_penalty(x);
        return tape.add_scaled(fid, tv, T(spec.tv_weight));
    }
    return fid;
}

namespace detail {

struct LossEval {
    double value = 0.0;
    Image grad;  // with respect to x
};

inline LossEval eval_loss(const Image& x, const Image* y, const BlurKernel* h,
                          const LossSpec& spec, bool want_grad) {
    ad::Tape<double> tape;
    auto xv = tape.leaf(image_to_tensor<double>(x), true);
    ad::Var<double> loss;
    if (y != nullptr) {
        if (!x.same_shape(*y)) throw std::invalid_argument("loss: shape mismatch");
        auto ops = make_loss_operators<double>(*h, *y, spec);
        loss = total_loss_graph(tape, xv, ops, spec);
    } else {
        loss = tape.tv_penalty(xv);
    }
    LossEval out;
    out.value = loss->val.v[0];
    if (want_grad) {
        tape.backward(loss);
        out.grad = tensor_to_image(xv->grad);
    }
    return out;
}

}  // namespace detail

// 1/2 * || y - blur(x,h) ||^2
inline double ls_loss(const Image& x, const Image& y, const BlurKernel& h) {
    LossSpec spec;
    spec.fidelity = Fidelity::LS;
    return detail::eval_loss(x, &y, &h, spec, false).value;
}

// 1/2 * || W (y - blur(x,h)) ||^2 with the damped inverse-sqrt spectral weight
inline double bp_loss(const Image& x, const Image& y, const BlurKernel& h, const LossSpec& spec) {
    if (spec.fidelity != Fidelity::BP)
        throw std::invalid_argument("bp_loss: spec fidelity must be BP");
    LossSpec s = spec;
    s.tv_weight = 0.0;
    return detail::eval_loss(x, &y, &h, s, false).value;
}

// anisotropic TV: sum of absolute horizontal and vertical neighbor
// differences over non-wrapping index pairs, summed over channels
inline double tv_loss(const Image& x) {
    return detail::eval_loss(x, nullptr, nullptr, LossSpec{}, false).value;
}

inline double total_loss(const Image& x, const Image& y, const BlurKernel& h,
                         const LossSpec& spec) {
    return detail::eval_loss(x, &y, &h, spec, false).value;
}

// Gradients with respect to x, via the same reverse-mode path the optimizer
// uses.
inline Image ls_loss_grad(const Image& x, const Image& y, const BlurKernel& h) {
    LossSpec spec;
    spec.fidelity = Fidelity::LS;
    return detail::eval_loss(x, &y, &h, spec, true).grad;
}

inline Image bp_loss_grad(const Image& x, const Image& y, const BlurKernel& h,
                          const LossSpec& spec) {
    LossSpec s = spec;
    s.fidelity = Fidelity::BP;
    s.tv_weight = 0.0;
    return detail::eval_loss(x, &y, &h, s, true).grad;
}

inline Image tv_loss_grad(const Image& x) {
    return detail::eval_loss(x, nullptr, nullptr, LossSpec{}, true).grad;
}

inline Image total_loss_grad(const Image& x, const Image& y, const BlurKernel& h,
                             const LossSpec& spec) {
    return detail::eval_loss(x, &y, &h, spec, true).grad;
}

}  // namespace dipblur
