#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "dipblur/losses.hpp"
#include "dipblur/metrics.hpp"
#include "dipblur/net.hpp"

namespace dipblur {

namespace detail {

// The optimization loop churns through multi-megabyte activation buffers
// every iteration. Keeping large blocks on the heap instead of handing them
// back to the kernel makes the reallocation cost a warm memset.
inline void tune_allocator_once() {
#if defined(__GLIBC__)
    static std::once_flag flag;
    std::call_once(flag, [] {
        mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
        mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
    });
#endif
}

}  // namespace detail

enum class Stopping { FixedBudget, OraclePeak };

inline Stopping parse_stopping(const std::string& s) {
    if (s == "fixed_budget") return Stopping::FixedBudget;
    if (s == "oracle_peak") return Stopping::OraclePeak;
    throw std::invalid_argument("unknown stopping mode: " + s);
}

struct RunConfig {
    int iterations = 10000;
    double lr = 0.01;
    int metric_stride = 10;
    Stopping stopping = Stopping::FixedBudget;
    std::uint64_t seed = 1;
    bool record_ssim = true;
    std::string checkpoint_in;   // resume parameters from here when set
    std::string checkpoint_out;  // final parameters written here when set

    void validate() const {
        if (iterations < 1) throw std::invalid_argument("RunConfig: iterations must be >= 1");
        if (!(lr > 0.0)) throw std::invalid_argument("RunConfig: lr must be positive");
        if (metric_stride < 1) throw std::invalid_argument("RunConfig: stride must be >= 1");
    }
};

struct RunTrace {
    struct Row {
        int iteration = 0;
        double loss = 0.0;
        double psnr = std::numeric_limits<double>::quiet_NaN();
        double ssim = std::numeric_limits<double>::quiet_NaN();
    };
    std::vector<Row> rows;
    int best_iteration = -1;
    double best_psnr = -std::numeric_limits<double>::infinity();
    double wall_seconds = 0.0;
};

// Iterate with the recorded-peak PSNR (earliest on ties) for oracle_peak,
// or the last recorded iterate for fixed_budget.
inline int early_stop_select(const RunTrace& trace, Stopping mode) {
    if (trace.rows.empty()) throw std::invalid_argument("early_stop_select: empty trace");
    if (mode == Stopping::FixedBudget) return trace.rows.back().iteration;
    int best = -1;
    double best_psnr = -std::numeric_limits<double>::infinity();
    for (const auto& r : trace.rows) {
        if (std::isnan(r.psnr)) continue;
        if (r.psnr > best_psnr) {
            best_psnr = r.psnr;
            best = r.iteration;
        }
    }
    if (best < 0) throw std::invalid_argument("early_stop_select: no PSNR rows in trace");
    return best;
}

// Columns fixed as iteration,loss,psnr,ssim; missing metrics are left empty.
// Formats are pinned so reruns with identical seeds are byte-identical.
inline void write_trace_csv(const RunTrace& trace, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("trace csv: cannot write " + path);
    f << "iteration,loss,psnr,ssim\n";
    char buf[160];
    for (const auto& r : trace.rows) {
        std::string psnr_s, ssim_s;
        if (!std::isnan(r.psnr)) {
            if (std::isinf(r.psnr)) {
                psnr_s = "inf";
            } else {
                std::snprintf(buf, sizeof buf, "%.6f", r.psnr);
                psnr_s = buf;
            }
        }
        if (!std::isnan(r.ssim)) {
            std::snprintf(buf, sizeof buf, "%.6f", r.ssim);
            ssim_s = buf;
        }
        std::snprintf(buf, sizeof buf, "%d,%.9e,", r.iteration, r.loss);
        f << buf << psnr_s << "," << ssim_s << "\n";
    }
    if (!f) throw std::runtime_error("trace csv: short write to " + path);
}

namespace detail {

template <class T>
class Adam {
public:
    Adam(std::vector<ad::Var<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(T(lr)), b1_(T(beta1)), b2_(T(beta2)), eps_(T(eps)) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->val.size(), T(0));
            v_[i].assign(params_[i]->val.size(), T(0));
        }
    }

    void step() {
        ++t_;
        const T bc1 = T(1) - std::pow(b1_, T(t_));
        const T bc2 = T(1) - std::pow(b2_, T(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            p->ensure_grad();
            T* th = p->val.data();
            T* g = p->grad.data();
            T* m = m_[i].data();
            T* v = v_[i].data();
            const std::size_t n = p->val.size();
            for (std::size_t j = 0; j < n; ++j) {
                m[j] = b1_ * m[j] + (T(1) - b1_) * g[j];
                v[j] = b2_ * v[j] + (T(1) - b2_) * g[j] * g[j];
                T mh = m[j] / bc1;
                T vh = v[j] / bc2;
                th[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
                g[j] = T(0);
            }
        }
    }

private:
    std::vector<ad::Var<T>> params_;
    std::vector<std::vector<T>> m_, v_;
    T lr_, b1_, b2_, eps_;
    long t_ = 0;
};

inline Image tensor_to_image_any(const Tensor<float>& t) {
    Image img(t.h, t.w, t.c);
    for (std::size_t i = 0; i < t.v.size(); ++i) img.data[i] = double(t.v[i]);
    return img;
}
inline Image tensor_to_image_any(const Tensor<double>& t) {
    Image img(t.h, t.w, t.c);
    img.data.assign(t.v.begin(), t.v.end());
    return img;
}

}  // namespace detail

template <class T>
struct RestorationResult {
    Image restored;
    RunTrace trace;
    std::size_t param_count = 0;
};

// Minimizes total_loss(f_theta(z), y) over theta with Adam. Metrics are
// recorded every metric_stride iterations (plus the first and last), always
// from the theta state before that iteration's update. Fully deterministic
// given the seeds.
template <class T = float>
RestorationResult<T> run_restoration(const Image& y, const BlurKernel& h, const LossSpec& loss,
                                     const NetConfig& net_cfg, const RunConfig& run_cfg,
                                     const std::optional<Image>& ground_truth = std::nullopt) {
    detail::tune_allocator_once();
    run_cfg.validate();
    loss.validate();
    if (y.height < 16 || y.width < 16)
        throw std::invalid_argument("run_restoration: observation must be at least 16x16");
    if (run_cfg.stopping == Stopping::OraclePeak && !ground_truth)
        throw std::invalid_argument("run_restoration: oracle_peak requires a ground truth");
    if (ground_truth && !ground_truth->same_shape(y))
        throw std::invalid_argument("run_restoration: ground truth shape mismatch");

    const auto t0 = std::chrono::steady_clock::now();

    NetConfig cfg = net_cfg;
    cfg.output_channels = y.channels;
    UNet<T> net(cfg, run_cfg.seed);
    if (!run_cfg.checkpoint_in.empty()) net.load_checkpoint(run_cfg.checkpoint_in);
    SeedInput<T> z = make_seed_input<T>(cfg.input_channels, y.height, y.width,
                                        derive_seed(run_cfg.seed, 1), cfg.input_noise_amplitude);
    Rng perturb_rng(derive_seed(run_cfg.seed, 2));

    auto ops = make_loss_operators<T>(h, y, loss);

    detail::Adam<T> adam(net.parameters(), run_cfg.lr);

    RunTrace trace;
    Image best_image;
    Image final_image;

    auto should_record = [&](int t) {
        return (t - 1) % run_cfg.metric_stride == 0 || t == run_cfg.iterations;
    };

    for (int t = 1; t <= run_cfg.iterations; ++t) {
        ad::Tape<T> tape;
        Tensor<T> z_t = z.z;
        if (cfg.perturb_noise_std > 0.0)
            for (auto& v : z_t.v) v += T(cfg.perturb_noise_std * perturb_rng.normal());
        auto zv = tape.leaf(std::move(z_t), false);
        auto x = net.forward(tape, zv);
        auto loss_node = total_loss_graph(tape, x, ops, loss);
        const double loss_value = double(loss_node->val.v[0]);
        if (!std::isfinite(loss_value))
            throw std::runtime_error("run_restoration: non-finite loss at iteration " +
                                     std::to_string(t));

        if (should_record(t)) {
            RunTrace::Row row;
            row.iteration = t;
            row.loss = loss_value;
            if (ground_truth) {
                Image out = clip01(detail::tensor_to_image_any(x->val));
                row.psnr = psnr(out, *ground_truth);
                if (run_cfg.record_ssim) row.ssim = ssim(out, *ground_truth);
                if (row.psnr > trace.best_psnr) {
                    trace.best_psnr = row.psnr;
                    trace.best_iteration = t;
                    best_image = std::move(out);
                }
            }
            trace.rows.push_back(row);
        }
        if (t == run_cfg.iterations) final_image = clip01(detail::tensor_to_image_any(x->val));

        tape.backward(loss_node);
        adam.step();
    }

    if (!run_cfg.checkpoint_out.empty()) net.save_checkpoint(run_cfg.checkpoint_out);

    RestorationResult<T> res;
    res.param_count = net.param_count();
    if (run_cfg.stopping == Stopping::OraclePeak) {
        res.restored = std::move(best_image);
    } else {
        res.restored = std::move(final_image);
    }
    trace.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.trace = std::move(trace);
    return res;
}

}  // namespace dipblur
