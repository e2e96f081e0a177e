#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dipblur/autodiff.hpp"
#include "dipblur/image.hpp"
#include "dipblur/rng.hpp"
#include "dipblur/tensor.hpp"

namespace dipblur {

// Encoder-decoder with skip connections; defaults follow the usual untrained-
// prior setup (5 scales, 128 features, 4 skip features, bilinear upsampling,
// leaky rectifier, sigmoid output).
struct NetConfig {
    int input_channels = 32;
    int output_channels = 3;
    int depth = 5;
    std::vector<int> features;       // per stage; empty = 128 everywhere
    std::vector<int> skip_features;  // per stage; empty = 4 everywhere
    std::string upsample = "bilinear";  // or "nearest"
    std::string nonlinearity = "leaky_relu";
    double leaky_slope = 0.2;
    bool final_sigmoid = true;
    double input_noise_amplitude = 0.1;   // z ~ U[0, amplitude]
    double perturb_noise_std = 0.0;       // optional per-iteration z jitter, off by default

    std::vector<int> stage_features() const {
        if (features.empty()) return std::vector<int>(depth, 128);
        return features;
    }
    std::vector<int> stage_skips() const {
        if (skip_features.empty()) return std::vector<int>(depth, 4);
        return skip_features;
    }
    void validate() const {
        if (input_channels <= 0 || output_channels <= 0 || depth <= 0)
            throw std::invalid_argument("NetConfig: channels and depth must be positive");
        if (!features.empty() && int(features.size()) != depth)
            throw std::invalid_argument("NetConfig: features list must have one entry per stage");
        if (!skip_features.empty() && int(skip_features.size()) != depth)
            throw std::invalid_argument("NetConfig: skip list must have one entry per stage");
        for (int f : stage_features())
            if (f <= 0) throw std::invalid_argument("NetConfig: non-positive feature width");
        for (int s : stage_skips())
            if (s < 0) throw std::invalid_argument("NetConfig: negative skip width");
        if (upsample != "bilinear" && upsample != "nearest")
            throw std::invalid_argument("NetConfig: unknown upsample mode " + upsample);
        if (nonlinearity != "leaky_relu")
            throw std::invalid_argument("NetConfig: unknown nonlinearity " + nonlinearity);
        if (!(input_noise_amplitude > 0.0))
            throw std::invalid_argument("NetConfig: input noise amplitude must be positive");
    }
};

// Fixed network input: i.i.d. uniform noise, frozen after creation.
template <class T>
struct SeedInput {
    Tensor<T> z;
    std::uint64_t seed = 0;
};

template <class T>
SeedInput<T> make_seed_input(int channels, int h, int w, std::uint64_t seed,
                             double amplitude = 0.1) {
    SeedInput<T> s;
    s.seed = seed;
    s.z = Tensor<T>(channels, h, w);
    Rng rng(derive_seed(seed, 0x5eed));
    for (auto& v : s.z.v) v = T(rng.uniform(0.0, amplitude));
    return s;
}

template <class T>
class UNet {
public:
    UNet(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        auto feats = cfg_.stage_features();
        auto skips = cfg_.stage_skips();
        Rng rng(derive_seed(seed, 0x0e7));
        stages_.resize(cfg_.depth);
        int in_ch = cfg_.input_channels;
        for (int i = 0; i < cfg_.depth; ++i) {
            Stage& s = stages_[i];
            const int f = feats[i], sk = skips[i];
            const int deeper_ch = (i + 1 < cfg_.depth) ? feats[i + 1] : f;
            s.down_a = make_conv(in_ch, f, 3, rng, "s" + std::to_string(i) + ".down_a");
            s.bn_down_a = make_bn(f, "s" + std::to_string(i) + ".bn_down_a");
            s.down_b = make_conv(f, f, 3, rng, "s" + std::to_string(i) + ".down_b");
            s.bn_down_b = make_bn(f, "s" + std::to_string(i) + ".bn_down_b");
            if (sk > 0) {
                s.skip = make_conv(in_ch, sk, 1, rng, "s" + std::to_string(i) + ".skip");
                s.bn_skip = make_bn(sk, "s" + std::to_string(i) + ".bn_skip");
            }
            s.bn_concat = make_bn(sk + deeper_ch, "s" + std::to_string(i) + ".bn_concat");
            s.up_a = make_conv(sk + deeper_ch, f, 3, rng, "s" + std::to_string(i) + ".up_a");
            s.bn_up_a = make_bn(f, "s" + std::to_string(i) + ".bn_up_a");
            s.up_b = make_conv(f, f, 1, rng, "s" + std::to_string(i) + ".up_b");
            s.bn_up_b = make_bn(f, "s" + std::to_string(i) + ".bn_up_b");
            in_ch = f;
        }
        out_conv_ = make_conv(feats[0], cfg_.output_channels, 1, rng, "out");
    }

    const NetConfig& config() const { return cfg_; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.var->val.size();
        return n;
    }

    std::vector<ad::Var<T>> parameters() const {
        std::vector<ad::Var<T>> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p.var);
        return out;
    }

    // x = f_theta(z); input is reflect-padded to a multiple of 2^depth and the
    // output cropped back, so output size always equals input size
    ad::Var<T> forward(ad::Tape<T>& tape, const ad::Var<T>& z) const {
        const int H = z->val.h, W = z->val.w;
        if (z->val.c != cfg_.input_channels)
            throw std::invalid_argument("forward: z channel count mismatch");
        const int mult = 1 << cfg_.depth;
        const int HP = ((H + mult - 1) / mult) * mult;
        const int WP = ((W + mult - 1) / mult) * mult;
        ad::Var<T> t = z;
        if (HP != H || WP != W) {
            int pt = (HP - H) / 2, pb = HP - H - pt;
            int pl = (WP - W) / 2, pr = WP - W - pl;
            if (pt >= H || pb >= H || pl >= W || pr >= W)
                throw std::invalid_argument("forward: image too small for this depth");
            t = tape.reflect_pad(z, pt, pb, pl, pr);
        }
        ad::Var<T> y = run_stage(tape, t, 0);
        y = tape.conv2d(y, out_conv_.w, out_conv_.b, 1, 1, 1);
        if (cfg_.final_sigmoid) y = tape.sigmoid(y);
        if (HP != H || WP != W) y = tape.crop(y, (HP - H) / 2, (WP - W) / 2, H, W);
        return y;
    }

    // ---- checkpointing: versioned header + named parameter arrays ----

    void save_checkpoint(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
        const char magic[4] = {'D', 'P', 'C', 'K'};
        f.write(magic, 4);
        write_u32(f, 1);  // version
        write_u32(f, std::uint32_t(params_.size()));
        for (const auto& p : params_) {
            write_u32(f, std::uint32_t(p.name.size()));
            f.write(p.name.data(), std::streamsize(p.name.size()));
            const Tensor<T>& v = p.var->val;
            write_u32(f, std::uint32_t(v.c));
            write_u32(f, std::uint32_t(v.h));
            write_u32(f, std::uint32_t(v.w));
            for (T x : v.v) {
                double d = double(x);
                f.write(reinterpret_cast<const char*>(&d), sizeof(double));
            }
        }
        if (!f) throw std::runtime_error("checkpoint: short write to " + path);
    }

    void load_checkpoint(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
        char magic[4];
        f.read(magic, 4);
        if (!f || std::memcmp(magic, "DPCK", 4) != 0)
            throw std::runtime_error("checkpoint: bad magic in " + path);
        if (read_u32(f) != 1) throw std::runtime_error("checkpoint: unsupported version");
        std::uint32_t count = read_u32(f);
        if (count != params_.size())
            throw std::runtime_error("checkpoint: parameter count mismatch");
        for (auto& p : params_) {
            std::uint32_t len = read_u32(f);
            std::string name(len, '\0');
            f.read(name.data(), len);
            if (name != p.name) throw std::runtime_error("checkpoint: parameter order mismatch");
            int c = int(read_u32(f)), h = int(read_u32(f)), w = int(read_u32(f));
            Tensor<T>& v = p.var->val;
            if (c != v.c || h != v.h || w != v.w)
                throw std::runtime_error("checkpoint: shape mismatch for " + name);
            for (T& x : v.v) {
                double d;
                f.read(reinterpret_cast<char*>(&d), sizeof(double));
                x = T(d);
            }
        }
        if (!f) throw std::runtime_error("checkpoint: truncated file " + path);
    }

private:
    struct ConvParams {
        ad::Var<T> w, b;
        int kh = 0, kw = 0;
    };
    struct BnParams {
        ad::Var<T> gamma, beta;
    };
    struct Stage {
        ConvParams down_a, down_b, skip, up_a, up_b;
        BnParams bn_down_a, bn_down_b, bn_skip, bn_concat, bn_up_a, bn_up_b;
    };
    struct Named {
        std::string name;
        ad::Var<T> var;
    };

    ConvParams make_conv(int in_c, int out_c, int k, Rng& rng, const std::string& name) {
        ConvParams p;
        p.kh = p.kw = k;
        Tensor<T> w(out_c, in_c, k * k);
        const double bound = 1.0 / std::sqrt(double(in_c) * k * k);
        for (auto& v : w.v) v = T(rng.uniform(-bound, bound));
        Tensor<T> b(out_c, 1, 1);
        for (auto& v : b.v) v = T(rng.uniform(-bound, bound));
        p.w = ad::make_param(std::move(w));
        p.b = ad::make_param(std::move(b));
        params_.push_back({name + ".w", p.w});
        params_.push_back({name + ".b", p.b});
        return p;
    }

    BnParams make_bn(int c, const std::string& name) {
        BnParams p;
        Tensor<T> g(c, 1, 1), b(c, 1, 1);
        g.fill(T(1));
        p.gamma = ad::make_param(std::move(g));
        p.beta = ad::make_param(std::move(b));
        params_.push_back({name + ".gamma", p.gamma});
        params_.push_back({name + ".beta", p.beta});
        return p;
    }

    ad::Var<T> conv_bn_act(ad::Tape<T>& tape, const ad::Var<T>& x, const ConvParams& c,
                           const BnParams& bn, int stride) const {
        auto y = tape.conv2d(x, c.w, c.b, c.kh, c.kw, stride);
        y = tape.batch_norm(y, bn.gamma, bn.beta);
        return tape.leaky_relu(y, T(cfg_.leaky_slope));
    }

    ad::Var<T> run_stage(ad::Tape<T>& tape, const ad::Var<T>& input, int i) const {
        const Stage& s = stages_[i];
        auto d = conv_bn_act(tape, input, s.down_a, s.bn_down_a, 2);
        d = conv_bn_act(tape, d, s.down_b, s.bn_down_b, 1);
        ad::Var<T> inner = (i + 1 < cfg_.depth) ? run_stage(tape, d, i + 1) : d;
        auto up = tape.upsample2x(inner, cfg_.upsample == "bilinear");
        ad::Var<T> merged = up;
        if (s.skip.w) {
            auto sk = conv_bn_act(tape, input, s.skip, s.bn_skip, 1);
            merged = tape.concat_channels(sk, up);
        }
        merged = tape.batch_norm(merged, s.bn_concat.gamma, s.bn_concat.beta);
        auto u = conv_bn_act(tape, merged, s.up_a, s.bn_up_a, 1);
        return conv_bn_act(tape, u, s.up_b, s.bn_up_b, 1);
    }

    static void write_u32(std::ofstream& f, std::uint32_t v) {
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    static std::uint32_t read_u32(std::ifstream& f) {
        std::uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), sizeof(v));
        return v;
    }

    NetConfig cfg_;
    std::vector<Stage> stages_;
    ConvParams out_conv_;
    std::vector<Named> params_;
};

template <class T>
UNet<T> build_network(const NetConfig& cfg, std::uint64_t seed) {
    return UNet<T>(cfg, seed);
}

// Plain inference helper: runs the net on its seed input and returns the
// output as an Image.
template <class T>
Image net_output_image(const UNet<T>& net, const SeedInput<T>& z) {
    ad::Tape<T> tape;
    auto zv = tape.leaf(z.z, false);
    auto out = net.forward(tape, zv);
    Image img(out->val.h, out->val.w, out->val.c);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = double(out->val.v[i]);
    return img;
}

}  // namespace dipblur
