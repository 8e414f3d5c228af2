#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "iotid/binio.hpp"
#include "iotid/ml/nbm.hpp"  // Prediction
#include "iotid/ml/nn.hpp"   // softmax helper
#include "iotid/prng.hpp"

namespace iotid {

struct ConvNetConfig {
    std::size_t in_h = 10;
    std::size_t in_w = 250;
    std::size_t conv1_filters = 8;
    std::size_t conv2_filters = 16;
    std::size_t kernel = 3;
    double dropout = 0.5;
    std::uint64_t seed = 0;
};

// conv(ReLU) -> maxpool 2x2 -> conv(ReLU) -> maxpool 2x2 -> flatten ->
// dropout (training only, inverted) -> dense softmax. Valid convolutions,
// stride 1. Inputs are expected scaled to [0,1].
class ConvNetwork {
public:
    ConvNetwork() = default;

    ConvNetwork(const ConvNetConfig& config, int class_count)
        : cfg_(config), class_count_(class_count), rng_(config.seed ^ 0x8f2ca137bd604e9bULL) {
        std::size_t k = cfg_.kernel;
        c1_h_ = cfg_.in_h - k + 1;
        c1_w_ = cfg_.in_w - k + 1;
        p1_h_ = c1_h_ / 2;
        p1_w_ = c1_w_ / 2;
        if (p1_h_ < k || p1_w_ < k)
            throw std::invalid_argument("convnet: input too small for the layer stack");
        c2_h_ = p1_h_ - k + 1;
        c2_w_ = p1_w_ - k + 1;
        p2_h_ = c2_h_ / 2;
        p2_w_ = c2_w_ / 2;
        if (p2_h_ < 1 || p2_w_ < 1)
            throw std::invalid_argument("convnet: input too small for the layer stack");
        flat_ = p2_h_ * p2_w_ * cfg_.conv2_filters;

        Prng init(config.seed ^ 0x3c6ef372fe94f82aULL);
        auto he = [&](std::vector<double>& v, std::size_t fan_in) {
            double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (double& w : v) w = init.gaussian(0.0, scale);
        };
        w1_.resize(cfg_.conv1_filters * k * k);
        b1_.assign(cfg_.conv1_filters, 0.0);
        he(w1_, k * k);
        w2_.resize(cfg_.conv2_filters * cfg_.conv1_filters * k * k);
        b2_.assign(cfg_.conv2_filters, 0.0);
        he(w2_, cfg_.conv1_filters * k * k);
        wd_.resize(static_cast<std::size_t>(class_count) * flat_);
        bd_.assign(static_cast<std::size_t>(class_count), 0.0);
        he(wd_, flat_);
    }

    std::size_t flattened_width() const { return flat_; }
    int class_count() const { return class_count_; }
    const ConvNetConfig& config() const { return cfg_; }

    std::vector<double> forward(const std::vector<double>& image) const {
        Activations a;
        run_forward(image, a, nullptr);
        return a.probs;
    }

    Prediction predict(const std::vector<double>& image) const {
        auto p = forward(image);
        int best = 0;
        for (int c = 1; c < class_count_; ++c)
            if (p[c] > p[best]) best = c;
        return {best, p[static_cast<std::size_t>(best)]};
    }

    double mean_loss(const std::vector<std::vector<double>>& xs,
                     const std::vector<int>& ys) const {
        double loss = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            auto p = forward(xs[i]);
            loss -= std::log(std::max(p[static_cast<std::size_t>(ys[i])], 1e-300));
        }
        return loss / static_cast<double>(xs.size());
    }

    // Mean batch gradient, no dropout (used by gradient checks).
    std::vector<double> flat_gradients(const std::vector<std::vector<double>>& xs,
                                       const std::vector<int>& ys) const {
        Grads g = zero_grads();
        for (std::size_t i = 0; i < xs.size(); ++i) {
            Activations a;
            run_forward(xs[i], a, nullptr);
            accumulate_backward(xs[i], ys[i], a, g);
        }
        return flatten_grads(g, 1.0 / static_cast<double>(xs.size()));
    }

    void train_batch(const std::vector<std::vector<double>>& xs, const std::vector<int>& ys,
                     double lr, double momentum) {
        Grads g = zero_grads();
        double loss = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            std::vector<std::uint8_t> mask;
            if (cfg_.dropout > 0.0) {
                mask.resize(flat_);
                for (auto& m : mask) m = rng_.next_double() >= cfg_.dropout ? 1 : 0;
            }
            Activations a;
            run_forward(xs[i], a, cfg_.dropout > 0.0 ? &mask : nullptr);
            loss -= std::log(std::max(a.probs[static_cast<std::size_t>(ys[i])], 1e-300));
            accumulate_backward(xs[i], ys[i], a, g);
        }
        if (!std::isfinite(loss)) throw std::runtime_error("cnn: non-finite training loss");
        auto flat = flatten_grads(g, 1.0 / static_cast<double>(xs.size()));
        if (velocity_.empty()) velocity_.assign(flat.size(), 0.0);
        std::size_t k = 0;
        for_each_param([&](double& w) {
            velocity_[k] = momentum * velocity_[k] - lr * flat[k];
            w += velocity_[k];
            ++k;
        });
    }

    std::vector<double> snapshot() const {
        std::vector<double> flat;
        const_cast<ConvNetwork*>(this)->for_each_param([&](double& w) { flat.push_back(w); });
        return flat;
    }

    void restore(const std::vector<double>& flat) {
        std::size_t k = 0;
        for_each_param([&](double& w) { w = flat[k++]; });
    }

    void save(BinWriter& w) const {
        w.u64(cfg_.in_h);
        w.u64(cfg_.in_w);
        w.u64(cfg_.conv1_filters);
        w.u64(cfg_.conv2_filters);
        w.u64(cfg_.kernel);
        w.f64(cfg_.dropout);
        w.u64(cfg_.seed);
        w.i32(class_count_);
        w.f64_vec(w1_);
        w.f64_vec(b1_);
        w.f64_vec(w2_);
        w.f64_vec(b2_);
        w.f64_vec(wd_);
        w.f64_vec(bd_);
    }

    static ConvNetwork load(BinReader& r) {
        ConvNetConfig cfg;
        cfg.in_h = r.u64();
        cfg.in_w = r.u64();
        cfg.conv1_filters = r.u64();
        cfg.conv2_filters = r.u64();
        cfg.kernel = r.u64();
        cfg.dropout = r.f64();
        cfg.seed = r.u64();
        int classes = r.i32();
        ConvNetwork n(cfg, classes);
        n.w1_ = r.f64_vec();
        n.b1_ = r.f64_vec();
        n.w2_ = r.f64_vec();
        n.b2_ = r.f64_vec();
        n.wd_ = r.f64_vec();
        n.bd_ = r.f64_vec();
        return n;
    }

private:
    struct Activations {
        std::vector<double> c1;       // post-ReLU, f1 x c1_h x c1_w
        std::vector<double> p1;       // f1 x p1_h x p1_w
        std::vector<std::uint32_t> p1_arg;
        std::vector<double> c2;       // post-ReLU
        std::vector<double> p2;
        std::vector<std::uint32_t> p2_arg;
        std::vector<double> flat;     // after dropout scaling when training
        std::vector<double> probs;
        const std::vector<std::uint8_t>* mask = nullptr;
    };

    struct Grads {
        std::vector<double> w1, b1, w2, b2, wd, bd;
    };

    Grads zero_grads() const {
        return Grads{std::vector<double>(w1_.size(), 0.0), std::vector<double>(b1_.size(), 0.0),
                     std::vector<double>(w2_.size(), 0.0), std::vector<double>(b2_.size(), 0.0),
                     std::vector<double>(wd_.size(), 0.0), std::vector<double>(bd_.size(), 0.0)};
    }

    std::vector<double> flatten_grads(const Grads& g, double scale) const {
        std::vector<double> flat;
        flat.reserve(g.w1.size() + g.b1.size() + g.w2.size() + g.b2.size() + g.wd.size() +
                     g.bd.size());
        for (const auto* v : {&g.w1, &g.b1, &g.w2, &g.b2, &g.wd, &g.bd})
            for (double x : *v) flat.push_back(x * scale);
        return flat;
    }

    template <typename F>
    void for_each_param(F&& f) {
        for (auto* v : {&w1_, &b1_, &w2_, &b2_, &wd_, &bd_})
            for (double& w : *v) f(w);
    }

    static void conv_forward(const std::vector<double>& in, std::size_t in_ch, std::size_t in_h,
                             std::size_t in_w, const std::vector<double>& w,
                             const std::vector<double>& b, std::size_t out_ch, std::size_t k,
                             std::vector<double>& out) {
        std::size_t oh = in_h - k + 1, ow = in_w - k + 1;
        out.assign(out_ch * oh * ow, 0.0);
        for (std::size_t f = 0; f < out_ch; ++f) {
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    double acc = b[f];
                    for (std::size_t c = 0; c < in_ch; ++c) {
                        const double* wp = w.data() + ((f * in_ch + c) * k) * k;
                        const double* ip = in.data() + c * in_h * in_w + y * in_w + x;
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx)
                                acc += wp[ky * k + kx] * ip[ky * in_w + kx];
                    }
                    double v = std::max(0.0, acc);
                    out[f * oh * ow + y * ow + x] = v;
                }
            }
        }
    }

    static void pool_forward(const std::vector<double>& in, std::size_t ch, std::size_t in_h,
                             std::size_t in_w, std::vector<double>& out,
                             std::vector<std::uint32_t>& argmax) {
        std::size_t oh = in_h / 2, ow = in_w / 2;
        out.assign(ch * oh * ow, 0.0);
        argmax.assign(ch * oh * ow, 0);
        for (std::size_t c = 0; c < ch; ++c) {
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    std::uint32_t best_idx = 0;
                    double best = -1.0;
                    for (std::size_t dy = 0; dy < 2; ++dy) {
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            std::uint32_t idx = static_cast<std::uint32_t>(
                                c * in_h * in_w + (2 * y + dy) * in_w + (2 * x + dx));
                            if (in[idx] > best) {
                                best = in[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[c * oh * ow + y * ow + x] = best;
                    argmax[c * oh * ow + y * ow + x] = best_idx;
                }
            }
        }
    }

    void run_forward(const std::vector<double>& image, Activations& a,
                     const std::vector<std::uint8_t>* dropout_mask) const {
        conv_forward(image, 1, cfg_.in_h, cfg_.in_w, w1_, b1_, cfg_.conv1_filters, cfg_.kernel,
                     a.c1);
        pool_forward(a.c1, cfg_.conv1_filters, c1_h_, c1_w_, a.p1, a.p1_arg);
        conv_forward(a.p1, cfg_.conv1_filters, p1_h_, p1_w_, w2_, b2_, cfg_.conv2_filters,
                     cfg_.kernel, a.c2);
        pool_forward(a.c2, cfg_.conv2_filters, c2_h_, c2_w_, a.p2, a.p2_arg);
        a.flat = a.p2;
        a.mask = dropout_mask;
        if (dropout_mask) {
            double keep = 1.0 - cfg_.dropout;
            for (std::size_t i = 0; i < flat_; ++i)
                a.flat[i] = (*dropout_mask)[i] ? a.flat[i] / keep : 0.0;
        }
        a.probs.assign(static_cast<std::size_t>(class_count_), 0.0);
        for (int c = 0; c < class_count_; ++c) {
            double acc = bd_[static_cast<std::size_t>(c)];
            const double* wrow = wd_.data() + static_cast<std::size_t>(c) * flat_;
            for (std::size_t i = 0; i < flat_; ++i) acc += wrow[i] * a.flat[i];
            a.probs[static_cast<std::size_t>(c)] = acc;
        }
        nn_detail::softmax_inplace(a.probs);
    }

    void accumulate_backward(const std::vector<double>& image, int y, const Activations& a,
                             Grads& g) const {
        std::vector<double> delta = a.probs;
        delta[static_cast<std::size_t>(y)] -= 1.0;

        // dense
        std::vector<double> d_flat(flat_, 0.0);
        for (int c = 0; c < class_count_; ++c) {
            double dz = delta[static_cast<std::size_t>(c)];
            g.bd[static_cast<std::size_t>(c)] += dz;
            double* grow = g.wd.data() + static_cast<std::size_t>(c) * flat_;
            const double* wrow = wd_.data() + static_cast<std::size_t>(c) * flat_;
            for (std::size_t i = 0; i < flat_; ++i) {
                grow[i] += dz * a.flat[i];
                d_flat[i] += dz * wrow[i];
            }
        }
        if (a.mask) {
            double keep = 1.0 - cfg_.dropout;
            for (std::size_t i = 0; i < flat_; ++i)
                d_flat[i] = (*a.mask)[i] ? d_flat[i] / keep : 0.0;
        }

        // unpool 2 -> c2
        std::vector<double> d_c2(a.c2.size(), 0.0);
        for (std::size_t i = 0; i < a.p2.size(); ++i) d_c2[a.p2_arg[i]] += d_flat[i];
        // ReLU gate on c2
        for (std::size_t i = 0; i < d_c2.size(); ++i)
            if (a.c2[i] <= 0.0) d_c2[i] = 0.0;

        // conv2 backward
        std::vector<double> d_p1(a.p1.size(), 0.0);
        conv_backward(a.p1, cfg_.conv1_filters, p1_h_, p1_w_, w2_, cfg_.conv2_filters,
                      cfg_.kernel, d_c2, g.w2, g.b2, &d_p1);

        // unpool 1 -> c1
        std::vector<double> d_c1(a.c1.size(), 0.0);
        for (std::size_t i = 0; i < a.p1.size(); ++i) d_c1[a.p1_arg[i]] += d_p1[i];
        for (std::size_t i = 0; i < d_c1.size(); ++i)
            if (a.c1[i] <= 0.0) d_c1[i] = 0.0;

        // conv1 backward (no input gradient needed)
        conv_backward(image, 1, cfg_.in_h, cfg_.in_w, w1_, cfg_.conv1_filters, cfg_.kernel, d_c1,
                      g.w1, g.b1, nullptr);
    }

    static void conv_backward(const std::vector<double>& in, std::size_t in_ch, std::size_t in_h,
                              std::size_t in_w, const std::vector<double>& w, std::size_t out_ch,
                              std::size_t k, const std::vector<double>& d_out,
                              std::vector<double>& g_w, std::vector<double>& g_b,
                              std::vector<double>* d_in) {
        std::size_t oh = in_h - k + 1, ow = in_w - k + 1;
        for (std::size_t f = 0; f < out_ch; ++f) {
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    double dz = d_out[f * oh * ow + y * ow + x];
                    if (dz == 0.0) continue;
                    g_b[f] += dz;
                    for (std::size_t c = 0; c < in_ch; ++c) {
                        double* gwp = g_w.data() + ((f * in_ch + c) * k) * k;
                        const double* ip = in.data() + c * in_h * in_w + y * in_w + x;
                        const double* wp = w.data() + ((f * in_ch + c) * k) * k;
                        double* dip =
                            d_in ? d_in->data() + c * in_h * in_w + y * in_w + x : nullptr;
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                gwp[ky * k + kx] += dz * ip[ky * in_w + kx];
                                if (dip) dip[ky * in_w + kx] += dz * wp[ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }

    ConvNetConfig cfg_;
    int class_count_ = 0;
    std::size_t c1_h_ = 0, c1_w_ = 0, p1_h_ = 0, p1_w_ = 0;
    std::size_t c2_h_ = 0, c2_w_ = 0, p2_h_ = 0, p2_w_ = 0;
    std::size_t flat_ = 0;
    std::vector<double> w1_, b1_, w2_, b2_, wd_, bd_;
    std::vector<double> velocity_;
    Prng rng_{0};
};

} // namespace iotid
