#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "iotid/binio.hpp"
#include "iotid/ml/nbm.hpp"  // Prediction
#include "iotid/prng.hpp"

namespace iotid {

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 128;
    int epochs = 50;
    std::uint64_t seed = 0;
};

struct TrainResult {
    std::vector<double> epoch_accuracy;  // held-out accuracy after each epoch
    double best_accuracy = 0.0;
    int best_epoch = 0;  // 1-based
};

// Per-feature standardization fitted on training data. Constant features get
// std 1 so transformed values stay finite.
class Standardizer {
public:
    Standardizer() = default;

    static Standardizer fit(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) throw std::invalid_argument("standardizer: no rows");
        Standardizer s;
        std::size_t d = rows[0].size();
        s.mean_.assign(d, 0.0);
        s.std_.assign(d, 0.0);
        for (const auto& r : rows)
            for (std::size_t j = 0; j < d; ++j) s.mean_[j] += r[j];
        for (double& m : s.mean_) m /= static_cast<double>(rows.size());
        for (const auto& r : rows)
            for (std::size_t j = 0; j < d; ++j) {
                double dd = r[j] - s.mean_[j];
                s.std_[j] += dd * dd;
            }
        for (double& v : s.std_) {
            v = std::sqrt(v / static_cast<double>(rows.size()));
            if (v < 1e-12) v = 1.0;
        }
        return s;
    }

    std::vector<double> transform(const std::vector<double>& row) const {
        std::vector<double> out(row.size());
        for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean_[j]) / std_[j];
        return out;
    }

    void save(BinWriter& w) const {
        w.f64_vec(mean_);
        w.f64_vec(std_);
    }

    static Standardizer load(BinReader& r) {
        Standardizer s;
        s.mean_ = r.f64_vec();
        s.std_ = r.f64_vec();
        return s;
    }

private:
    std::vector<double> mean_;
    std::vector<double> std_;
};

namespace nn_detail {

inline void softmax_inplace(std::vector<double>& z) {
    double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

} // namespace nn_detail

// Fully connected network: input -> hidden ReLU layers -> softmax.
class DenseNetwork {
public:
    DenseNetwork() = default;

    DenseNetwork(std::size_t input_dim, std::vector<std::size_t> hidden, int class_count,
                 std::uint64_t seed)
        : input_dim_(input_dim), class_count_(class_count) {
        Prng rng(seed ^ 0xfcd1e7a9b3580264ULL);
        std::vector<std::size_t> dims = {input_dim};
        dims.insert(dims.end(), hidden.begin(), hidden.end());
        dims.push_back(static_cast<std::size_t>(class_count));
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            layers_.push_back(Layer::init(dims[l], dims[l + 1], rng));
        }
    }

    std::vector<double> forward(const std::vector<double>& x) const {
        std::vector<double> h = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            h = layers_[l].apply(h);
            if (l + 1 < layers_.size())
                for (double& v : h) v = std::max(0.0, v);
        }
        nn_detail::softmax_inplace(h);
        return h;
    }

    Prediction predict(const std::vector<double>& x) const {
        auto p = forward(x);
        int best = 0;
        for (int c = 1; c < class_count_; ++c)
            if (p[c] > p[best]) best = c;
        return {best, p[static_cast<std::size_t>(best)]};
    }

    // Mean cross-entropy over a batch.
    double mean_loss(const std::vector<std::vector<double>>& xs,
                     const std::vector<int>& ys) const {
        double loss = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            auto p = forward(xs[i]);
            loss -= std::log(std::max(p[static_cast<std::size_t>(ys[i])], 1e-300));
        }
        return loss / static_cast<double>(xs.size());
    }

    // Mean gradient of the batch loss, flattened in parameter order.
    std::vector<double> flat_gradients(const std::vector<std::vector<double>>& xs,
                                       const std::vector<int>& ys) const {
        std::vector<Layer> grads;
        for (const auto& l : layers_) grads.push_back(Layer::zeros_like(l));
        for (std::size_t i = 0; i < xs.size(); ++i) backward(xs[i], ys[i], grads);
        double scale = 1.0 / static_cast<double>(xs.size());
        std::vector<double> flat;
        for (const auto& g : grads) {
            for (double v : g.weights) flat.push_back(v * scale);
            for (double v : g.bias) flat.push_back(v * scale);
        }
        return flat;
    }

    void sgd_step(const std::vector<double>& flat_grad, double lr, double momentum) {
        if (velocity_.empty()) velocity_.assign(flat_grad.size(), 0.0);
        std::size_t k = 0;
        for (auto& l : layers_) {
            for (double& w : l.weights) {
                velocity_[k] = momentum * velocity_[k] - lr * flat_grad[k];
                w += velocity_[k];
                ++k;
            }
            for (double& b : l.bias) {
                velocity_[k] = momentum * velocity_[k] - lr * flat_grad[k];
                b += velocity_[k];
                ++k;
            }
        }
    }

    void train_batch(const std::vector<std::vector<double>>& xs, const std::vector<int>& ys,
                     double lr, double momentum) {
        double loss = mean_loss(xs, ys);
        if (!std::isfinite(loss)) throw std::runtime_error("fcnn: non-finite training loss");
        sgd_step(flat_gradients(xs, ys), lr, momentum);
    }

    std::vector<double> snapshot() const {
        std::vector<double> flat;
        for (const auto& l : layers_) {
            flat.insert(flat.end(), l.weights.begin(), l.weights.end());
            flat.insert(flat.end(), l.bias.begin(), l.bias.end());
        }
        return flat;
    }

    void restore(const std::vector<double>& flat) {
        std::size_t k = 0;
        for (auto& l : layers_) {
            for (double& w : l.weights) w = flat[k++];
            for (double& b : l.bias) b = flat[k++];
        }
    }

    int class_count() const { return class_count_; }
    std::size_t input_dim() const { return input_dim_; }

    void save(BinWriter& w) const {
        w.u64(input_dim_);
        w.i32(class_count_);
        w.u64(layers_.size());
        for (const auto& l : layers_) {
            w.u64(l.in);
            w.u64(l.out);
            w.f64_vec(l.weights);
            w.f64_vec(l.bias);
        }
    }

    static DenseNetwork load(BinReader& r) {
        DenseNetwork n;
        n.input_dim_ = r.u64();
        n.class_count_ = r.i32();
        std::uint64_t nl = r.u64();
        for (std::uint64_t i = 0; i < nl; ++i) {
            Layer l;
            l.in = r.u64();
            l.out = r.u64();
            l.weights = r.f64_vec();
            l.bias = r.f64_vec();
            n.layers_.push_back(std::move(l));
        }
        return n;
    }

private:
    struct Layer {
        std::size_t in = 0, out = 0;
        std::vector<double> weights;  // out x in, row-major
        std::vector<double> bias;

        static Layer init(std::size_t in, std::size_t out, Prng& rng) {
            Layer l;
            l.in = in;
            l.out = out;
            l.weights.resize(in * out);
            l.bias.assign(out, 0.0);
            double scale = std::sqrt(2.0 / static_cast<double>(in));  // He init
            for (double& w : l.weights) w = rng.gaussian(0.0, scale);
            return l;
        }

        static Layer zeros_like(const Layer& other) {
            Layer l;
            l.in = other.in;
            l.out = other.out;
            l.weights.assign(other.weights.size(), 0.0);
            l.bias.assign(other.bias.size(), 0.0);
            return l;
        }

        std::vector<double> apply(const std::vector<double>& x) const {
            std::vector<double> y(out);
            for (std::size_t o = 0; o < out; ++o) {
                double acc = bias[o];
                const double* wrow = weights.data() + o * in;
                for (std::size_t i = 0; i < in; ++i) acc += wrow[i] * x[i];
                y[o] = acc;
            }
            return y;
        }
    };

    // Accumulates one sample's gradients into `grads`.
    void backward(const std::vector<double>& x, int y, std::vector<Layer>& grads) const {
        std::vector<std::vector<double>> activations = {x};  // post-activation per layer
        std::vector<std::vector<double>> pre;                // pre-activation
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            auto z = layers_[l].apply(activations.back());
            pre.push_back(z);
            if (l + 1 < layers_.size())
                for (double& v : z) v = std::max(0.0, v);
            activations.push_back(std::move(z));
        }
        std::vector<double> delta = activations.back();
        nn_detail::softmax_inplace(delta);
        delta[static_cast<std::size_t>(y)] -= 1.0;  // dL/dz for softmax + CE

        for (std::size_t l = layers_.size(); l-- > 0;) {
            const auto& a_in = activations[l];
            Layer& g = grads[l];
            for (std::size_t o = 0; o < layers_[l].out; ++o) {
                g.bias[o] += delta[o];
                double* grow = g.weights.data() + o * layers_[l].in;
                for (std::size_t i = 0; i < layers_[l].in; ++i) grow[i] += delta[o] * a_in[i];
            }
            if (l == 0) break;
            std::vector<double> prev(layers_[l].in, 0.0);
            for (std::size_t o = 0; o < layers_[l].out; ++o) {
                const double* wrow = layers_[l].weights.data() + o * layers_[l].in;
                for (std::size_t i = 0; i < layers_[l].in; ++i) prev[i] += wrow[i] * delta[o];
            }
            for (std::size_t i = 0; i < layers_[l].in; ++i)
                if (pre[l - 1][i] <= 0.0) prev[i] = 0.0;  // ReLU gate
            delta = std::move(prev);
        }
    }

    std::size_t input_dim_ = 0;
    int class_count_ = 0;
    std::vector<Layer> layers_;
    std::vector<double> velocity_;
};

// Mini-batch SGD loop with best-epoch selection on held-out accuracy.
// `Model` needs train_batch / predict / snapshot / restore.
template <typename Model, typename Sample>
TrainResult train_network(Model& model, const std::vector<Sample>& xs, const std::vector<int>& ys,
                          const std::vector<Sample>& val_xs, const std::vector<int>& val_ys,
                          const TrainConfig& config) {
    if (xs.empty() || xs.size() != ys.size())
        throw std::invalid_argument("train_network: empty or mismatched training set");
    const auto& eval_xs = val_xs.empty() ? xs : val_xs;
    const auto& eval_ys = val_xs.empty() ? ys : val_ys;

    Prng rng(config.seed ^ 0x1b8736aa55cc9d01ULL);
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    std::vector<double> best_weights = model.snapshot();
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            std::size_t end = std::min(start + config.batch_size, order.size());
            std::vector<Sample> bx;
            std::vector<int> by;
            bx.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                bx.push_back(xs[order[i]]);
                by.push_back(ys[order[i]]);
            }
            model.train_batch(bx, by, config.learning_rate, config.momentum);
        }
        std::size_t correct = 0;
        for (std::size_t i = 0; i < eval_xs.size(); ++i)
            if (model.predict(eval_xs[i]).class_index == eval_ys[i]) ++correct;
        double acc = static_cast<double>(correct) / static_cast<double>(eval_xs.size());
        result.epoch_accuracy.push_back(acc);
        if (acc > result.best_accuracy || epoch == 1) {
            result.best_accuracy = acc;
            result.best_epoch = epoch;
            best_weights = model.snapshot();
        }
    }
    model.restore(best_weights);
    return result;
}

} // namespace iotid
