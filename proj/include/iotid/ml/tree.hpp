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

using FeatureMatrix = std::vector<std::vector<double>>;  // row-major, n x d

struct TreeConfig {
    // 0 means "use all features at every split" (plain CART).
    std::size_t features_per_split = 0;
};

// CART with Gini impurity. Thresholds sit at midpoints of sorted distinct
// values; growth stops at pure nodes, nodes under 2 samples, or when no split
// reduces impurity. Feature subsets (for forests) are drawn per split.
class DecisionTree {
public:
    static DecisionTree train(const FeatureMatrix& rows, const std::vector<int>& labels,
                              int class_count, const TreeConfig& config = {},
                              Prng* rng = nullptr) {
        if (rows.empty() || rows.size() != labels.size())
            throw std::invalid_argument("dt_train: empty or mismatched training set");
        DecisionTree t;
        t.class_count_ = class_count;
        std::vector<std::size_t> indices(rows.size());
        std::iota(indices.begin(), indices.end(), 0);
        std::size_t d = rows[0].size();
        std::size_t m = config.features_per_split;
        if (m == 0 || m > d) m = d;
        t.build(rows, labels, indices, m, rng);
        return t;
    }

    Prediction predict(const std::vector<double>& row) const {
        std::size_t node = 0;
        while (!nodes_[node].is_leaf())
            node = row[static_cast<std::size_t>(nodes_[node].feature)] <= nodes_[node].threshold
                       ? nodes_[node].left
                       : nodes_[node].right;
        return {nodes_[node].klass, nodes_[node].confidence};
    }

    int class_count() const { return class_count_; }
    std::size_t node_count() const { return nodes_.size(); }

    void save(BinWriter& w) const {
        w.i32(class_count_);
        w.u64(nodes_.size());
        for (const auto& n : nodes_) {
            w.i32(n.feature);
            w.f64(n.threshold);
            w.u32(n.left);
            w.u32(n.right);
            w.i32(n.klass);
            w.f64(n.confidence);
        }
    }

    static DecisionTree load(BinReader& r) {
        DecisionTree t;
        t.class_count_ = r.i32();
        std::uint64_t n = r.u64();
        t.nodes_.resize(n);
        for (auto& node : t.nodes_) {
            node.feature = r.i32();
            node.threshold = r.f64();
            node.left = r.u32();
            node.right = r.u32();
            node.klass = r.i32();
            node.confidence = r.f64();
        }
        return t;
    }

private:
    struct Node {
        std::int32_t feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        std::uint32_t left = 0;
        std::uint32_t right = 0;
        std::int32_t klass = 0;
        double confidence = 0.0;

        bool is_leaf() const { return feature < 0; }
    };

    std::uint32_t build(const FeatureMatrix& rows, const std::vector<int>& labels,
                        std::vector<std::size_t>& indices, std::size_t m, Prng* rng) {
        std::vector<std::size_t> counts(static_cast<std::size_t>(class_count_), 0);
        for (std::size_t i : indices) ++counts[static_cast<std::size_t>(labels[i])];
        std::size_t n = indices.size();
        int majority = 0;
        for (int c = 1; c < class_count_; ++c)
            if (counts[c] > counts[majority]) majority = c;
        bool pure = counts[static_cast<std::size_t>(majority)] == n;

        std::int32_t best_feature = -1;
        double best_threshold = 0.0, best_impurity = 0.0;
        if (!pure && n >= 2) {
            double parent = gini(counts, n);
            best_impurity = parent;
            for (std::size_t f : feature_order(rows[0].size(), m, rng)) {
                double thr, imp;
                if (best_split_on(rows, labels, indices, f, thr, imp) &&
                    imp < best_impurity - 1e-12) {
                    best_impurity = imp;
                    best_feature = static_cast<std::int32_t>(f);
                    best_threshold = thr;
                }
            }
        }

        std::uint32_t id = static_cast<std::uint32_t>(nodes_.size());
        nodes_.emplace_back();
        if (best_feature < 0) {
            nodes_[id].klass = majority;
            nodes_[id].confidence =
                static_cast<double>(counts[static_cast<std::size_t>(majority)]) /
                static_cast<double>(n);
            return id;
        }
        std::vector<std::size_t> left, right;
        for (std::size_t i : indices) {
            (rows[i][static_cast<std::size_t>(best_feature)] <= best_threshold ? left : right)
                .push_back(i);
        }
        indices.clear();
        indices.shrink_to_fit();
        nodes_[id].feature = best_feature;
        nodes_[id].threshold = best_threshold;
        std::uint32_t l = build(rows, labels, left, m, rng);
        std::uint32_t r = build(rows, labels, right, m, rng);
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    // Weighted child Gini for the best threshold on one feature; false when
    // the feature is constant over the node.
    bool best_split_on(const FeatureMatrix& rows, const std::vector<int>& labels,
                       const std::vector<std::size_t>& indices, std::size_t f, double& threshold,
                       double& impurity) const {
        std::vector<std::pair<double, int>> vals;
        vals.reserve(indices.size());
        for (std::size_t i : indices) vals.emplace_back(rows[i][f], labels[i]);
        std::sort(vals.begin(), vals.end());
        if (vals.front().first == vals.back().first) return false;

        std::size_t n = vals.size();
        std::vector<double> left_counts(static_cast<std::size_t>(class_count_), 0.0);
        std::vector<double> right_counts(static_cast<std::size_t>(class_count_), 0.0);
        for (const auto& [v, c] : vals) right_counts[static_cast<std::size_t>(c)] += 1.0;
        double left_sq = 0.0, right_sq = 0.0;
        for (double c : right_counts) right_sq += c * c;

        bool found = false;
        double best = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            auto c = static_cast<std::size_t>(vals[i].second);
            left_sq += 2.0 * left_counts[c] + 1.0;
            right_sq += -2.0 * right_counts[c] + 1.0;
            left_counts[c] += 1.0;
            right_counts[c] -= 1.0;
            if (vals[i].first == vals[i + 1].first) continue;
            double nl = static_cast<double>(i + 1);
            double nr = static_cast<double>(n - i - 1);
            // weighted gini = (nl*(1 - left_sq/nl^2) + nr*(1 - right_sq/nr^2)) / n
            double imp = (nl - left_sq / nl + nr - right_sq / nr) / static_cast<double>(n);
            if (!found || imp < best) {
                found = true;
                best = imp;
                threshold = vals[i].first + (vals[i + 1].first - vals[i].first) / 2.0;
            }
        }
        impurity = best;
        return found;
    }

    static double gini(const std::vector<std::size_t>& counts, std::size_t n) {
        double sq = 0.0;
        for (std::size_t c : counts) {
            double p = static_cast<double>(c) / static_cast<double>(n);
            sq += p * p;
        }
        return 1.0 - sq;
    }

    // Identity order when all features participate, so a degenerate forest
    // tie-breaks exactly like a plain tree.
    static std::vector<std::size_t> feature_order(std::size_t d, std::size_t m, Prng* rng) {
        std::vector<std::size_t> order(d);
        std::iota(order.begin(), order.end(), 0);
        if (m >= d || rng == nullptr) return order;
        for (std::size_t i = 0; i < m; ++i)
            std::swap(order[i], order[i + rng->next_below(d - i)]);
        order.resize(m);
        std::sort(order.begin(), order.end());
        return order;
    }

    int class_count_ = 0;
    std::vector<Node> nodes_;
};

} // namespace iotid
