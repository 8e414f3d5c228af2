#pragma once

#include <cmath>
#include <cstdint>
#include <thread>
#include <vector>

#include "iotid/ml/tree.hpp"

namespace iotid {

struct ForestConfig {
    std::size_t n_trees = 100;
    std::size_t features_per_split = 0;  // 0 -> ceil(sqrt(d))
    bool bootstrap = true;
    std::uint64_t seed = 0;
    unsigned workers = 0;  // 0 -> hardware concurrency
};

// Bagged CART ensemble; per-tree seeds derive from the master seed, so
// parallel and sequential training produce identical forests.
class RandomForest {
public:
    static RandomForest train(const FeatureMatrix& rows, const std::vector<int>& labels,
                              int class_count, const ForestConfig& config = {}) {
        if (rows.empty() || rows.size() != labels.size())
            throw std::invalid_argument("rf_train: empty or mismatched training set");
        RandomForest f;
        f.class_count_ = class_count;
        f.trees_.resize(config.n_trees);
        std::size_t d = rows[0].size();
        std::size_t m = config.features_per_split;
        if (m == 0) m = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));
        if (m > d) m = d;

        auto train_tree = [&](std::size_t t) {
            Prng rng(config.seed ^ (0x9e3779b97f4a7c15ULL * (t + 1)));
            TreeConfig tc{m};
            if (config.bootstrap) {
                FeatureMatrix sample;
                std::vector<int> sample_labels;
                sample.reserve(rows.size());
                sample_labels.reserve(rows.size());
                for (std::size_t i = 0; i < rows.size(); ++i) {
                    std::size_t j = static_cast<std::size_t>(rng.next_below(rows.size()));
                    sample.push_back(rows[j]);
                    sample_labels.push_back(labels[j]);
                }
                f.trees_[t] = DecisionTree::train(sample, sample_labels, class_count, tc, &rng);
            } else {
                f.trees_[t] = DecisionTree::train(rows, labels, class_count, tc,
                                                  m < d ? &rng : nullptr);
            }
        };

        unsigned workers = config.workers ? config.workers : std::thread::hardware_concurrency();
        if (workers <= 1 || config.n_trees <= 1) {
            for (std::size_t t = 0; t < config.n_trees; ++t) train_tree(t);
        } else {
            std::vector<std::thread> pool;
            std::size_t per = (config.n_trees + workers - 1) / workers;
            for (unsigned w = 0; w < workers; ++w) {
                std::size_t lo = w * per;
                std::size_t hi = std::min(lo + per, config.n_trees);
                if (lo >= hi) break;
                pool.emplace_back([&, lo, hi] {
                    for (std::size_t t = lo; t < hi; ++t) train_tree(t);
                });
            }
            for (auto& th : pool) th.join();
        }
        return f;
    }

    Prediction predict(const std::vector<double>& row) const {
        std::vector<std::size_t> votes(static_cast<std::size_t>(class_count_), 0);
        for (const auto& t : trees_) ++votes[static_cast<std::size_t>(t.predict(row).class_index)];
        int best = 0;
        for (int c = 1; c < class_count_; ++c)
            if (votes[c] > votes[best]) best = c;  // ties keep the lowest index
        return {best, static_cast<double>(votes[static_cast<std::size_t>(best)]) /
                          static_cast<double>(trees_.size())};
    }

    int class_count() const { return class_count_; }
    std::size_t tree_count() const { return trees_.size(); }

    void save(BinWriter& w) const {
        w.i32(class_count_);
        w.u64(trees_.size());
        for (const auto& t : trees_) t.save(w);
    }

    static RandomForest load(BinReader& r) {
        RandomForest f;
        f.class_count_ = r.i32();
        std::uint64_t n = r.u64();
        f.trees_.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i) f.trees_.push_back(DecisionTree::load(r));
        return f;
    }

private:
    int class_count_ = 0;
    std::vector<DecisionTree> trees_;
};

} // namespace iotid
