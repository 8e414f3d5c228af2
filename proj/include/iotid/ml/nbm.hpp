#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "iotid/binio.hpp"

namespace iotid {

// Token -> index map for one bag type. Index 0 is reserved for tokens unseen
// during training; indices >= 1 are assigned in first-seen order.
class Vocabulary {
public:
    Vocabulary() { tokens_.push_back("<unk>"); }

    int add(const std::string& token) {
        auto [it, fresh] = index_.try_emplace(token, static_cast<int>(tokens_.size()));
        if (fresh) tokens_.push_back(token);
        return it->second;
    }

    int lookup(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? 0 : it->second;
    }

    std::size_t size() const { return tokens_.size(); }  // includes <unk>

    void save(BinWriter& w) const {
        w.u64(tokens_.size() - 1);
        for (std::size_t i = 1; i < tokens_.size(); ++i) w.str(tokens_[i]);
    }

    static Vocabulary load(BinReader& r) {
        Vocabulary v;
        std::uint64_t n = r.u64();
        for (std::uint64_t i = 0; i < n; ++i) v.add(r.str());
        return v;
    }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

struct Prediction {
    int class_index = 0;
    double confidence = 0.0;
};

// Multinomial Naive Bayes with add-one smoothing over token counts.
class NaiveBayesMultinomial {
public:
    // Each bag is a multiset given as (token index, count) pairs; indices must
    // be < vocab_size. Labels in [0, class_count).
    static NaiveBayesMultinomial train(
        const std::vector<std::vector<std::pair<int, double>>>& bags,
        const std::vector<int>& labels, int class_count, std::size_t vocab_size) {
        if (bags.empty() || bags.size() != labels.size())
            throw std::invalid_argument("nbm_train: empty or mismatched training set");
        NaiveBayesMultinomial m;
        m.class_count_ = class_count;
        m.vocab_size_ = vocab_size;
        std::vector<double> class_docs(class_count, 0.0);
        std::vector<double> class_totals(class_count, 0.0);
        std::vector<std::vector<double>> counts(class_count, std::vector<double>(vocab_size, 0.0));
        for (std::size_t i = 0; i < bags.size(); ++i) {
            int c = labels[i];
            class_docs[c] += 1.0;
            for (auto [tok, n] : bags[i]) {
                counts[c][static_cast<std::size_t>(tok)] += n;
                class_totals[c] += n;
            }
        }
        double total_docs = static_cast<double>(bags.size());
        m.log_prior_.resize(class_count);
        m.log_prob_.resize(class_count);
        for (int c = 0; c < class_count; ++c) {
            // Classes absent from training keep a tiny prior instead of -inf.
            m.log_prior_[c] = class_docs[c] > 0
                                  ? std::log(class_docs[c] / total_docs)
                                  : std::log(0.5 / total_docs);
            m.log_prob_[c].resize(vocab_size);
            double denom = class_totals[c] + static_cast<double>(vocab_size);
            for (std::size_t t = 0; t < vocab_size; ++t)
                m.log_prob_[c][t] = std::log((counts[c][t] + 1.0) / denom);
        }
        return m;
    }

    std::vector<double> posterior(const std::vector<std::pair<int, double>>& bag) const {
        std::vector<double> logp(class_count_);
        for (int c = 0; c < class_count_; ++c) {
            double lp = log_prior_[c];
            for (auto [tok, n] : bag) lp += n * log_prob_[c][static_cast<std::size_t>(tok)];
            logp[c] = lp;
        }
        double mx = logp[0];
        for (double v : logp) mx = std::max(mx, v);
        double sum = 0.0;
        for (double& v : logp) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : logp) v /= sum;
        return logp;
    }

    Prediction predict(const std::vector<std::pair<int, double>>& bag) const {
        auto post = posterior(bag);
        int best = 0;
        for (int c = 1; c < class_count_; ++c)
            if (post[c] > post[best]) best = c;  // ties keep the lowest index
        return {best, post[static_cast<std::size_t>(best)]};
    }

    int class_count() const { return class_count_; }
    std::size_t vocab_size() const { return vocab_size_; }

    void save(BinWriter& w) const {
        w.i32(class_count_);
        w.u64(vocab_size_);
        w.f64_vec(log_prior_);
        for (const auto& row : log_prob_) w.f64_vec(row);
    }

    static NaiveBayesMultinomial load(BinReader& r) {
        NaiveBayesMultinomial m;
        m.class_count_ = r.i32();
        m.vocab_size_ = r.u64();
        m.log_prior_ = r.f64_vec();
        m.log_prob_.resize(m.class_count_);
        for (auto& row : m.log_prob_) row = r.f64_vec();
        return m;
    }

private:
    int class_count_ = 0;
    std::size_t vocab_size_ = 0;
    std::vector<double> log_prior_;
    std::vector<std::vector<double>> log_prob_;
};

} // namespace iotid
