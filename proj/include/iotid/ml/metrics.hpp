#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace iotid {

struct ClassScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;  // truth rows of this class
};

struct F1Report {
    std::vector<ClassScore> per_class;
    double macro_f1 = 0.0;     // unweighted mean over classes present in truth
    double weighted_f1 = 0.0;  // support-weighted mean
    double accuracy = 0.0;
};

inline F1Report f1_scores(const std::vector<int>& predictions, const std::vector<int>& truth,
                          int class_count) {
    if (predictions.size() != truth.size())
        throw std::invalid_argument("f1_scores: prediction/truth length mismatch");
    F1Report rep;
    rep.per_class.resize(static_cast<std::size_t>(class_count));
    std::vector<std::size_t> tp(class_count, 0), fp(class_count, 0), fn(class_count, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        int p = predictions[i], t = truth[i];
        if (p == t) {
            ++tp[t];
            ++correct;
        } else {
            if (p >= 0 && p < class_count) ++fp[p];
            ++fn[t];
        }
        ++rep.per_class[static_cast<std::size_t>(t)].support;
    }
    double macro_sum = 0.0, weighted_sum = 0.0;
    std::size_t present = 0;
    for (int c = 0; c < class_count; ++c) {
        ClassScore& s = rep.per_class[static_cast<std::size_t>(c)];
        double tpfp = static_cast<double>(tp[c] + fp[c]);
        double tpfn = static_cast<double>(tp[c] + fn[c]);
        s.precision = tpfp > 0 ? static_cast<double>(tp[c]) / tpfp : 0.0;
        s.recall = tpfn > 0 ? static_cast<double>(tp[c]) / tpfn : 0.0;
        double pr = s.precision + s.recall;
        s.f1 = pr > 0 ? 2.0 * s.precision * s.recall / pr : 0.0;
        if (s.support > 0) {
            ++present;
            macro_sum += s.f1;
            weighted_sum += s.f1 * static_cast<double>(s.support);
        }
    }
    if (present > 0) rep.macro_f1 = macro_sum / static_cast<double>(present);
    if (!truth.empty()) {
        rep.weighted_f1 = weighted_sum / static_cast<double>(truth.size());
        rep.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
    }
    return rep;
}

} // namespace iotid
