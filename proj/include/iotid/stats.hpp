#pragma once

#include <cmath>
#include <span>

namespace iotid {

struct Moments {
    double mean = 0.0;
    double std = 0.0;
    double var = 0.0;
    double skew = 0.0;
    double kurtosis = 0.0;  // non-excess

    bool operator==(const Moments&) const = default;
};

// Population moments (divide by n). Empty and single-element series yield all
// zeros; zero variance yields skew = kurtosis = 0, so every output is finite.
inline Moments moments(std::span<const double> series) {
    Moments m;
    std::size_t n = series.size();
    if (n < 1) return m;
    double sum = 0.0;
    for (double x : series) sum += x;
    m.mean = sum / static_cast<double>(n);
    if (n < 2) return m;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double x : series) {
        double d = x - m.mean;
        double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    double dn = static_cast<double>(n);
    m2 /= dn;
    m3 /= dn;
    m4 /= dn;
    m.var = m2;
    m.std = std::sqrt(m2);
    if (m2 > 0.0) {
        m.skew = m3 / (m2 * m.std);
        m.kurtosis = m4 / (m2 * m2);
    }
    return m;
}

} // namespace iotid
