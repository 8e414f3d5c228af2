#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace iotid {

// Deterministic, platform-independent generator (splitmix64 core).
// std::mt19937 is portable but the standard distributions are not, so all
// sampling is implemented here.
class Prng {
public:
    explicit Prng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Derive an independent stream, e.g. one per forest tree.
    Prng fork(std::uint64_t stream) {
        return Prng(next_u64() ^ (stream * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t next_below(std::uint64_t bound) {
        // Modulo bias is negligible for bounds far below 2^64.
        return next_u64() % bound;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    double gaussian(double mean, double std) {
        if (!have_spare_) {
            double u1 = next_double();
            double u2 = next_double();
            if (u1 < 1e-300) u1 = 1e-300;
            double r = std::sqrt(-2.0 * std::log(u1));
            spare_ = r * std::sin(2.0 * M_PI * u2);
            have_spare_ = true;
            return mean + std * r * std::cos(2.0 * M_PI * u2);
        }
        have_spare_ = false;
        return mean + std * spare_;
    }

    // Knuth's algorithm; fine for the small rates used here.
    int poisson(double lambda) {
        double l = std::exp(-lambda);
        int k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= next_double();
        } while (p > l);
        return k - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace iotid
