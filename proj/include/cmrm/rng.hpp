#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace cmrm {

/// Deterministic splittable counter RNG (splitmix64 core). Every stream in the
/// project derives from a (seed, counter) pair so samples, epochs and model
/// init are independent and reproducible bit-for-bit.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Uniform in [0, n). Modulo bias is O(n / 2^64), irrelevant for small n.
    std::uint64_t below(std::uint64_t n) {
        return next_u64() % n;
    }

    // Box-Muller with cached spare; avoids log(0) by using 1 - u.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - next_double();
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double gaussian(double mean, double std) { return mean + std * gaussian(); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) {
            return;
        }
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // State accessors for checkpointing.
    std::uint64_t state() const { return state_; }
    bool has_spare() const { return has_spare_; }
    double spare() const { return spare_; }
    void restore(std::uint64_t state, bool has_spare, double spare) {
        state_ = state;
        has_spare_ = has_spare;
        spare_ = spare;
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stream derivation: mixes a seed with a stream tag / counter so that
// different purposes draw from decorrelated generators.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    Rng r(seed ^ (0xA0761D6478BD642Full + stream * 0xE7037ED1A0B428DBull));
    return r.next_u64();
}

} // namespace cmrm
