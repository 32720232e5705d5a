#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "mcnn/common.hpp"

namespace mcnn {

// Counter-based generator built on the SplitMix64 finalizer. Draw k of a
// stream with seed s is mix64(s + (k+1) * GOLDEN_GAMMA), so the state is
// just (seed, counter) and any position is reachable in O(1). The same
// seed and call sequence produce the same stream on every platform, which
// is what makes augmentation and initialization reproducible.
class Rng {
  public:
    Rng() : Rng(0) {}
    explicit Rng(std::uint64_t seed) : seed_(seed), counter_(0) {}

    static Rng from_state(std::uint64_t seed, std::uint64_t counter) {
        Rng r(seed);
        r.counter_ = counter;
        return r;
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() {
        ++counter_;
        return mix64(seed_ + counter_ * kGamma);
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Always consumes one draw, even for a degenerate range, so the
    // number of draws never depends on parameter values.
    double uniform(double lo, double hi) {
        check_arg(lo <= hi, "rng.uniform: lo > hi");
        const double u = next_unit();
        if (lo == hi) return lo;
        return lo + (hi - lo) * u;
    }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        check_arg(n > 0, "rng.uniform_index: n == 0");
        return static_cast<std::uint64_t>(next_unit() * static_cast<double>(n)) % n;
    }

    // Box-Muller; always consumes two draws so call counts stay predictable.
    double normal(double mean, double std) {
        check_arg(std >= 0.0, "rng.normal: std < 0");
        double u1 = 1.0 - next_unit();  // (0, 1], keeps log finite
        double u2 = next_unit();
        if (std == 0.0) return mean;
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + std * r * std::cos(2.0 * kPi * u2);
    }

    // Fisher-Yates, one uniform_index per position from the back.
    template <typename V>
    void shuffle(std::vector<V>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent stream from (this stream's seed, tags...).
    // Used to give every (epoch, sample) pair its own generator.
    Rng derive(std::uint64_t tag) const {
        return Rng(mix64(seed_ ^ mix64(tag + kGamma)));
    }
    Rng derive(std::uint64_t tag_a, std::uint64_t tag_b) const {
        return derive(tag_a).derive(tag_b);
    }

    static std::uint64_t mix64(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ULL;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBULL;
        z ^= z >> 31;
        return z;
    }

  private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
    static constexpr double kPi = 3.14159265358979323846;

    std::uint64_t seed_;
    std::uint64_t counter_;
};

}  // namespace mcnn
