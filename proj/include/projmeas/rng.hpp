#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "projmeas/errors.hpp"

namespace projmeas {

/// Counter-based splittable generator. Each draw is a pure function of
/// (key, counter), and split() derives an independent child key, so per-trial
/// substreams are stable no matter how trials are scheduled across workers.
class SplitRng {
  public:
    explicit SplitRng(std::uint64_t seed) : key_(mix(seed + kGamma)) {}

    /// Child generator for a named substream; independent of this one's state.
    [[nodiscard]] SplitRng split(std::uint64_t stream) const {
        SplitRng child(0);
        child.key_ = mix(key_ ^ mix(stream * kGamma + kSplitSalt));
        child.counter_ = 0;
        return child;
    }

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; one pair is drawn every two calls.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // Guard against log(0).
        if (u1 <= 0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * kPi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Index sample from a cumulative weight table (last entry ~ 1).
    std::size_t categorical(const std::vector<double>& cumulative) {
        const double u = uniform();
        std::size_t lo = 0, hi = cumulative.size() - 1;
        while (lo < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (u < cumulative[mid])
                hi = mid;
            else
                lo = mid + 1;
        }
        return lo;
    }

  private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
    static constexpr std::uint64_t kSplitSalt = 0xD1B54A32D192ED03ull;
    static constexpr double kPi = 3.14159265358979323846;

    // SplitMix64 finalizer.
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0;
    bool have_spare_ = false;
};

}  // namespace projmeas
