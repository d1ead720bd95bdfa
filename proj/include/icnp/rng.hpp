#pragma once

#include <cmath>
#include <cstdint>

namespace icnp {

// Counter-based 64-bit generator: output i is a hash of (key, i), so state is
// just (key, counter) and is trivially serializable. Identical seed gives a
// bit-identical stream. Independent streams are derived with split().
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc908ull)), counter_(0) {}
    Rng(std::uint64_t key, std::uint64_t counter, bool /*raw*/) : key_(key), counter_(counter) {}

    std::uint64_t next_u64() { return mix(key_ + counter_++ * 0x9e3779b97f4a7c15ull); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Modulo bias is negligible for n << 2^64.
    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    // Inclusive range {lo..hi}.
    std::int64_t uniform_range(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // Box-Muller without a cached spare so that (key, counter) is the whole state.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Deterministic child stream; children with distinct ids are independent.
    Rng split(std::uint64_t stream_id) const {
        return Rng(mix(key_ ^ mix(stream_id + 0xbb67ae8584caa73bull)), 0, true);
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

   private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_;
};

}  // namespace icnp
