#pragma once

#include <cstdint>

namespace forge {

// 64-bit linear congruential generator with the PCG multiplier/increment.
// Each draw advances the state and yields the high 32 bits. The algorithm
// is pinned so that seeded sequences reproduce bit-exactly across
// platforms and language reimplementations.
class rng {
public:
    explicit rng(std::uint64_t seed) : state_(seed) {}

    std::uint32_t next_u32() {
        state_ = state_ * 6364136223846793005ULL + 1442695040888963407ULL;
        return static_cast<std::uint32_t>(state_ >> 32);
    }

    // uniform in [0, 1); 2^-32 granularity
    double next_double() { return next_u32() * 0x1p-32; }

    double uniform(double lo, double hi) { return lo + next_double() * (hi - lo); }

    // uniform in [0, n); n must be > 0. Modulo bias is irrelevant for the
    // small bounds used here.
    std::uint32_t below(std::uint32_t n) { return next_u32() % n; }

private:
    std::uint64_t state_;
};

} // namespace forge
