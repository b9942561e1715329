#pragma once

#include <cmath>
#include <cstdint>

namespace srec {

// Counter-based random streams.  A stream is keyed by (seed, entity id,
// domain) and produces the n-th variate directly from n, so draws are
// independent of evaluation order, thread batching, and of how many other
// entities exist.  Paired experiments reuse a stream verbatim to get common
// random numbers.
namespace rng {

enum class Domain : std::uint64_t {
    InitialInventory = 1,
    StepShock = 2,
    ProbePath = 3,
};

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

// splitmix64 finaliser
constexpr std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
}

struct Stream {
    std::uint64_t key;

    Stream(std::uint64_t seed, std::uint64_t entity, Domain domain)
        : key(mix64(mix64(seed + kGolden) ^ mix64((entity + 1) * 0xd1b54a32d192ed03ull)
                    ^ (static_cast<std::uint64_t>(domain) * 0x8cb92ba72f3d8dd7ull))) {}

    std::uint64_t bits(std::uint64_t counter) const {
        return mix64(key ^ mix64(counter * kGolden + 0x2545f4914f6cdd1dull));
    }

    // uniform on (0,1), never exactly 0 or 1
    double uniform(std::uint64_t counter) const {
        return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
    }

    // standard normal via Box-Muller on counters (2n, 2n+1)
    double normal(std::uint64_t counter) const {
        const double u1 = uniform(2 * counter);
        const double u2 = uniform(2 * counter + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }
};

}  // namespace rng
}  // namespace srec
