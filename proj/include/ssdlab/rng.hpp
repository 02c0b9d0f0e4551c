#pragma once

#include <cmath>
#include <cstdint>

namespace ssdlab {

namespace detail {
// SplitMix64 finalizer; full avalanche on 64 bits.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}
}  // namespace detail

// Counter-based random stream: the k-th draw is a pure function of
// (seed, stream_id, k), so identical (seed, stream_id) pairs reproduce
// identical sequences on any host and parallel workers can derive
// independent streams without shared state.
struct RngStream {
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
    std::uint64_t counter = 0;

    RngStream() = default;
    RngStream(std::uint64_t s, std::uint64_t id = 0) : seed(s), stream_id(id) {}

    // Independent stream derived from this one; stable under nesting.
    RngStream derive(std::uint64_t k) const {
        return RngStream(seed, detail::mix64(stream_id ^ detail::mix64(k + 0x1234567ULL)));
    }

    std::uint64_t next_u64() {
        std::uint64_t key = detail::mix64(seed) ^ detail::mix64(stream_id + 0xDEADBEEFULL);
        return detail::mix64(key + (counter++) * 0x9E3779B97F4A7C15ULL);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1].
    double uniform_open() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; consumes two uniforms per draw so the
    // sequence stays a pure function of the counter.
    double normal() {
        double u1 = uniform_open();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        // Rejection-free modulo bias is negligible for the n used here, but
        // use the multiply-shift trick anyway.
        unsigned __int128 r = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::uint64_t>(r >> 64);
    }
};

}  // namespace ssdlab
