#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace protovit {

// SplitMix64 generator. Chosen over std::mt19937 + <random> distributions
// because distribution output is implementation-defined; this keeps seeded
// runs bit-identical across compilers. Substreams are derived by hashing
// (seed, stream), so e.g. evaluation episode i never depends on how much
// randomness training consumed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    static Rng substream(std::uint64_t seed, std::uint64_t stream) {
        Rng r(mix(seed ^ 0x9e3779b97f4a7c15ull));
        r.state_ = mix(r.next_u64() ^ mix(stream));
        return r;
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    // Unbiased integer in [0, bound) via Lemire's multiply-shift with rejection.
    std::uint64_t uniform_below(std::uint64_t bound) {
        if (bound <= 1) return 0;
        while (true) {
            std::uint64_t x = next_u64();
            __uint128_t m = static_cast<__uint128_t>(x) * bound;
            std::uint64_t lo = static_cast<std::uint64_t>(m);
            if (lo >= bound || lo >= (0ull - bound) % bound)
                return static_cast<std::uint64_t>(m >> 64);
        }
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller (one value per call, no cached spare).
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double truncated_normal(double stddev, double truncation) {
        while (true) {
            double x = normal() * stddev;
            if (std::abs(x) <= truncation) return x;
        }
    }

    // First k entries of a Fisher-Yates shuffle; order of the k picks is random.
    template <class T>
    std::vector<T> sample_without_replacement(std::vector<T> pool, std::size_t k) {
        for (std::size_t i = 0; i < k && i + 1 < pool.size(); ++i) {
            std::size_t j = i + static_cast<std::size_t>(uniform_below(pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(std::min(k, pool.size()));
        return pool;
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

}  // namespace protovit
