#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace morse {

/// Deterministic xoshiro256** generator, seeded through splitmix64.
/// The stream depends only on the seed, not on platform or standard
/// library, so identical seeds reproduce identical runs everywhere.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();

    /// Uniform double in [0, 1) with 53 bits of precision.
    double uniform();
    double uniform(double lo, double hi);

    /// Uniform integer in [0, n), n > 0. Rejection sampling, no modulo bias.
    size_t below(size_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::array<uint64_t, 4> state_;
};

}  // namespace morse
