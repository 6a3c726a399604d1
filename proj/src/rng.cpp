#include "morse/rng.hpp"

#include <stdexcept>

namespace morse {

namespace {

uint64_t splitmix64(uint64_t& x) {
    x += 0x9E3779B97f4A7C15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(uint64_t seed) {
    uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
}

uint64_t Rng::next_u64() {
    uint64_t result = rotl(state_[1] * 5, 7) * 9;
    uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

size_t Rng::below(size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    uint64_t bound = n;
    uint64_t threshold = (~uint64_t{0} - bound + 1) % bound;  // 2^64 mod n
    while (true) {
        uint64_t r = next_u64();
        if (r >= threshold) return static_cast<size_t>(r % bound);
    }
}

}  // namespace morse
