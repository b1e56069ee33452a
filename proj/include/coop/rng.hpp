#pragma once

// Counter-based splittable RNG. A stream is (key, counter); draws hash the
// pair, so streams can be split without sharing state and parallel jobs get
// reproducible, independent randomness from (seed, stream id) alone.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace coop {

// splitmix64 finalizer: the standard 64-bit avalanche mix
inline uint64_t mix64(uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
}

class rng {
  public:
    explicit rng(uint64_t seed) : key_(mix64(seed ^ 0x9e3779b97f4a7c15ull)) {}

    // independent child stream; does not advance this stream
    rng split(uint64_t stream) const {
        return rng(key_ ^ mix64(stream ^ 0xa0761d6478bd642full), 0);
    }

    uint64_t next_u64() { return mix64(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

    // [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // [0, n); n > 0
    uint64_t below(uint64_t n) {
        return uint64_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // standard normal via Box-Muller; two draws per call, no cached spare
    double normal() {
        double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        double u2 = double(next_u64() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

  private:
    rng(uint64_t key, uint64_t counter) : key_(key), counter_(counter) {}
    uint64_t key_;
    uint64_t counter_ = 0;
};

} // namespace coop
