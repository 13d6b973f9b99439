#pragma once

#include <cmath>
#include <cstdint>

namespace mindkit {

// Counter-based deterministic RNG. Every draw is a pure function of
// (seed, counter), so independent streams can be derived for scenes, steps
// and workers without sharing state. splitmix64 finalizer.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    return mix64(seed ^ mix64(stream + 0x51ed270b7a1c1d2bull));
}

class Rng {
public:
    explicit Rng(uint64_t seed = 0) : seed_(seed) {}

    uint64_t at(uint64_t counter) const { return mix64(seed_ + counter * 0x632be59bd9b4e019ull); }

    uint64_t next_u64() { return at(counter_++); }

    // uniform in [0,1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    // Box-Muller; two uniforms per draw, cos branch only, so each gaussian is
    // a pure function of its counter pair.
    double gaussian() {
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
        double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    uint64_t seed() const { return seed_; }
    Rng fork(uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }

private:
    uint64_t seed_;
    uint64_t counter_ = 0;
};

}  // namespace mindkit
