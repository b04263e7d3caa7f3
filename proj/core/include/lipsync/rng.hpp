#pragma once

#include <cmath>
#include <cstdint>

namespace lipsync {

// Deterministic, serializable generator (splitmix64 core). The whole state is
// one u64, which makes checkpoint/resume trivial and keeps runs reproducible
// across standard-library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1]; never zero, safe under log().
    double uniform_open() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

    // Standard normal via Box-Muller. No cached spare: the state stays a
    // single u64 so serialization cannot drift.
    double normal() {
        double u1 = uniform_open();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // Integer in [0, n).
    uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

    // Independent stream derived from (seed, stream id). Used to hand each
    // worker or pipeline stage its own generator.
    static Rng derive(uint64_t seed, uint64_t stream) {
        Rng mix(seed ^ (stream * 0xd6e8feb86659fd93ULL + 0x2545f4914f6cdd1dULL));
        uint64_t s = mix.next_u64();
        return Rng(s);
    }

private:
    uint64_t state_;
};

}  // namespace lipsync
