#pragma once

// Self-contained xoshiro256** generator. std::normal_distribution and friends
// are implementation-defined, which breaks bit-reproducibility across
// standard libraries; this one serializes to four words and behaves the same
// everywhere.

#include <array>
#include <cmath>
#include <cstdint>

namespace plaid {

class Rng {
public:
    Rng() : Rng(0x9e3779b97f4a7c15ull) {}

    explicit Rng(std::uint64_t seed) {
        // splitmix64 expansion of the seed into the state
        std::uint64_t x = seed;
        for (auto& w : s_) {
            x += 0x9e3779b97f4a7c15ull;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            w = z ^ (z >> 31);
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0,1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in (0,1], safe as a log argument
    double uniform_pos() { return 1.0 - uniform(); }

    // Box-Muller, no cached spare so the state is exactly the four words
    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    std::array<std::uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

    // independent stream for a sub-task
    Rng fork() { return Rng(next_u64() ^ 0xd1b54a32d192ed03ull); }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<std::uint64_t, 4> s_{};
};

}  // namespace plaid
