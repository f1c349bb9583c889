#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace choir {

// Malformed or out-of-contract input data (files, schemas, token streams).
class data_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Numerical failure at runtime (non-finite values, diverged training).
class numeric_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// PCG-XSH-RR 64/32 generator. Two words of state, trivially serializable,
// identical streams on every platform.
class Pcg32 {
  public:
    explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0xda3e39cb94b95bdbULL)
        : state_(0), inc_((stream << 1u) | 1u) {
        next();
        state_ += seed;
        next();
    }

    static Pcg32 from_state(std::uint64_t state, std::uint64_t inc) {
        Pcg32 g(0);
        g.state_ = state;
        g.inc_ = inc;
        return g;
    }

    std::uint32_t next() {
        std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        auto rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    std::uint64_t next64() {
        std::uint64_t hi = next();
        return (hi << 32) | next();
    }

    // Uniform in [0, bound). Multiply-shift; bias is < 2^-32, irrelevant here.
    std::uint32_t below(std::uint32_t bound) {
        return static_cast<std::uint32_t>((static_cast<std::uint64_t>(next()) * bound) >> 32);
    }

    // Uniform double in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    std::uint64_t state() const { return state_; }
    std::uint64_t inc() const { return inc_; }

  private:
    std::uint64_t state_;
    std::uint64_t inc_;
};

}  // namespace choir
