#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "spikemix/tensor.hpp"

namespace spikemix {

// Seeded generator with platform-independent draws. std::mt19937_64 output is
// fully specified by the standard; the std:: distributions are not, so
// uniform/normal draws are derived here from raw 64-bit words.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return engine_(); }

    // [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Box-Muller, no cached second value so the stream stays simple to reason about.
    double normal(double mean = 0.0, double stddev = 1.0);
    // Uniform integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n);

    Tensor uniform_tensor(Shape shape, double lo, double hi);
    Tensor normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0);
    Tensor bernoulli_tensor(Shape shape, double p);

    std::vector<std::size_t> permutation(std::size_t n);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace spikemix
