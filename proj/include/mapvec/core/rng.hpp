#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace mapvec {

// Portable seeded generator.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The standard distributions are implementation-defined, so every
// variate is derived here with explicit formulas:
//
//   uniform()  = (engine() >> 11) * 2^-53                     in [0, 1)
//   normal()   = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)           Box-Muller, one
//                                                              variate per call
//   bernoulli(p) = uniform() < p
//
// A port to another language reproduces the stream bit-for-bit given a
// correctly-rounded libm.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(1.0 - u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Derives an independent child seed, e.g. one stream per frame.
  std::uint64_t fork() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mapvec
