#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dept {

// Deterministic random stream. Every consumer derives its own stream from
// (seed, purpose, round, source) so results do not depend on scheduling or
// on how many worker threads execute a round.
//
// The engine is std::mt19937_64 (bit-exact across platforms); the
// distributions are hand-rolled because the standard ones are
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static std::uint64_t derive_key(std::uint64_t seed, std::string_view purpose,
                                  std::uint64_t a = 0, std::uint64_t b = 0);

  static Rng derive(std::uint64_t seed, std::string_view purpose,
                    std::uint64_t a = 0, std::uint64_t b = 0) {
    return Rng(derive_key(seed, purpose, a, b));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, bound) via rejection sampling; bound > 0.
  std::size_t uniform_below(std::size_t bound);

  // Uniform double in [0, 1) with 53 random bits.
  double uniform_real();

  // Gaussian via Box-Muller (both values consumed in fixed order).
  double normal(double mean, double stddev);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dept
