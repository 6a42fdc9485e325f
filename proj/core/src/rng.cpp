#include "dept/rng.hpp"

#include <cmath>

namespace dept {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::derive_key(std::uint64_t seed, std::string_view purpose,
                              std::uint64_t a, std::uint64_t b) {
  // FNV-1a over the purpose string folded into a splitmix chain.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t state = seed;
  std::uint64_t key = splitmix64(state);
  state ^= h;
  key ^= splitmix64(state);
  state ^= a + 0x9e3779b97f4a7c15ULL;
  key ^= splitmix64(state);
  state ^= b + 0xd1b54a32d192ed03ULL;
  key ^= splitmix64(state);
  return key;
}

std::size_t Rng::uniform_below(std::size_t bound) {
  const std::uint64_t n = static_cast<std::uint64_t>(bound);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return static_cast<std::size_t>(v % n);
}

double Rng::uniform_real() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1, u2;
  do {
    u1 = uniform_real();
  } while (u1 <= 0.0);
  u2 = uniform_real();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return mean + stddev * r * std::cos(theta);
}

}  // namespace dept
