#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "morel/core/tensor.hpp"

namespace morel {

namespace detail {
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace detail

/// Deterministic random stream. mt19937_64 supplies bits (bit-exact across
/// platforms per the standard); the value transforms are our own so results
/// do not depend on libstdc++ distribution internals.
///
/// All randomness in the toolkit fans out from one root seed via fork(),
/// so a single seed reproduces a whole run.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), engine_(detail::splitmix64(seed)) {}

  uint64_t seed() const { return seed_; }
  uint64_t next_u64() { return engine_(); }

  /// Derive an independent stream for a named subsystem.
  Rng fork(std::string_view tag) const {
    return Rng(detail::splitmix64(seed_ ^ detail::fnv1a(tag)));
  }
  /// Derive an independent stream indexed by (tag, n), e.g. per epoch or step.
  Rng fork(std::string_view tag, uint64_t n) const {
    return Rng(detail::splitmix64(detail::splitmix64(seed_ ^ detail::fnv1a(tag)) + n));
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (deterministic, no cached state).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, n), n > 0. Rejection-free for our purposes.
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(uniform() * static_cast<double>(n)) % n;
  }

  /// Fisher-Yates with our own index draws; stable across platforms.
  template <typename V>
  void shuffle(std::vector<V>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  template <typename T>
  void fill_uniform(Tensor<T>& t, T lo, T hi) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
  }

  template <typename T>
  void fill_normal(Tensor<T>& t, T mean, T stddev) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(mean + stddev * normal());
  }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace morel
