#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace stx {

// Deterministic PRNG (splitmix64 core) with hand-rolled distributions so
// seeded runs are bit-stable across platforms and standard library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform double in [0, 1).
  double uniform();
  double uniform(double lo, double hi);

  // Uniform integer in [0, n).
  std::int64_t uniform_int(std::int64_t n);

  // Standard normal via Box-Muller.
  double normal();

  // Uniform random permutation of {0, ..., n-1}.
  std::vector<std::int64_t> permutation(std::int64_t n);

  // k distinct values from {0, ..., n-1}, uniform over k-subsets, in draw order.
  std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k);

  // Uniform random derangement (permutation with no fixed point); n >= 2.
  std::vector<std::int64_t> derangement(std::int64_t n);

  // Derives an independent stream seed from a base seed and context tags.
  static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> parts);

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace stx
