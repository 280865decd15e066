#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "cplab/ndarray.hpp"

namespace cplab {

// Counter-based generator: output i is a SplitMix64 finalizer applied to
// (key, i). Streams are bit-reproducible across runs and platforms.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) : seed_(seed), key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  // Picks index i with probability weights[i] / sum(weights).
  std::size_t categorical(std::span<const double> weights);

  // Independent stream derived from this generator's seed and `label` only;
  // it does not consume or depend on the parent's counter.
  SeededRng fork(std::string_view label) const;

  static std::uint64_t mix(std::uint64_t z);

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline constexpr double kGumbelClamp = 1e-12;

// i.i.d. standard Gumbel draws -log(-log(u)), u clamped to [1e-12, 1 - 1e-12].
NdArray gumbel_sample(SeededRng& rng, const Shape& shape);

// Indices of the k largest scores in descending order; ties go to the lower index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

}  // namespace cplab
