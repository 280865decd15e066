#include "cplab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cplab {

std::uint64_t SeededRng::mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t SeededRng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("SeededRng::below(0)");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do x = next_u64();
  while (x >= limit);
  return x % n;
}

std::size_t SeededRng::categorical(std::span<const double> weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw std::invalid_argument("categorical: weights must have positive sum");
  double u = uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  // Rounding can leave u just past the last bucket.
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return i;
  return weights.size() - 1;
}

SeededRng SeededRng::fork(std::string_view label) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return SeededRng(mix(seed_ ^ mix(h)));
}

NdArray gumbel_sample(SeededRng& rng, const Shape& shape) {
  NdArray out(shape);
  for (auto& x : out.values()) {
    const double u = std::clamp(rng.uniform(), kGumbelClamp, 1.0 - kGumbelClamp);
    x = -std::log(-std::log(u));
  }
  return out;
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  if (k == 0 || k > scores.size())
    throw std::invalid_argument("top_k: k=" + std::to_string(k) + " invalid for " +
                                std::to_string(scores.size()) + " scores");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

}  // namespace cplab
