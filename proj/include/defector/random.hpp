#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

#include "defector/error.hpp"

namespace defector {

/// The one engine used everywhere. Each task owns its own instance.
using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Derives an independent stream seed from a master seed and a path of task
/// indices, e.g. derive_seed(master, {point, fold}). Pure function of its inputs,
/// so results never depend on scheduling.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = detail::splitmix64(master ^ 0x6a09e667f3bcc909ULL);
  for (auto p : path) h = detail::splitmix64(h ^ detail::splitmix64(p + 0x3c6ef372fe94f82bULL));
  return h;
}

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  return Rng{derive_seed(master, path)};
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

namespace detail {
__extension__ using u128 = unsigned __int128;
}  // namespace detail

/// Unbiased integer in [0, bound) (Lemire's multiply-shift with rejection).
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
  if (bound == 0) throw ContractError("uniform_below: bound must be positive");
  detail::u128 m = static_cast<detail::u128>(rng()) * bound;
  auto low = static_cast<std::uint64_t>(m);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      m = static_cast<detail::u128>(rng()) * bound;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// Draws an index with probability proportional to its weight, by inversion
/// over the cumulative weights. Zero-weight entries are never drawn.
class WeightedSampler {
 public:
  WeightedSampler() = default;

  explicit WeightedSampler(std::span<const double> weights) {
    cumulative_.reserve(weights.size());
    double acc = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("weights must be finite and non-negative");
      acc += w;
      cumulative_.push_back(acc);
    }
    if (!(acc > 0.0)) throw ConfigError("weights must have a positive sum");
    total_ = acc;
  }

  std::size_t size() const noexcept { return cumulative_.size(); }
  double total() const noexcept { return total_; }

  std::size_t operator()(Rng& rng) const {
    const double u = uniform01(rng) * total_;
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    // u < total_ always holds, but guard against rounding in the last bucket.
    if (it == cumulative_.end()) --it;
    auto idx = static_cast<std::size_t>(it - cumulative_.begin());
    // Skip any trailing zero-weight slot hit by rounding.
    while (idx > 0 && cumulative_[idx] == cumulative_[idx - 1]) --idx;
    return idx;
  }

 private:
  std::vector<double> cumulative_;
  double total_ = 0.0;
};

}  // namespace defector
