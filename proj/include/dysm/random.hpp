#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace dysm {

using Rng = std::mt19937_64;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a root seed and a path of tags,
/// e.g. derive_seed(seed, {stream::chain, c}) for chain c.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(root);
  for (auto tag : path) s = mix64(s ^ mix64(tag + 0x632be59bd9b4e019ULL));
  return s;
}

namespace stream {
inline constexpr std::uint64_t chain = 1;
inline constexpr std::uint64_t window = 2;
inline constexpr std::uint64_t sex = 3;
inline constexpr std::uint64_t forecast = 4;
inline constexpr std::uint64_t synthetic = 5;
inline constexpr std::uint64_t init = 6;
}  // namespace stream

inline double draw_normal(Rng& rng, double mean = 0.0, double sd = 1.0) {
  return std::normal_distribution<double>(mean, sd)(rng);
}

inline double draw_uniform(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Inverse-Gamma with shape/rate parametrization: 1/X, X ~ Gamma(shape, rate).
inline double draw_inv_gamma(Rng& rng, double shape, double rate) {
  const double g = std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
  return 1.0 / g;
}

inline double draw_student_t(Rng& rng, double dof) {
  return std::student_t_distribution<double>(dof)(rng);
}

/// Multinomial draw by sequential conditional binomials.
inline std::vector<std::int64_t> draw_multinomial(Rng& rng, std::int64_t n, std::span<const double> probs) {
  std::vector<std::int64_t> out(probs.size(), 0);
  double remaining_mass = 1.0;
  std::int64_t remaining = n;
  for (std::size_t i = 0; i < probs.size() && remaining > 0; ++i) {
    if (i + 1 == probs.size()) {
      out[i] = remaining;
      break;
    }
    const double p = remaining_mass > 0.0 ? std::clamp(probs[i] / remaining_mass, 0.0, 1.0) : 0.0;
    const std::int64_t k = std::binomial_distribution<std::int64_t>(remaining, p)(rng);
    out[i] = k;
    remaining -= k;
    remaining_mass -= probs[i];
  }
  return out;
}

}  // namespace dysm
