#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "dysm/errors.hpp"

namespace dysm {

struct SkewNormalParams {
  double xi = 0.0;     // location, years of age
  double omega = 1.0;  // scale, years
  double alpha = 0.0;  // shape
};

struct Moments {
  double mean;
  double sd;
};

inline double gaussian_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

namespace detail {

/// erfc(z / sqrt 2). In the far tail erfc amplifies the rounding of its
/// argument by about 2x^2, so the rounding error of the scaled argument is
/// recovered with fma and applied as a first-order correction.
inline double erfc_scaled(double z) {
  constexpr double c_hi = std::numbers::sqrt2 / 2.0;
  constexpr double c_lo = static_cast<double>(std::numbers::sqrt2_v<long double> / 2.0L - c_hi);
  const double x = z * c_hi;
  const double v = std::erfc(x);
  if (std::abs(x) < 2.0) return v;
  const double dx = std::fma(z, c_hi, -x) + z * c_lo;
  return v - dx * (2.0 / std::sqrt(std::numbers::pi)) * std::exp(-x * x);
}

}  // namespace detail

inline double gaussian_cdf(double z) { return 0.5 * detail::erfc_scaled(-z); }

/// Upper tail 1 - Phi(z), accurate in relative terms for large z.
inline double gaussian_sf(double z) { return 0.5 * detail::erfc_scaled(z); }

/// log Phi(z). erfc keeps full relative accuracy down to about z = -37; past
/// that the asymptotic Mills-ratio series takes over so the result never
/// collapses to -inf.
inline double log_gaussian_cdf(double z) {
  if (z > 5.0) return std::log1p(-gaussian_sf(z));
  if (z > -37.0) return std::log(gaussian_cdf(z));
  const double r = 1.0 / (z * z);
  const double series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r * (1.0 - 9.0 * r))));
  return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(-z) + std::log(series);
}

namespace detail {

template <int N>
struct GaussLegendre {
  std::array<double, N> nodes{};
  std::array<double, N> weights{};

  GaussLegendre() {
    for (int i = 0; i < (N + 1) / 2; ++i) {
      double x = std::cos(std::numbers::pi * (i + 0.75) / (N + 0.5));
      double dp = 0.0;
      for (int iter = 0; iter < 100; ++iter) {
        double p0 = 1.0, p1 = 0.0;
        for (int j = 1; j <= N; ++j) {
          const double p2 = p1;
          p1 = p0;
          p0 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p2) / j;
        }
        dp = N * (x * p0 - p1) / (x * x - 1.0);
        const double dx = p0 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16) break;
      }
      nodes[i] = -x;
      nodes[N - 1 - i] = x;
      weights[i] = weights[N - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
  }
};

inline const GaussLegendre<20>& gauss_legendre_20() {
  static const GaussLegendre<20> rule;
  return rule;
}

// T(h, a) for h >= 0, 0 < a <= 1 by composite Gauss-Legendre on the defining
// integral. Each panel spans at most 4 units of h*x so the Gaussian factor is
// resolved to well below 1e-16; the 1/(1+x^2) poles sit far outside [0, 1].
inline double owen_t_small_a(double h, double a) {
  const double half_h2 = 0.5 * h * h;
  if (half_h2 > 740.0) return 0.0;
  const auto& gl = gauss_legendre_20();
  const int panels = std::max(1, static_cast<int>(std::ceil(h * a / 4.0)));
  const double width = a / panels;
  const double outer = std::exp(-half_h2);
  double sum = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = (p + 0.5) * width;
    double panel = 0.0;
    for (int i = 0; i < 20; ++i) {
      const double x = mid + 0.5 * width * gl.nodes[i];
      const double one_x2 = 1.0 + x * x;
      panel += gl.weights[i] * std::exp(-half_h2 * x * x) / one_x2;
    }
    sum += panel;
  }
  return outer * sum * 0.5 * width / (2.0 * std::numbers::pi);
}

}  // namespace detail

/// Owen's T-function T(h, a) = 1/(2 pi) * int_0^a exp(-h^2 (1 + x^2) / 2) / (1 + x^2) dx.
///
/// Direct quadrature handles |a| <= 1; larger |a| goes through the reflection
/// T(h, a) = Q(h)/2 + Q(ah)/2 - Q(h) Q(ah) - T(ah, 1/a), with Q the upper
/// Gaussian tail, which avoids cancellation for large h. a = +-inf is allowed.
inline double owen_t(double h, double a) {
  if (std::isnan(h) || std::isnan(a)) return std::numeric_limits<double>::quiet_NaN();
  if (a == 0.0) return 0.0;
  const double sign = a < 0.0 ? -1.0 : 1.0;
  a = std::abs(a);
  h = std::abs(h);
  if (std::isinf(a)) return sign * 0.5 * gaussian_sf(h);
  if (a <= 1.0) return sign * detail::owen_t_small_a(h, a);
  const double ah = a * h;
  const double qh = gaussian_sf(h);
  const double qah = gaussian_sf(ah);
  return sign * (0.5 * qh + 0.5 * qah - qh * qah - detail::owen_t_small_a(ah, 1.0 / a));
}

inline double skew_normal_pdf(double x, const SkewNormalParams& p) {
  detail::require(p.omega > 0.0, "skew-normal omega must be positive");
  const double z = (x - p.xi) / p.omega;
  return 2.0 / p.omega * gaussian_pdf(z) * gaussian_cdf(p.alpha * z);
}

/// F(x) = Phi(z) - 2 T(z, alpha), z = (x - xi) / omega.
inline double skew_normal_cdf(double x, const SkewNormalParams& p) {
  detail::require(p.omega > 0.0, "skew-normal omega must be positive");
  if (x == std::numeric_limits<double>::infinity()) return 1.0;
  if (x == -std::numeric_limits<double>::infinity()) return 0.0;
  const double z = (x - p.xi) / p.omega;
  if (p.alpha == 0.0) return gaussian_cdf(z);
  const double f = gaussian_cdf(z) - 2.0 * owen_t(z, p.alpha);
  return std::clamp(f, 0.0, 1.0);
}

/// Mean and standard deviation with delta = alpha / sqrt(1 + alpha^2).
inline Moments skew_normal_moments(const SkewNormalParams& p) {
  detail::require(p.omega > 0.0, "skew-normal omega must be positive");
  const double delta = std::isinf(p.alpha) ? std::copysign(1.0, p.alpha) : p.alpha / std::sqrt(1.0 + p.alpha * p.alpha);
  const double mean = p.xi + p.omega * delta * std::sqrt(2.0 / std::numbers::pi);
  const double sd = p.omega * std::sqrt(1.0 - 2.0 * delta * delta / std::numbers::pi);
  return {mean, sd};
}

}  // namespace dysm
