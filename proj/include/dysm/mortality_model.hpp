#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "dysm/errors.hpp"
#include "dysm/special_functions.hpp"

namespace dysm {

enum class InfantKind { dirac, half_normal };
enum class AdultKind { gaussian, absent };
enum class OldAgeKind { skew_normal, scaled_beta };

/// Structural choice of mixture components. The base model is
/// Dirac infant mass + Gaussian adult + Skew-Normal old age.
struct ModelVariant {
  InfantKind infant = InfantKind::dirac;
  AdultKind adult = AdultKind::gaussian;
  OldAgeKind old_age = OldAgeKind::skew_normal;

  bool operator==(const ModelVariant&) const = default;
};

// Fixed support of the rescaled Beta old-age component.
inline constexpr double scaled_beta_lower = 75.0;
inline constexpr double scaled_beta_upper = 110.0;

/// Unconstrained coordinates of the latent state. The base model uses the
/// first seven in this order; variants add or drop coordinates.
enum class Coord {
  logit_pi1,     // log(pi1 / (1 - pi1))
  log_ratio_pi2, // log(pi2 / pi0)
  mu,
  log_sigma,
  xi,
  log_omega,
  alpha,
  log_gamma,     // half-normal infant scale
  log_beta_a,
  log_beta_b,
};

inline std::string_view coord_name(Coord c) {
  switch (c) {
    case Coord::logit_pi1: return "logit_pi1";
    case Coord::log_ratio_pi2: return "logratio_pi2";
    case Coord::mu: return "mu";
    case Coord::log_sigma: return "log_sigma";
    case Coord::xi: return "xi";
    case Coord::log_omega: return "log_omega";
    case Coord::alpha: return "alpha";
    case Coord::log_gamma: return "log_gamma";
    case Coord::log_beta_a: return "log_beta_a";
    case Coord::log_beta_b: return "log_beta_b";
  }
  return "?";
}

inline std::vector<Coord> coordinates(const ModelVariant& v) {
  std::vector<Coord> out;
  if (v.adult == AdultKind::gaussian) out.push_back(Coord::logit_pi1);
  out.push_back(Coord::log_ratio_pi2);
  if (v.adult == AdultKind::gaussian) {
    out.push_back(Coord::mu);
    out.push_back(Coord::log_sigma);
  }
  if (v.old_age == OldAgeKind::skew_normal) {
    out.push_back(Coord::xi);
    out.push_back(Coord::log_omega);
    out.push_back(Coord::alpha);
  } else {
    out.push_back(Coord::log_beta_a);
    out.push_back(Coord::log_beta_b);
  }
  if (v.infant == InfantKind::half_normal) out.push_back(Coord::log_gamma);
  return out;
}

/// Which mixture component a coordinate feeds. Weights-only coordinates touch
/// no component cdf.
enum class Component { weights, infant, adult, old_age };

inline Component component_of(Coord c) {
  switch (c) {
    case Coord::logit_pi1:
    case Coord::log_ratio_pi2: return Component::weights;
    case Coord::mu:
    case Coord::log_sigma: return Component::adult;
    case Coord::log_gamma: return Component::infant;
    default: return Component::old_age;
  }
}

struct AgeGrid {
  int max_age = 110;

  std::size_t cells() const { return static_cast<std::size_t>(max_age) + 1; }
  void validate() const {
    if (max_age < 1) throw std::invalid_argument("age grid max_age must be >= 1");
  }
};

/// Natural parameters of one country-year mixture. pi0 is implied.
struct MixtureParams {
  double pi1 = 0.0;
  double pi2 = 0.0;
  double mu = 0.0;
  double sigma = 1.0;
  SkewNormalParams sn{};
  double gamma = 1.0;   // half-normal infant scale
  double beta_a = 1.0;  // scaled-Beta shapes
  double beta_b = 1.0;

  double pi0() const { return 1.0 - pi1 - pi2; }
};

/// Point in the unconstrained space, laid out as coordinates(variant).
class LatentState {
 public:
  LatentState() = default;
  explicit LatentState(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

 private:
  std::vector<double> values_;
};

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

}  // namespace detail

inline LatentState to_unconstrained(const MixtureParams& p, const ModelVariant& v) {
  const bool adult = v.adult == AdultKind::gaussian;
  if (adult) {
    if (!(p.pi1 > 0.0 && p.pi1 < 1.0)) throw std::domain_error("weight pi1 must lie strictly inside (0, 1)");
  } else if (p.pi1 != 0.0) {
    throw std::domain_error("weight pi1 must be 0 when the adult component is absent");
  }
  if (!(p.pi2 > 0.0 && p.pi2 < 1.0)) throw std::domain_error("weight pi2 must lie strictly inside (0, 1)");
  if (!(p.pi0() > 0.0)) throw std::domain_error("weight pi0 = 1 - pi1 - pi2 must be positive");

  std::vector<double> out;
  for (Coord c : coordinates(v)) {
    switch (c) {
      case Coord::logit_pi1: out.push_back(detail::logit(p.pi1)); break;
      case Coord::log_ratio_pi2: out.push_back(std::log(p.pi2) - std::log1p(-p.pi1 - p.pi2)); break;
      case Coord::mu: out.push_back(p.mu); break;
      case Coord::log_sigma: out.push_back(std::log(p.sigma)); break;
      case Coord::xi: out.push_back(p.sn.xi); break;
      case Coord::log_omega: out.push_back(std::log(p.sn.omega)); break;
      case Coord::alpha: out.push_back(p.sn.alpha); break;
      case Coord::log_gamma: out.push_back(std::log(p.gamma)); break;
      case Coord::log_beta_a: out.push_back(std::log(p.beta_a)); break;
      case Coord::log_beta_b: out.push_back(std::log(p.beta_b)); break;
    }
  }
  return LatentState(std::move(out));
}

inline MixtureParams from_unconstrained(std::span<const double> s, const ModelVariant& v) {
  const auto coords = coordinates(v);
  detail::require(s.size() == coords.size(), "latent state has the wrong dimension for this variant");
  MixtureParams p;
  double theta1 = -std::numeric_limits<double>::infinity();
  double theta2 = 0.0;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double x = s[i];
    switch (coords[i]) {
      case Coord::logit_pi1: theta1 = x; break;
      case Coord::log_ratio_pi2: theta2 = x; break;
      case Coord::mu: p.mu = x; break;
      case Coord::log_sigma: p.sigma = std::exp(x); break;
      case Coord::xi: p.sn.xi = x; break;
      case Coord::log_omega: p.sn.omega = std::exp(x); break;
      case Coord::alpha: p.sn.alpha = x; break;
      case Coord::log_gamma: p.gamma = std::exp(x); break;
      case Coord::log_beta_a: p.beta_a = std::exp(x); break;
      case Coord::log_beta_b: p.beta_b = std::exp(x); break;
    }
  }
  p.pi1 = v.adult == AdultKind::gaussian ? detail::sigmoid(theta1) : 0.0;
  p.pi2 = (1.0 - p.pi1) * detail::sigmoid(theta2);
  return p;
}

inline MixtureParams from_unconstrained(const LatentState& s, const ModelVariant& v) {
  return from_unconstrained(s.values(), v);
}

// Component cdfs at a single age. Degenerate scales (exp underflow/overflow of
// a log-scale coordinate) collapse to step or flat functions instead of NaN.
namespace detail {

inline double location_scale_cdf(double x, double loc, double scale) {
  if (scale == 0.0) return x >= loc ? 1.0 : 0.0;
  return gaussian_cdf((x - loc) / scale);
}

inline double infant_cdf(double x, const MixtureParams& p, InfantKind kind) {
  if (x < 0.0) return 0.0;
  if (kind == InfantKind::dirac || p.gamma == 0.0) return 1.0;
  return std::erf(x / (p.gamma * std::numbers::sqrt2));
}

inline double adult_cdf(double x, const MixtureParams& p) {
  return location_scale_cdf(x, p.mu, p.sigma);
}

inline double old_age_cdf(double x, const MixtureParams& p, OldAgeKind kind) {
  if (kind == OldAgeKind::scaled_beta) {
    const double u = (x - scaled_beta_lower) / (scaled_beta_upper - scaled_beta_lower);
    if (u <= 0.0) return 0.0;
    if (u >= 1.0) return 1.0;
    if (!(std::isfinite(p.beta_a) && std::isfinite(p.beta_b)) || p.beta_a <= 0.0 || p.beta_b <= 0.0)
      return std::numeric_limits<double>::quiet_NaN();
    try {
      return boost::math::ibeta(p.beta_a, p.beta_b, u);
    } catch (const std::exception&) {
      return std::numeric_limits<double>::quiet_NaN();  // shapes beyond what ibeta can evaluate
    }
  }
  if (p.sn.omega == 0.0) return x >= p.sn.xi ? 1.0 : 0.0;
  if (std::isinf(p.sn.omega)) return 0.5;
  return skew_normal_cdf(x, p.sn);
}

}  // namespace detail

/// F(x) = pi0 H0(x) + pi1 Phi((x - mu)/sigma) + pi2 G(x).
inline double mixture_cdf(double x, const MixtureParams& p, const ModelVariant& v) {
  double f = p.pi0() * detail::infant_cdf(x, p, v.infant) + p.pi2 * detail::old_age_cdf(x, p, v.old_age);
  if (v.adult == AdultKind::gaussian) f += p.pi1 * detail::adult_cdf(x, p);
  return f;
}

/// Component cdfs evaluated at the interior cell boundaries x + 1/2,
/// x = 0..max_age-1. Cached by the sampler so a proposal that moves one
/// component only recomputes that component.
struct ComponentCdfs {
  std::vector<double> infant;
  std::vector<double> adult;
  std::vector<double> old_age;
};

inline void compute_component(Component which, const MixtureParams& p, const ModelVariant& v, const AgeGrid& g,
                              ComponentCdfs& out) {
  const std::size_t n = static_cast<std::size_t>(g.max_age);
  auto fill = [&](std::vector<double>& dst, auto&& cdf) {
    dst.resize(n);
    for (std::size_t i = 0; i < n; ++i) dst[i] = cdf(static_cast<double>(i) + 0.5);
  };
  switch (which) {
    case Component::infant: fill(out.infant, [&](double x) { return detail::infant_cdf(x, p, v.infant); }); break;
    case Component::adult:
      if (v.adult == AdultKind::gaussian)
        fill(out.adult, [&](double x) { return detail::adult_cdf(x, p); });
      else
        out.adult.assign(n, 0.0);
      break;
    case Component::old_age: fill(out.old_age, [&](double x) { return detail::old_age_cdf(x, p, v.old_age); }); break;
    case Component::weights: break;
  }
}

inline ComponentCdfs component_cdfs(const MixtureParams& p, const ModelVariant& v, const AgeGrid& g) {
  ComponentCdfs out;
  compute_component(Component::infant, p, v, g, out);
  compute_component(Component::adult, p, v, g, out);
  compute_component(Component::old_age, p, v, g, out);
  return out;
}

/// Mixes cached component cdfs into cell probabilities. The lowest and highest
/// cells are closed: p_0 = F(1/2), p_max = 1 - F(max - 1/2).
inline void combine_components(const MixtureParams& p, const ComponentCdfs& c, std::span<double> probs) {
  const std::size_t n = c.infant.size();
  detail::require(probs.size() == n + 1, "probability buffer must have max_age + 1 cells");
  const double w0 = p.pi0(), w1 = p.pi1, w2 = p.pi2;
  double prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double f = w0 * c.infant[i] + w2 * c.old_age[i];
    if (w1 != 0.0) f += w1 * c.adult[i];
    const double d = f - prev;
    probs[i] = d > 0.0 ? d : 0.0;
    prev = f;
  }
  const double last = 1.0 - prev;
  probs[n] = last > 0.0 ? last : 0.0;
}

/// Age-at-death probability vector over cells 0..max_age.
inline std::vector<double> discretize(const MixtureParams& p, const ModelVariant& v, const AgeGrid& g) {
  g.validate();
  std::vector<double> probs(g.cells());
  combine_components(p, component_cdfs(p, v, g), probs);
  return probs;
}

/// log of n! / prod_x D_x!
inline double log_multinomial_coefficient(std::span<const std::int64_t> deaths) {
  double n = 0.0, s = 0.0;
  for (auto d : deaths) {
    n += static_cast<double>(d);
    s += std::lgamma(static_cast<double>(d) + 1.0);
  }
  return std::lgamma(n + 1.0) - s;
}

/// sum_x D_x log p_x; empty cells contribute nothing even when p_x = 0.
inline double multinomial_kernel(std::span<const std::int64_t> deaths, std::span<const double> probs) {
  double s = 0.0;
  for (std::size_t x = 0; x < deaths.size(); ++x) {
    if (deaths[x] == 0) continue;
    if (!(probs[x] > 0.0)) return -std::numeric_limits<double>::infinity();
    s += static_cast<double>(deaths[x]) * std::log(probs[x]);
  }
  return s;
}

inline double multinomial_loglik(std::span<const std::int64_t> deaths, std::span<const double> probs) {
  detail::require(deaths.size() == probs.size(), "deaths and probabilities must have the same length");
  for (auto d : deaths) detail::require(d >= 0, "death counts must be nonnegative");
  const double kernel = multinomial_kernel(deaths, probs);
  if (kernel == -std::numeric_limits<double>::infinity()) return kernel;
  return log_multinomial_coefficient(deaths) + kernel;
}

}  // namespace dysm
