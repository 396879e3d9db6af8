#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "dysm/errors.hpp"
#include "dysm/mortality_model.hpp"
#include "dysm/random.hpp"

namespace dysm {

/// Shared hyperparameters, one entry per latent coordinate.
struct Hyperparams {
  std::vector<double> m;       // initial-state prior means
  std::vector<double> s;       // initial-state prior sds
  std::vector<double> m_beta;  // drift prior means
  std::vector<double> s_beta;  // drift prior sds
  std::vector<double> a;       // Inverse-Gamma shape for eta^2
  std::vector<double> b;       // Inverse-Gamma rate for eta^2

  std::size_t size() const { return m.size(); }

  /// m = 50 for the adult mean, 70 for the old-age location, 0 elsewhere;
  /// s = 10; drift N(0, 1); eta^2 ~ Inv-Gamma(0.01, 0.01).
  static Hyperparams defaults(const ModelVariant& v) {
    Hyperparams h;
    for (Coord c : coordinates(v)) {
      h.m.push_back(c == Coord::mu ? 50.0 : c == Coord::xi ? 70.0 : 0.0);
      h.s.push_back(10.0);
      h.m_beta.push_back(0.0);
      h.s_beta.push_back(1.0);
      h.a.push_back(0.01);
      h.b.push_back(0.01);
    }
    return h;
  }

  void validate(std::size_t dim) const {
    auto check = [&](const std::vector<double>& x, const char* name, bool positive) {
      if (x.size() != dim)
        throw ConfigError(std::string("hyperparameter '") + name + "' must have " + std::to_string(dim) + " entries");
      for (double v : x) {
        if (!std::isfinite(v)) throw ConfigError(std::string("hyperparameter '") + name + "' must be finite");
        if (positive && !(v > 0.0)) throw ConfigError(std::string("hyperparameter '") + name + "' must be positive");
      }
    };
    check(m, "m", false);
    check(s, "s", true);
    check(m_beta, "m_beta", false);
    check(s_beta, "s_beta", true);
    check(a, "a", true);
    check(b, "b", true);
  }
};

/// Innovation distribution of the random walk. For student_t, eta is the
/// scale of the t distribution rather than its standard deviation.
struct InnovationLaw {
  enum class Kind { gaussian, student_t };
  Kind kind = Kind::gaussian;
  double dof = 5.0;

  static InnovationLaw gaussian() { return {}; }
  static InnovationLaw student_t(double dof = 5.0) { return {Kind::student_t, dof}; }

  void validate() const {
    if (kind == Kind::student_t && !(dof > 2.0)) throw ConfigError("student_t innovations need dof > 2");
  }

  double log_density(double x, double mean, double eta2) const {
    const double r2 = (x - mean) * (x - mean);
    if (kind == Kind::gaussian) return -0.5 * std::log(2.0 * std::numbers::pi * eta2) - 0.5 * r2 / eta2;
    const double nu = dof;
    return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi * eta2) -
           0.5 * (nu + 1.0) * std::log1p(r2 / (nu * eta2));
  }

  double draw(Rng& rng) const {
    return kind == Kind::gaussian ? draw_normal(rng) : draw_student_t(rng, dof);
  }

  bool operator==(const InnovationLaw&) const = default;
};

inline double log_normal_density(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (x - mean) * (x - mean) / var;
}

inline double log_inv_gamma_density(double x, double shape, double rate) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(rate) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - rate / x;
}

/// Dynamics of one country: drift, innovation variance and initial state per
/// coordinate, plus the T x K trajectory (row t holds year t+1).
struct CountryDynamics {
  std::vector<double> beta;
  std::vector<double> eta2;
  std::vector<double> theta0;
  std::vector<double> trajectory;  // row-major T x K
  std::size_t years = 0;

  std::size_t dim() const { return theta0.size(); }
  double state(std::size_t t, std::size_t k) const { return t == 0 ? theta0[k] : trajectory[(t - 1) * dim() + k]; }
};

/// Log prior of eta^2 under the flat specification: uniform on log eta^2.
inline double log_flat_eta2_density(double eta2) { return -std::log(eta2); }

/// Upper end of the support of every innovation variance. Very diffuse
/// Inverse-Gamma priors put visible mass beyond the double range.
inline constexpr double eta2_max = 1e300;

inline double log_state_prior(const CountryDynamics& d, const Hyperparams& h, const InnovationLaw& law,
                              bool flat_priors = false) {
  const std::size_t K = d.dim();
  detail::require(h.size() == K && d.beta.size() == K && d.eta2.size() == K, "dimension mismatch in log_state_prior");
  detail::require(d.trajectory.size() == d.years * K, "trajectory has the wrong size");
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    total += log_normal_density(d.theta0[k], h.m[k], h.s[k] * h.s[k]);
    if (d.eta2[k] > eta2_max) return -std::numeric_limits<double>::infinity();
    for (std::size_t t = 1; t <= d.years; ++t)
      total += law.log_density(d.state(t, k), d.beta[k] + d.state(t - 1, k), d.eta2[k]);
    if (flat_priors) {
      total += log_flat_eta2_density(d.eta2[k]);
    } else {
      total += log_normal_density(d.beta[k], h.m_beta[k], h.s_beta[k] * h.s_beta[k]);
      total += log_inv_gamma_density(d.eta2[k], h.a[k], h.b[k]);
    }
  }
  return total;
}

struct GaussianConditional {
  double mean;
  double var;
};

/// Full conditional of the drift given increments d_t ~ N(beta, eta^2).
/// s_beta = +inf gives the flat-prior limit.
inline GaussianConditional beta_conditional(std::span<const double> increments, double eta2, double m_beta,
                                            double s_beta) {
  const double prior_prec = std::isinf(s_beta) ? 0.0 : 1.0 / (s_beta * s_beta);
  double sum = 0.0;
  for (double d : increments) sum += d;
  const double prec = static_cast<double>(increments.size()) / eta2 + prior_prec;
  if (!(prec > 0.0)) throw NumericalError("drift full conditional is improper (no increments under a flat prior)");
  const double var = 1.0 / prec;
  return {var * (sum / eta2 + m_beta * prior_prec), var};
}

inline double gibbs_update_beta(std::span<const double> increments, double eta2, double m_beta, double s_beta,
                                Rng& rng) {
  const auto c = beta_conditional(increments, eta2, m_beta, s_beta);
  return draw_normal(rng, c.mean, std::sqrt(c.var));
}

struct InvGammaConditional {
  double shape;
  double rate;
};

/// Inv-Gamma(a + T/2, b + sum_t (d_t - beta)^2 / 2). a = b = 0 gives the
/// flat-prior limit.
inline InvGammaConditional eta2_conditional(std::span<const double> increments, double beta, double a, double b) {
  double ssr = 0.0;
  for (double d : increments) ssr += (d - beta) * (d - beta);
  return {a + 0.5 * static_cast<double>(increments.size()), b + 0.5 * ssr};
}

/// Draws from the conditional restricted to (0, eta2_max]. A plain draw
/// that lands inside is kept; otherwise the precision 1/eta^2 is drawn by
/// inverting its upper tail above 1/eta2_max.
inline double gibbs_update_eta2(std::span<const double> increments, double beta, double a, double b, Rng& rng) {
  const auto c = eta2_conditional(increments, beta, a, b);
  if (!(c.shape > 0.0 && c.rate > 0.0)) throw NumericalError("innovation variance full conditional is improper");
  if (!std::isfinite(c.rate)) throw NumericalError("innovation variance full conditional overflowed");
  const double e = draw_inv_gamma(rng, c.shape, c.rate);
  if (e <= eta2_max) return e;
  const double q_max = boost::math::gamma_q(c.shape, c.rate / eta2_max);
  if (!(q_max > 0.0)) return eta2_max;
  const double q = q_max * (1.0 - draw_uniform(rng));
  return std::min(c.rate / boost::math::gamma_q_inv(c.shape, q), eta2_max);
}

/// theta_0 | theta_1, beta, eta^2 combines N(m, s^2) with N(theta_1 - beta, eta^2).
inline GaussianConditional theta0_conditional(double theta1, double beta, double eta2, double m, double s) {
  const double var = 1.0 / (1.0 / (s * s) + 1.0 / eta2);
  return {var * (m / (s * s) + (theta1 - beta) / eta2), var};
}

inline double gibbs_update_theta0(double theta1, double beta, double eta2, double m, double s, Rng& rng) {
  detail::require(eta2 > 0.0 && s > 0.0, "theta0 update needs eta2 > 0 and s > 0");
  const auto c = theta0_conditional(theta1, beta, eta2, m, s);
  return draw_normal(rng, c.mean, std::sqrt(c.var));
}

}  // namespace dysm
