#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/skew_normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "dysm/dysm.hpp"

namespace support {

using namespace dysm;

struct NamedVariant {
  std::string name;
  ModelVariant variant;
};

inline std::vector<NamedVariant> all_variants() {
  return {{"base", {}},
          {"half_normal_infant", {InfantKind::half_normal, AdultKind::gaussian, OldAgeKind::skew_normal}},
          {"scaled_beta_old_age", {InfantKind::dirac, AdultKind::gaussian, OldAgeKind::scaled_beta}},
          {"no_adult", {InfantKind::dirac, AdultKind::absent, OldAgeKind::skew_normal}}};
}

/// Random parameters with every weight at least 1e-3.
inline MixtureParams random_params(std::mt19937_64& rng, const ModelVariant& v) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto in = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  MixtureParams p;
  const double w0 = in(0.001, 0.2);
  if (v.adult == AdultKind::gaussian) {
    p.pi1 = in(0.001, 1.0 - w0 - 0.001);
    p.pi2 = 1.0 - w0 - p.pi1;
  } else {
    p.pi1 = 0.0;
    p.pi2 = 1.0 - w0;
  }
  p.mu = in(15.0, 75.0);
  p.sigma = in(2.0, 30.0);
  p.sn = {in(60.0, 100.0), in(2.0, 20.0), in(-8.0, 8.0)};
  p.gamma = in(0.05, 2.0);
  p.beta_a = in(0.5, 10.0);
  p.beta_b = in(0.5, 10.0);
  return p;
}

/// Random point in the unconstrained space, deliberately wide.
inline std::vector<double> random_state(std::mt19937_64& rng, const ModelVariant& v) {
  std::normal_distribution<double> z;
  std::vector<double> out;
  for (Coord c : coordinates(v)) {
    switch (c) {
      case Coord::mu: out.push_back(50.0 + 15.0 * z(rng)); break;
      case Coord::xi: out.push_back(80.0 + 15.0 * z(rng)); break;
      case Coord::alpha: out.push_back(5.0 * z(rng)); break;
      case Coord::log_sigma:
      case Coord::log_omega: out.push_back(2.0 + 1.0 * z(rng)); break;
      default: out.push_back(2.0 * z(rng)); break;
    }
  }
  return out;
}

/// Continuous part of the mixture density, written against Boost
/// distributions rather than the library's own kernels.
inline double continuous_density(double x, const MixtureParams& p, const ModelVariant& v) {
  double f = 0.0;
  if (v.infant == InfantKind::half_normal && x >= 0.0)
    f += p.pi0() * 2.0 * boost::math::pdf(boost::math::normal_distribution<double>(0.0, p.gamma), x);
  if (v.adult == AdultKind::gaussian) f += p.pi1 * boost::math::pdf(boost::math::normal_distribution<double>(p.mu, p.sigma), x);
  if (v.old_age == OldAgeKind::skew_normal) {
    f += p.pi2 * boost::math::pdf(boost::math::skew_normal_distribution<double>(p.sn.xi, p.sn.omega, p.sn.alpha), x);
  } else {
    const double w = scaled_beta_upper - scaled_beta_lower;
    const double y = (x - scaled_beta_lower) / w;
    if (y > 0.0 && y < 1.0) f += p.pi2 * boost::math::pdf(boost::math::beta_distribution<double>(p.beta_a, p.beta_b), y) / w;
  }
  return f;
}

/// Cell probability by adaptive quadrature of the density; the Dirac infant
/// mass is added to cell 0.
inline double cell_probability_quadrature(std::size_t x, std::size_t max_age, const MixtureParams& p,
                                          const ModelVariant& v) {
  using boost::math::quadrature::gauss_kronrod;
  const double lo = x == 0 ? -400.0 : static_cast<double>(x) - 0.5;
  const double hi = x == max_age ? 600.0 : static_cast<double>(x) + 0.5;
  auto f = [&](double t) { return continuous_density(t, p, v); };
  // Split at the kinks of the piecewise parts so the rule sees smooth pieces.
  std::vector<double> cuts{lo};
  for (double c : {0.0, scaled_beta_lower, scaled_beta_upper, p.mu, p.sn.xi})
    if (c > lo && c < hi) cuts.push_back(c);
  cuts.push_back(hi);
  std::sort(cuts.begin(), cuts.end());
  double total = 0.0, err = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    total += gauss_kronrod<double, 61>::integrate(f, cuts[i], cuts[i + 1], 15, 1e-12, &err);
  if (x == 0 && v.infant == InfantKind::dirac) total += p.pi0();
  return total;
}

// State after the joint move to log eta2[j, k] = log_eta2: the deviations of
// theta[j, 1..T, k] from theta0 + beta t scale by sqrt(eta2' / eta2). Same
// arithmetic as the sampler, so both evaluate the identical proposed point.
inline ModelState rescaled_state(const ModelState& s, std::size_t j, std::size_t k, double log_eta2) {
  ModelState out = s;
  const double scale = std::exp(0.5 * (log_eta2 - std::log(s.eta2(j, k))));
  out.eta2(j, k) = std::exp(log_eta2);
  for (std::size_t t = 0; t < s.layout().T(); ++t) {
    const double line = s.theta0(j, k) + s.beta(j, k) * static_cast<double>(t + 1);
    out.theta(j, t, k) = line + scale * (s.theta(j, t, k) - line);
  }
  return out;
}

inline DeathPanel make_panel(std::size_t p, std::size_t T, int max_age, std::mt19937_64& rng, std::int64_t n) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < p; ++j) names.push_back("C" + std::to_string(j));
  std::vector<std::int64_t> deaths;
  const AgeGrid grid{max_age};
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t t = 0; t < T; ++t) {
      MixtureParams par;
      par.pi1 = 0.2;
      par.pi2 = 0.75;
      par.mu = 50.0;
      par.sigma = 15.0;
      par.sn = {static_cast<double>(max_age) * 0.75, static_cast<double>(max_age) * 0.1, -2.0};
      const auto probs = discretize(par, {}, grid);
      const auto d = draw_multinomial(rng, n, probs);
      deaths.insert(deaths.end(), d.begin(), d.end());
    }
  return DeathPanel(names, 2000, static_cast<int>(T), grid, deaths);
}

}  // namespace support
