#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "dysm/dynamic_prior.hpp"
#include "dysm/mortality_model.hpp"

namespace dysm {

/// Minimizes f with GSL's Nelder-Mead simplex starting at x (updated in
/// place). Returns the final objective value.
inline double nelder_mead(const std::function<double(std::span<const double>)>& f, std::vector<double>& x,
                          std::span<const double> step, int max_iter, double size_tol = 1e-5) {
  const std::size_t n = x.size();
  struct Ctx {
    const std::function<double(std::span<const double>)>* f;
    std::size_t n;
  } ctx{&f, n};
  gsl_multimin_function fn;
  fn.n = n;
  fn.params = &ctx;
  fn.f = [](const gsl_vector* v, void* p) {
    auto* c = static_cast<Ctx*>(p);
    const double r = (*c->f)(std::span<const double>(v->data, c->n));
    return std::isfinite(r) ? r : 1e300;
  };
  gsl_vector* x0 = gsl_vector_alloc(n);
  gsl_vector* ss = gsl_vector_alloc(n);
  for (std::size_t i = 0; i < n; ++i) {
    gsl_vector_set(x0, i, x[i]);
    gsl_vector_set(ss, i, step[i]);
  }
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  gsl_multimin_fminimizer_set(s, &fn, x0, ss);
  for (int it = 0; it < max_iter; ++it) {
    if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), size_tol) == GSL_SUCCESS) break;
  }
  for (std::size_t i = 0; i < n; ++i) x[i] = gsl_vector_get(s->x, i);
  const double fx = s->fval;
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(x0);
  gsl_vector_free(ss);
  return fx;
}

/// Rough mixture matching an empirical age-at-death distribution: infant mass
/// from age 0, old-age peak at the modal age past 50, a broad adult hump.
inline MixtureParams heuristic_params(std::span<const double> freq, const ModelVariant& v) {
  const std::size_t n = freq.size();
  const double max_age = static_cast<double>(n - 1);
  std::size_t mode = std::min<std::size_t>(50, n - 1);
  for (std::size_t x = mode; x < n; ++x)
    if (freq[x] > freq[mode]) mode = x;
  MixtureParams p;
  const double pi0 = std::clamp(freq[0], 1e-4, 0.5);
  p.pi1 = v.adult == AdultKind::gaussian ? 0.1 * (1.0 - pi0) : 0.0;
  p.pi2 = 1.0 - pi0 - p.pi1;
  p.mu = std::min(50.0, 0.5 * max_age);
  p.sigma = std::max(1.0, 0.15 * max_age);
  p.sn = {static_cast<double>(mode) + 5.0, std::max(1.0, 0.1 * max_age), -3.0};
  p.gamma = 0.5;
  p.beta_a = 3.0;
  p.beta_b = 4.0;
  return p;
}

/// Penalized maximum-likelihood fit of one country-year: maximizes the
/// multinomial kernel plus the N(m, s^2) prior on each coordinate, which keeps
/// coordinates of an unused component near their prior means.
inline std::vector<double> fit_cell(std::span<const std::int64_t> deaths, const ModelVariant& v, const AgeGrid& grid,
                                    const Hyperparams& h, std::vector<double> start, int max_iter) {
  const auto coords = coordinates(v);
  std::vector<double> step(coords.size());
  for (std::size_t k = 0; k < coords.size(); ++k)
    step[k] = (coords[k] == Coord::mu || coords[k] == Coord::xi) ? 3.0 : 0.3;
  std::vector<double> probs(grid.cells());
  auto objective = [&](std::span<const double> x) {
    double prior = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) prior += (x[k] - h.m[k]) * (x[k] - h.m[k]) / (2.0 * h.s[k] * h.s[k]);
    const auto params = from_unconstrained(x, v);
    combine_components(params, component_cdfs(params, v, grid), probs);
    const double k = multinomial_kernel(deaths, probs);
    return std::isfinite(k) ? prior - k : std::numeric_limits<double>::infinity();
  };
  nelder_mead(objective, start, step, max_iter);
  // A restart from the optimum escapes premature simplex collapse.
  nelder_mead(objective, start, step, max_iter / 2);
  return start;
}

}  // namespace dysm
