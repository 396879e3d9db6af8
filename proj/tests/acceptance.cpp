// Acceptance suite: one pass/fail line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "test_support.hpp"

using namespace dysm;
using boost::math::quadrature::gauss_kronrod;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " FAILED: " << what << ";";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Independent oracles

double owen_t_quadrature(double h, double a) {
  auto f = [h](long double x) { return std::exp(-0.5L * h * h * (1.0L + x * x)) / (1.0L + x * x); };
  long double err = 0;
  const long double v = gauss_kronrod<long double, 61>::integrate(f, 0.0L, static_cast<long double>(a), 12, 1e-17L, &err);
  return static_cast<double>(v / (2.0L * std::numbers::pi_v<long double>));
}

double phi_boost(double z) { return boost::math::cdf(boost::math::normal_distribution<double>(), z); }

// Mean and variance of exp(logf) on [lo, hi].
std::pair<double, double> grid_moments(const std::function<double(double)>& logf, double lo, double hi, double shift) {
  double err = 0;
  auto f = [&](double x) { return std::exp(logf(x) - shift); };
  const double z = gauss_kronrod<double, 61>::integrate(f, lo, hi, 30, 1e-15, &err);
  const double m1 = gauss_kronrod<double, 61>::integrate([&](double x) { return x * f(x); }, lo, hi, 30, 1e-15, &err) / z;
  const double m2 =
      gauss_kronrod<double, 61>::integrate([&](double x) { return (x - m1) * (x - m1) * f(x); }, lo, hi, 30, 1e-15, &err) / z;
  return {m1, m2};
}

// Same on the log scale for a positive variable: x = e^u.
std::pair<double, double> grid_moments_positive(const std::function<double(double)>& logf, double centre) {
  auto lu = [&](double u) { return logf(std::exp(u)) + u; };
  const double lo = std::log(centre) - 14.0, hi = std::log(centre) + 16.0;
  const double shift = lu(std::log(centre));
  double err = 0;
  auto w = [&](double u) { return std::exp(lu(u) - shift); };
  const double z = gauss_kronrod<double, 61>::integrate(w, lo, hi, 30, 1e-15, &err);
  const double m1 = gauss_kronrod<double, 61>::integrate([&](double u) { return std::exp(u) * w(u); }, lo, hi, 30, 1e-15, &err) / z;
  const double m2 = gauss_kronrod<double, 61>::integrate(
                        [&](double u) { return (std::exp(u) - m1) * (std::exp(u) - m1) * w(u); }, lo, hi, 30, 1e-15, &err) /
                    z;
  return {m1, m2};
}

struct Sample {
  double mean = 0, var = 0;
  double n = 0;
};

Sample draw_moments(const std::function<double()>& draw, int n) {
  std::vector<double> x(n);
  double s = 0;
  for (auto& v : x) s += (v = draw());
  const double mean = s / n;
  double ss = 0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return {mean, ss / (n - 1), static_cast<double>(n)};
}

// Kolmogorov distribution tail P(K > lambda), with the finite-n
// correction lambda = (sqrt(n) + 0.12 + 0.11 / sqrt(n)) D.
double ks_pvalue(double d, std::size_t n) {
  const double rn = std::sqrt(static_cast<double>(n));
  const double lambda = (rn + 0.12 + 0.11 / rn) * d;
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

double ks_statistic_normal(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = phi_boost(x[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

// ---------------------------------------------------------------------------
// Shared checks for the discretization, reparametrization, conjugate and
// Metropolis criteria; reused per variant.

void check_simplex(Outcome& o, const ModelVariant& v, int n_states, int n_spot, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const AgeGrid grid{110};
  double worst_sum = 0.0, worst_neg = 0.0;
  for (int i = 0; i < n_states; ++i) {
    const auto probs = discretize(from_unconstrained(support::random_state(rng, v), v), v, grid);
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(probs.begin(), probs.end(), 0.0) - 1.0));
    for (double q : probs) worst_neg = std::min(worst_neg, q);
  }
  o.detail << " simplex: max|sum-1|=" << worst_sum;
  o.check(worst_neg >= 0.0, "negative probability");
  o.check(worst_sum <= 1e-12, "probabilities do not sum to 1 within 1e-12");
  std::uniform_int_distribution<std::size_t> age(0, 110);
  double worst_cell = 0.0;
  for (int i = 0; i < n_spot; ++i) {
    const auto p = support::random_params(rng, v);
    const auto probs = discretize(p, v, grid);
    const std::size_t x = i == 0 ? 0 : i == 1 ? 110 : age(rng);
    worst_cell = std::max(worst_cell, std::abs(probs[x] - support::cell_probability_quadrature(x, 110, p, v)));
  }
  o.detail << " spot-check max err=" << worst_cell;
  o.check(worst_cell <= 1e-10, "cell probability differs from quadrature by more than 1e-10");
}

void check_round_trip(Outcome& o, const ModelVariant& v, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto p = support::random_params(rng, v);
    const auto q = from_unconstrained(to_unconstrained(p, v), v);
    worst = std::max({worst, std::abs(q.pi1 - p.pi1), std::abs(q.pi2 - p.pi2)});
    if (v.adult == AdultKind::gaussian) worst = std::max({worst, std::abs(q.mu - p.mu), std::abs(q.sigma - p.sigma)});
    if (v.old_age == OldAgeKind::skew_normal)
      worst = std::max({worst, std::abs(q.sn.xi - p.sn.xi), std::abs(q.sn.omega - p.sn.omega), std::abs(q.sn.alpha - p.sn.alpha)});
    else
      worst = std::max({worst, std::abs(q.beta_a - p.beta_a), std::abs(q.beta_b - p.beta_b)});
    if (v.infant == InfantKind::half_normal) worst = std::max(worst, std::abs(q.gamma - p.gamma));
  }
  o.detail << " round trip max err=" << worst;
  o.check(worst <= 1e-12, "round trip error above 1e-12");
}

const std::vector<double> kIncrements{0.31, -0.12, 0.55, 0.08, 0.27, -0.04};

// Gibbs conditionals against grid integration and 1e5 draws. flat drops the
// drift and Inverse-Gamma priors (flat drift, density 1/eta^2).
void check_conjugate(Outcome& o, bool flat, std::uint64_t seed) {
  Rng rng(seed);
  const int n = 100000;
  double worst = 0.0;
  // drift
  {
    const double eta2 = 0.09, m_beta = 0.2, s_beta = flat ? std::numeric_limits<double>::infinity() : 0.5;
    auto logf = [&](double b) {
      double l = flat ? 0.0 : log_normal_density(b, m_beta, s_beta * s_beta);
      for (double d : kIncrements) l += log_normal_density(d, b, eta2);
      return l;
    };
    const auto c = beta_conditional(kIncrements, eta2, m_beta, s_beta);
    const auto [gm, gv] = grid_moments(logf, c.mean - 3.0, c.mean + 3.0, logf(c.mean));
    worst = std::max({worst, std::abs(gm - c.mean), std::abs(gv - c.var)});
    const auto s = draw_moments([&] { return gibbs_update_beta(kIncrements, eta2, m_beta, s_beta, rng); }, n);
    o.check(std::abs(s.mean - c.mean) <= 4.0 * std::sqrt(c.var / n), "drift draw mean outside 4 SE");
    o.check(std::abs(s.var - c.var) <= 4.0 * c.var * std::sqrt(2.0 / (n - 1)), "drift draw variance outside 4 SE");
  }
  // innovation variance
  {
    const double beta = 0.15, a = flat ? 0.0 : 2.0, b = flat ? 0.0 : 0.3;
    auto logf = [&](double e) {
      double l = flat ? -std::log(e) : log_inv_gamma_density(e, a, b);
      for (double d : kIncrements) l += log_normal_density(d, beta, e);
      return l;
    };
    const auto c = eta2_conditional(kIncrements, beta, a, b);
    const double mean = c.rate / (c.shape - 1.0), var = mean * mean / (c.shape - 2.0);
    const auto [gm, gv] = grid_moments_positive(logf, mean);
    worst = std::max({worst, std::abs(gm - mean), std::abs(gv - var)});
    const auto s = draw_moments([&] { return gibbs_update_eta2(kIncrements, beta, a, b, rng); }, n);
    o.check(std::abs(s.mean - mean) <= 4.0 * std::sqrt(var / n), "eta2 draw mean outside 4 SE");
  }
  // initial state
  {
    const double theta1 = 52.0, beta = 0.4, eta2 = 2.5, m = 50.0, sd = 10.0;
    auto logf = [&](double x) { return log_normal_density(x, m, sd * sd) + log_normal_density(theta1, x + beta, eta2); };
    const auto c = theta0_conditional(theta1, beta, eta2, m, sd);
    const auto [gm, gv] = grid_moments(logf, c.mean - 20.0, c.mean + 20.0, logf(c.mean));
    worst = std::max({worst, std::abs(gm - c.mean), std::abs(gv - c.var)});
    const auto s = draw_moments([&] { return gibbs_update_theta0(theta1, beta, eta2, m, sd, rng); }, n);
    o.check(std::abs(s.mean - c.mean) <= 4.0 * std::sqrt(c.var / n), "theta0 draw mean outside 4 SE");
    o.check(std::abs(s.var - c.var) <= 4.0 * c.var * std::sqrt(2.0 / (n - 1)), "theta0 draw variance outside 4 SE");
  }
  o.detail << " conjugate grid max err=" << worst;
  o.check(worst <= 1e-6, "conditional mean/variance differs from grid integration by more than 1e-6");
}

ModelState random_model_state(const Model& model, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.02, 0.5);
  for (;;) {
    ModelState s(model.layout());
    const auto& L = s.layout();
    for (std::size_t j = 0; j < L.p(); ++j) {
      for (std::size_t k = 0; k < L.K(); ++k) {
        s.beta(j, k) = 0.3 * z(rng);
        s.eta2(j, k) = u(rng);
      }
      for (std::size_t t = 0; t < L.T(); ++t) {
        const auto x = support::random_state(rng, model.variant);
        for (std::size_t k = 0; k < L.K(); ++k) s.theta(j, t, k) = x[k];
      }
      for (std::size_t k = 0; k < L.K(); ++k) s.theta0(j, k) = s.theta(j, 0, k) + 0.5 * z(rng);
    }
    if (std::isfinite(log_posterior(model, s))) return s;
  }
}

// 100 random instances with p <= 2 and T <= 4; every block of a random
// blocking gets a random proposal. Both the direct ratio and the chain's
// cached ratio are compared with the full log-posterior difference.
void check_metropolis(Outcome& o, const ModelVariant& v, const InnovationLaw& law, bool flat, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  double worst = 0.0;
  int compared = 0, mismatched_inf = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t p = 1 + inst % 2, T = 1 + (inst / 2) % 4;
    if (flat && T < 2) continue;
    const auto panel = support::make_panel(p, T, 110, rng, 100 + inst * 10);
    const Model model(panel, v, Hyperparams::defaults(v), law, flat);
    const auto s = random_model_state(model, rng);
    SamplerConfig cfg;
    cfg.n_iter = 10;
    cfg.burn_in = 0;
    cfg.thin = 1;
    cfg.variant = v;
    cfg.innovation = law;
    cfg.flat_priors = flat;
    cfg.blocking = static_cast<Blocking>(inst % 3);
    Chain chain(model, cfg, 1, &s);
    const auto& blocks = chain.blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      std::vector<double> proposed;
      ModelState moved = s;
      const double scale = 0.05 + 0.5 * (b % 3);
      for (const auto& site : blocks[b].sites) {
        proposed.push_back(s.theta(site.j, blocks[b].t, site.k) + scale * z(rng));
        moved.theta(site.j, blocks[b].t, site.k) = proposed.back();
      }
      const double oracle = log_posterior(model, moved) - log_posterior(model, s);
      const double r = metropolis_log_ratio(model, s, blocks[b], proposed);
      const double cached = chain.cached_log_ratio(b, proposed);
      if (!std::isfinite(oracle)) {
        if (r != -std::numeric_limits<double>::infinity() || cached != -std::numeric_limits<double>::infinity())
          ++mismatched_inf;
        continue;
      }
      worst = std::max({worst, std::abs(r - oracle), std::abs(cached - oracle)});
      ++compared;
    }
    // Joint rescaling of (eta^2, path): posterior difference plus the
    // log-scale and path Jacobians.
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t k = 0; k < model.layout().K(); ++k) {
        const double target = std::log(s.eta2(j, k)) + 0.5 * z(rng);
        const double delta = target - std::log(s.eta2(j, k));
        const auto moved = support::rescaled_state(s, j, k, target);
        const double oracle = log_posterior(model, moved) - log_posterior(model, s) + delta * (1.0 + 0.5 * static_cast<double>(T));
        const double r = chain.rescale_log_ratio(j, k, target);
        if (!std::isfinite(oracle)) {
          if (r != -std::numeric_limits<double>::infinity()) ++mismatched_inf;
          continue;
        }
        worst = std::max(worst, std::abs(r - oracle));
        ++compared;
      }
  }
  o.detail << " ratio vs joint: " << compared << " moves, max err=" << worst;
  o.check(worst <= 1e-10, "Metropolis ratio differs from the full-joint difference by more than 1e-10");
  o.check(mismatched_inf == 0, "impossible proposals not rejected");
}

// ---------------------------------------------------------------------------
// Criteria

Outcome c01_owen_t() {
  Outcome o;
  double worst = 0.0;
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j) {
      const double h = -7.0 + 14.0 * i / 49.0;
      const double a = -10.0 + 20.0 * j / 49.0;
      worst = std::max(worst, std::abs(owen_t(h, a) - owen_t_quadrature(h, a)));
    }
  double worst_id = 0.0;
  for (double x = -6.0; x <= 6.0; x += 0.25) {
    worst_id = std::max(worst_id, std::abs(owen_t(x, 0.0)));
    worst_id = std::max(worst_id, std::abs(owen_t(0.0, x) - std::atan(x) / (2.0 * std::numbers::pi)));
    const double ph = phi_boost(x);
    worst_id = std::max(worst_id, std::abs(owen_t(x, 1.0) - 0.5 * ph * (1.0 - ph)));
  }
  o.detail << " 50x50 grid max err=" << worst << ", identities max err=" << worst_id;
  o.check(worst <= 1e-12, "grid error above 1e-12");
  o.check(worst_id <= 1e-13, "identity error above 1e-13");
  return o;
}

Outcome c02_skew_normal() {
  Outcome o;
  double worst = 0.0;
  Rng rng(202);
  for (double alpha : {-10.0, -2.0, 0.0, 2.0, 10.0}) {
    const SkewNormalParams p{75.0, 11.0, alpha};
    for (double x = 20.0; x <= 130.0; x += 2.5) {
      double err = 0;
      const double q = gauss_kronrod<double, 61>::integrate([&](double t) { return skew_normal_pdf(t, p); },
                                                            p.xi - 40.0 * p.omega, x, 25, 1e-15, &err);
      worst = std::max(worst, std::abs(skew_normal_cdf(x, p) - q));
    }
    // Monte Carlo by the convolution representation X = xi + omega (delta |U0| + sqrt(1 - delta^2) U1).
    const double delta = alpha / std::sqrt(1.0 + alpha * alpha);
    const int n = 1000000;
    double s1 = 0, s2 = 0, s3 = 0;
    std::vector<double> x(n);
    for (auto& v : x) {
      v = p.xi + p.omega * (delta * std::abs(draw_normal(rng)) + std::sqrt(1.0 - delta * delta) * draw_normal(rng));
      s1 += v;
    }
    const double mean = s1 / n;
    for (double v : x) {
      const double d = v - mean;
      s2 += d * d;
      s3 += d * d * d * d;
    }
    const double var = s2 / (n - 1), m4 = s3 / n;
    const double sd = std::sqrt(var);
    const auto m = skew_normal_moments(p);
    const double se_mean = sd / std::sqrt(n);
    const double se_sd = std::sqrt((m4 - var * var) / n) / (2.0 * sd);
    o.check(std::abs(m.mean - mean) <= 3.0 * se_mean, "mean outside 3 SE for alpha=" + std::to_string(alpha));
    o.check(std::abs(m.sd - sd) <= 3.0 * se_sd, "sd outside 3 SE for alpha=" + std::to_string(alpha));
    o.detail << " a=" << alpha << ": z_mean=" << (m.mean - mean) / se_mean << " z_sd=" << (m.sd - sd) / se_sd << ";";
  }
  o.detail << " cdf vs quadrature max err=" << worst;
  o.check(worst <= 1e-10, "cdf differs from quadrature by more than 1e-10");
  return o;
}

Outcome c03_simplex() {
  Outcome o;
  check_simplex(o, {}, 10000, 20, 303);
  return o;
}

Outcome c04_round_trip() {
  Outcome o;
  check_round_trip(o, {}, 10000, 404);
  return o;
}

Outcome c05_conjugate() {
  Outcome o;
  check_conjugate(o, false, 505);
  return o;
}

Outcome c06_metropolis() {
  Outcome o;
  check_metropolis(o, {}, InnovationLaw::gaussian(), false, 606);
  return o;
}

Outcome c07_prior_recovery() {
  Outcome o;
  const std::size_t p = 2, T = 4;
  std::vector<std::int64_t> zeros(p * T * 111, 0);
  const DeathPanel panel({"A", "B"}, 2000, static_cast<int>(T), AgeGrid{110}, zeros);
  SamplerConfig cfg;
  cfg.init = InitMode::prior;
  cfg.burn_in = 5000;
  cfg.thin = 50;
  cfg.n_iter = cfg.burn_in + 20000 * cfg.thin;
  cfg.seed = 707;
  const auto h = Hyperparams::defaults({});
  const auto d = run_chain(panel, h, cfg);
  o.detail << " draws=" << d.total_rows() << ";";
  double min_p = 1.0;
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t k = 0; k < d.layout.K(); ++k) {
      const auto x = d.column(d.layout.beta_col(j, k));
      const double ks = ks_statistic_normal(x);
      const double pv = ks_pvalue(ks, x.size());
      min_p = std::min(min_p, pv);
      if (pv < 0.01) o.check(false, "KS rejects N(0,1) for beta " + d.layout.column_names()[d.layout.beta_col(j, k)]);
    }
  o.detail << " min KS p-value over " << p * d.layout.K() << " drifts=" << min_p;
  return o;
}

Outcome c08_synthetic_recovery() {
  Outcome o;
  auto spec = SyntheticSpec::defaults();
  spec.countries = {"A", "B"};
  spec.years = 20;
  spec.deaths_per_year = 1000000;
  spec.seed = 808;
  const auto syn = generate_synthetic(spec);
  SamplerConfig cfg;
  cfg.n_iter = 20000;
  cfg.burn_in = 5000;
  cfg.thin = 5;
  cfg.seed = 809;
  const auto d = run_chain(syn.panel, Hyperparams::defaults({}), cfg);
  int cells = 0, covered = 0, close = 0;
  const double probs[] = {0.05, 0.5, 0.95};
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t t = 0; t < 20; ++t)
      for (std::size_t k : {std::size_t{2}, std::size_t{4}}) {
        const auto q = summarize(d.column(d.layout.theta_col(j, t, k)), probs);
        const double truth = syn.truth.theta(j, t, k);
        ++cells;
        if (q[0] <= truth && truth <= q[2]) ++covered;
        if (std::abs(q[1] - truth) <= 0.5) ++close;
      }
  o.detail << " 90% CI coverage " << covered << "/" << cells << ", medians within 0.5y " << close << "/" << cells;
  o.check(covered >= 0.8 * cells, "coverage below 80%");
  o.check(close >= 0.9 * cells, "fewer than 90% of medians within 0.5 years");
  return o;
}

Outcome c09_coherence() {
  Outcome o;
  auto spec = SyntheticSpec::defaults();
  spec.years = 10;
  spec.deaths_per_year = 20000;
  spec.seed = 909;
  const auto one = generate_synthetic(spec);
  // Two countries holding identical counts.
  std::vector<std::int64_t> deaths(one.panel.raw());
  deaths.insert(deaths.end(), one.panel.raw().begin(), one.panel.raw().end());
  const DeathPanel panel({"A", "B"}, spec.first_year, spec.years, AgeGrid{110}, deaths);
  SamplerConfig cfg;
  cfg.n_iter = 12000;
  cfg.burn_in = 2000;
  cfg.thin = 2;
  cfg.seed = 910;
  const auto d = run_chain(panel, Hyperparams::defaults({}), cfg);
  ForecastConfig fcfg;
  fcfg.horizon = 10;
  Rng rng(911);
  const auto fc = forecast_states(d, fcfg, rng);
  const double half[] = {0.5};
  double med[2], se[2];
  const std::size_t batches = 25;
  for (std::size_t j = 0; j < 2; ++j) {
    std::vector<double> x(fc.rows);
    for (std::size_t r = 0; r < fc.rows; ++r) x[r] = fc.cell(r, j, 10)[2];
    med[j] = summarize(x, half)[0];
    // Batch-means standard error of the median.
    const std::size_t len = x.size() / batches;
    std::vector<double> bm;
    for (std::size_t b = 0; b < batches; ++b)
      bm.push_back(summarize(std::vector<double>(x.begin() + b * len, x.begin() + (b + 1) * len), half)[0]);
    const double m = std::accumulate(bm.begin(), bm.end(), 0.0) / batches;
    double ss = 0;
    for (double v : bm) ss += (v - m) * (v - m);
    se[j] = std::sqrt(ss / (batches - 1) / batches);
  }
  const double diff = std::abs(med[0] - med[1]), bound = 2.0 * std::hypot(se[0], se[1]);
  o.detail << " medians " << med[0] << " vs " << med[1] << ", |diff|=" << diff << ", 2x combined SE=" << bound;
  o.check(diff < bound, "forecast medians differ by more than twice the combined Monte Carlo SE");
  return o;
}

Outcome c10_life_table() {
  Outcome o;
  std::mt19937_64 rng(1010);
  std::gamma_distribution<double> g(0.3, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> d(111);
    double s = 0;
    for (auto& v : d) s += (v = g(rng));
    for (auto& v : d) v /= s;
    const auto t = life_table(d);
    double mean = 0;
    for (std::size_t x = 0; x < d.size(); ++x) mean += d[x] * (static_cast<double>(x) + 0.5);
    worst = std::max(worst, std::abs(mean - t.e[0]));
  }
  std::vector<double> atom(111, 0.0);
  atom[80] = 1.0;
  const double e0 = life_table(atom).e[0];
  o.detail << " identity max err=" << worst << ", single-atom e0=" << e0;
  o.check(worst <= 1e-10, "identity error above 1e-10");
  o.check(e0 == 80.5, "single-atom e0 is not 80.5");
  return o;
}

Outcome c11_evaluation() {
  Outcome o;
  std::mt19937_64 rng(1111);
  std::uniform_real_distribution<double> u(1e-7, 1e-2);
  std::map<ScoreKey, double> self;
  for (const char* c : {"AUS", "CAN", "DNK", "FRA"})
    for (int w = 1960; w < 1988; ++w) self[{c, w}] = u(rng);
  const auto r = relative_report(self, {{"DYSM", self}});
  o.check(r[0].median == 1.0 && r[0].q1 == 1.0 && r[0].q3 == 1.0, "self-relative report is not exactly 1");
  const double single = harmonic_mean_logml(std::vector<double>{-4321.5});
  const double constant = harmonic_mean_logml(std::vector<double>(100, -987.25));
  const double hand = harmonic_mean_logml(std::vector<double>{std::log(1.0), std::log(3.0)});
  o.check(single == -4321.5, "B=1 case not exact");
  o.check(constant == -987.25, "constant-draw case not exact");
  o.check(std::abs(hand - std::log(1.5)) <= 1e-12, "{1,3} case off");
  o.detail << " self report " << r[0].median << " [" << r[0].q1 << ", " << r[0].q3 << "], {1,3} -> exp="
           << std::exp(hand);
  return o;
}

Outcome c12_performance() {
  Outcome o;
  auto spec = SyntheticSpec::defaults();
  spec.countries.clear();
  for (int j = 0; j < 12; ++j) spec.countries.push_back("C" + std::to_string(j));
  spec.years = 20;
  spec.deaths_per_year = 100000;
  spec.seed = 1212;
  const auto syn = generate_synthetic(spec);
  SamplerConfig cfg;
  cfg.n_iter = 1000;
  cfg.burn_in = 500;
  cfg.thin = 5;
  cfg.seed = 1213;
  const auto t0 = std::chrono::steady_clock::now();
  const auto d = run_chain(syn.panel, Hyperparams::defaults({}), cfg);
  const double secs = seconds_since(t0);
  o.detail << " 1000 iterations at p=12, T=20, n=1e5: " << secs << " s (soft target 120 s, gate 240 s)";
  o.check(secs <= 240.0, "slower than 4 minutes");
  o.check(d.total_rows() == 100, "unexpected number of stored draws");
  return o;
}

Outcome c13_variants() {
  Outcome o;
  const ModelVariant half{InfantKind::half_normal, AdultKind::gaussian, OldAgeKind::skew_normal};
  const ModelVariant beta{InfantKind::dirac, AdultKind::gaussian, OldAgeKind::scaled_beta};
  const ModelVariant no_adult{InfantKind::dirac, AdultKind::absent, OldAgeKind::skew_normal};
  std::uint64_t seed = 1300;
  for (const auto& [name, v] : std::vector<std::pair<std::string, ModelVariant>>{
           {"half_normal", half}, {"scaled_beta", beta}, {"no_adult", no_adult}}) {
    Outcome sub;
    check_simplex(sub, v, 10000, 20, ++seed);
    check_round_trip(sub, v, 10000, ++seed);
    check_conjugate(sub, false, ++seed);
    check_metropolis(sub, v, InnovationLaw::gaussian(), false, ++seed);
    o.detail << " [" << name << (sub.pass ? " ok" : " FAIL") << ":" << sub.detail.str() << "]";
    o.pass = o.pass && sub.pass;
  }
  // No-adult variant equals the closed two-component form exactly.
  {
    std::mt19937_64 rng(++seed);
    std::size_t mismatches = 0;
    for (int i = 0; i < 1000; ++i) {
      const auto p = from_unconstrained(support::random_state(rng, no_adult), no_adult);
      const auto probs = discretize(p, no_adult, AgeGrid{110});
      double prev = 0.0;
      for (int x = 0; x < 110; ++x) {
        const double f = p.pi0() * 1.0 + p.pi2 * skew_normal_cdf(x + 0.5, p.sn);
        if (probs[x] != std::max(f - prev, 0.0)) ++mismatches;
        prev = f;
      }
      if (probs[110] != std::max(1.0 - prev, 0.0)) ++mismatches;
    }
    o.detail << " [no_adult closed form mismatches=" << mismatches << "]";
    o.check(mismatches == 0, "no-adult discretization differs from the two-component form");
  }
  // Student-t innovations: discretization and round trip are unchanged; the
  // dynamics updates are Metropolis steps on conditionals that must match
  // joint differences, and with no data the chain must return the prior.
  {
    Outcome sub;
    const auto law = InnovationLaw::student_t(5.0);
    check_metropolis(sub, {}, law, false, ++seed);
    std::mt19937_64 rng(++seed);
    const auto panel = support::make_panel(2, 3, 110, rng, 300);
    const Model model(panel, {}, Hyperparams::defaults({}), law);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      const auto s = random_model_state(model, rng);
      for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t k = 0; k < 7; ++k) {
          ModelState m = s;
          m.theta0(j, k) += 0.6;
          worst = std::max(worst, std::abs(theta0_log_conditional(model, m, j, k) - theta0_log_conditional(model, s, j, k) -
                                           (log_posterior(model, m) - log_posterior(model, s))));
          m = s;
          m.beta(j, k) += 0.3;
          worst = std::max(worst, std::abs(beta_log_conditional(model, m, j, k) - beta_log_conditional(model, s, j, k) -
                                           (log_posterior(model, m) - log_posterior(model, s))));
          m = s;
          m.eta2(j, k) *= 1.7;
          worst = std::max(worst, std::abs(log_eta2_log_conditional(model, m, j, k) - log_eta2_log_conditional(model, s, j, k) -
                                           (log_posterior(model, m) - log_posterior(model, s) + std::log(1.7))));
        }
    }
    sub.detail << " scalar conditionals max err=" << worst;
    sub.check(worst <= 1e-10, "Student-t scalar conditionals disagree with the joint");
    // No data: theta0 and beta must follow their priors.
    std::vector<std::int64_t> zeros(2 * 111, 0);
    const DeathPanel empty({"A"}, 2000, 2, AgeGrid{110}, zeros);
    auto h = Hyperparams::defaults({});
    h.a.assign(7, 4.0);
    h.b.assign(7, 3.0);
    SamplerConfig cfg;
    cfg.init = InitMode::prior;
    cfg.innovation = law;
    cfg.burn_in = 4000;
    cfg.thin = 10;
    cfg.n_iter = cfg.burn_in + 10000 * cfg.thin;
    cfg.seed = ++seed;
    const auto d = run_chain(empty, h, cfg);
    for (std::size_t k : {std::size_t{0}, std::size_t{2}, std::size_t{4}}) {
      for (auto [col, mean, sd] : {std::tuple{d.layout.theta0_col(0, k), h.m[k], h.s[k]},
                                   std::tuple{d.layout.beta_col(0, k), h.m_beta[k], h.s_beta[k]}}) {
        const auto x = d.column(col);
        const double m = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
        const double ess = std::max(effective_sample_size(x).ess, 1.0);
        const double z = (m - mean) / (sd / std::sqrt(ess));
        sub.check(std::abs(z) <= 4.0, "no-data posterior mean off the prior for " + d.layout.column_names()[col]);
        sub.detail << " " << d.layout.column_names()[col] << " z=" << z;
      }
    }
    o.detail << " [student_t" << (sub.pass ? " ok" : " FAIL") << ":" << sub.detail.str() << "]";
    o.pass = o.pass && sub.pass;
  }
  // Flat priors: conjugate limits and Metropolis ratio.
  {
    Outcome sub;
    check_conjugate(sub, true, ++seed);
    check_metropolis(sub, {}, InnovationLaw::gaussian(), true, ++seed);
    o.detail << " [flat" << (sub.pass ? " ok" : " FAIL") << ":" << sub.detail.str() << "]";
    o.pass = o.pass && sub.pass;
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::tuple<const char*, const char*, Outcome (*)()>> criteria{
      {"C01", "Owen's T oracle suite", c01_owen_t},
      {"C02", "Skew-Normal cdf and moments", c02_skew_normal},
      {"C03", "discretization simplex and quadrature", c03_simplex},
      {"C04", "reparametrization round trip", c04_round_trip},
      {"C05", "conjugate full conditionals", c05_conjugate},
      {"C06", "Metropolis ratio equals full-joint difference", c06_metropolis},
      {"C07", "prior recovery on a zero-death panel", c07_prior_recovery},
      {"C08", "synthetic recovery", c08_synthetic_recovery},
      {"C09", "forecast coherence for identical countries", c09_coherence},
      {"C10", "life-table identity", c10_life_table},
      {"C11", "evaluation harness self-consistency", c11_evaluation},
      {"C12", "performance at p=12, T=20", c12_performance},
      {"C13", "variant suite", c13_variants},
  };
  std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [id, title, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " exception: " << e.what();
    }
    const double secs = seconds_since(t0);
    if (!o.pass) ++failures;
    std::printf("[%s] %s %s (%.1f s):%s\n", o.pass ? "PASS" : "FAIL", id, title, secs, o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
