#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dysm/errors.hpp"
#include "dysm/mortality_model.hpp"
#include "dysm/random.hpp"
#include "dysm/sampler.hpp"

namespace dysm {

struct ForecastConfig {
  int horizon = 10;
  std::vector<double> quantiles{0.05, 0.5, 0.95};
  double a0 = 0.5;  // fraction of the first year lived by infants dying in it

  void validate() const {
    if (horizon < 0) throw ConfigError("forecast horizon must be nonnegative");
    if (quantiles.empty()) throw ConfigError("at least one quantile is required");
    for (std::size_t i = 0; i < quantiles.size(); ++i) {
      if (!(quantiles[i] > 0.0 && quantiles[i] < 1.0)) throw ConfigError("quantiles must lie in (0, 1)");
      if (i > 0 && !(quantiles[i] > quantiles[i - 1])) throw ConfigError("quantiles must be strictly increasing");
    }
    if (!(a0 >= 0.0 && a0 <= 1.0)) throw ConfigError("a0 must lie in [0, 1]");
  }
};

/// Latent states for years T+1..T+H, one block per stored draw, laid out
/// [row][j][h-1][k].
struct StateForecast {
  DrawLayout layout;
  int horizon = 0;
  std::size_t rows = 0;
  std::vector<double> values;

  std::span<const double> cell(std::size_t row, std::size_t j, int h) const {
    const std::size_t K = layout.K();
    const auto H = static_cast<std::size_t>(horizon);
    return {values.data() + ((row * layout.p() + j) * H + static_cast<std::size_t>(h - 1)) * K, K};
  }
};

/// Propagates every stored draw H years ahead:
/// theta_{T+h} = theta_{T+h-1} + beta + eta * eps with eps from the innovation law.
inline StateForecast forecast_states(const PosteriorDraws& draws, const ForecastConfig& cfg, Rng& rng) {
  cfg.validate();
  if (draws.total_rows() == 0) throw std::invalid_argument("forecast needs at least one stored draw");
  const auto& L = draws.layout;
  const std::size_t p = L.p(), K = L.K(), T = L.T();
  StateForecast out{L, cfg.horizon, draws.total_rows(), {}};
  out.values.resize(out.rows * p * static_cast<std::size_t>(cfg.horizon) * K);
  if (cfg.horizon == 0) return out;
  std::size_t row = 0;
  draws.for_each_row([&](std::span<const double> v) {
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t k = 0; k < K; ++k) {
        double theta = v[L.theta_col(j, T - 1, k)];
        const double beta = v[L.beta_col(j, k)];
        const double eta = std::sqrt(v[L.eta2_col(j, k)]);
        for (int h = 1; h <= cfg.horizon; ++h) {
          theta += beta + eta * draws.law.draw(rng);
          out.values[((row * p + j) * cfg.horizon + (h - 1)) * K + k] = theta;
        }
      }
    ++row;
  });
  return out;
}

/// Period life table built from an age-at-death distribution. Entries whose
/// survivorship is zero are NaN.
struct LifeTable {
  std::vector<double> d, l, q, m, L, e, a;
};

/// l_x = sum_{z>=x} d_z, L_x = l_{x+1} + a_x d_x (a_0 = a0, a_x = 0.5
/// otherwise), q_x = d_x / l_x, m_x = d_x / L_x, e_x = sum_{z>=x} L_z / l_x.
inline LifeTable life_table(std::span<const double> d, double a0 = 0.5) {
  const std::size_t n = d.size();
  detail::require(n > 0, "life table needs at least one age");
  double total = 0.0;
  for (double v : d) {
    detail::require(v >= 0.0 && std::isfinite(v), "life table input must be nonnegative");
    total += v;
  }
  detail::require(std::abs(total - 1.0) < 1e-9, "life table input must sum to 1");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  LifeTable t;
  t.d.assign(d.begin(), d.end());
  t.a.assign(n, 0.5);
  t.a[0] = a0;
  t.l.assign(n, 0.0);
  double tail = 0.0;
  for (std::size_t x = n; x-- > 0;) {
    tail += d[x];
    t.l[x] = tail;
  }
  t.L.assign(n, 0.0);
  for (std::size_t x = 0; x < n; ++x) t.L[x] = (x + 1 < n ? t.l[x + 1] : 0.0) + t.a[x] * d[x];
  t.q.assign(n, nan);
  t.m.assign(n, nan);
  t.e.assign(n, nan);
  double person_years = 0.0;
  for (std::size_t x = n; x-- > 0;) {
    person_years += t.L[x];
    if (t.l[x] > 0.0) {
      t.q[x] = std::min(1.0, d[x] / t.l[x]);
      t.e[x] = person_years / t.l[x];
      if (t.L[x] > 0.0) t.m[x] = d[x] / t.L[x];
    }
  }
  return t;
}

/// Empirical quantile with midpoint interpolation: the p-quantile of n sorted
/// values sits at 1-based position n p + 1/2, clamped to [1, n].
inline double sorted_quantile(std::span<const double> sorted, double prob) {
  detail::require(!sorted.empty(), "quantile of an empty sample");
  const double n = static_cast<double>(sorted.size());
  const double h = std::clamp(n * prob + 0.5, 1.0, n);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  if (lo >= sorted.size()) return sorted.back();
  return sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1]);
}

/// Quantiles of a sample at the given probabilities. NaN values are ignored;
/// a sample with no finite values yields NaN.
inline std::vector<double> summarize(std::vector<double> values, std::span<const double> probs) {
  std::erase_if(values, [](double v) { return std::isnan(v); });
  std::vector<double> out;
  out.reserve(probs.size());
  if (values.empty()) {
    out.assign(probs.size(), std::numeric_limits<double>::quiet_NaN());
    return out;
  }
  std::sort(values.begin(), values.end());
  for (double p : probs) out.push_back(sorted_quantile(values, p));
  return out;
}

enum class Quantity { age_at_death, qx, mx, ex };

inline std::string_view quantity_name(Quantity q) {
  switch (q) {
    case Quantity::age_at_death: return "age_at_death";
    case Quantity::qx: return "qx";
    case Quantity::mx: return "mx";
    default: return "ex";
  }
}

inline Quantity parse_quantity(std::string_view s) {
  for (Quantity q : {Quantity::age_at_death, Quantity::qx, Quantity::mx, Quantity::ex})
    if (quantity_name(q) == s) return q;
  throw ConfigError("unknown quantity '" + std::string(s) + "'");
}

/// One summarized value. age = -1 marks rows without an age (latent states).
struct BandRow {
  std::size_t country;
  int year;
  int age;
  std::string quantity;
  double quantile;
  double value;
};

struct BandTable {
  std::vector<std::string> countries;
  std::vector<double> quantiles;
  std::vector<BandRow> rows;
};

/// Latent state of every draw for country j in a given calendar year, taken
/// from the stored draws for fitted years and from the forecast beyond them.
inline std::vector<std::span<const double>> states_for_year(const PosteriorDraws& draws, const StateForecast* fc,
                                                            std::size_t j, int year) {
  const auto& L = draws.layout;
  const int last = L.first_year + static_cast<int>(L.T()) - 1;
  std::vector<std::span<const double>> out;
  out.reserve(draws.total_rows());
  if (year >= L.first_year && year <= last) {
    const std::size_t t = static_cast<std::size_t>(year - L.first_year);
    draws.for_each_row([&](std::span<const double> v) { out.push_back(v.subspan(L.theta_col(j, t, 0), L.K())); });
  } else if (fc && year > last && year - last <= fc->horizon) {
    for (std::size_t r = 0; r < fc->rows; ++r) out.push_back(fc->cell(r, j, year - last));
  } else {
    throw std::invalid_argument("year " + std::to_string(year) + " is outside the fitted and forecast range");
  }
  return out;
}

/// Maps every draw of every country-year (fitted years, then forecast years)
/// through the mixture and the life table and summarizes the requested
/// quantities per age. Latent states are summarized too when with_states is set.
inline BandTable functional_bands(const PosteriorDraws& draws, const StateForecast* fc,
                                  const std::vector<Quantity>& quantities, const ForecastConfig& cfg,
                                  bool with_states = false) {
  cfg.validate();
  const auto& L = draws.layout;
  const AgeGrid grid{draws.max_age};
  const std::size_t n_age = grid.cells();
  BandTable table{L.countries, cfg.quantiles, {}};
  const int last = L.first_year + static_cast<int>(L.T()) - 1 + (fc ? fc->horizon : 0);
  std::vector<double> probs(n_age);
  for (std::size_t j = 0; j < L.p(); ++j)
    for (int year = L.first_year; year <= last; ++year) {
      const auto states = states_for_year(draws, fc, j, year);
      const std::size_t B = states.size();
      if (with_states)
        for (std::size_t k = 0; k < L.K(); ++k) {
          std::vector<double> v(B);
          for (std::size_t b = 0; b < B; ++b) v[b] = states[b][k];
          const auto qs = summarize(std::move(v), cfg.quantiles);
          for (std::size_t i = 0; i < qs.size(); ++i)
            table.rows.push_back({j, year, -1, "theta:" + std::string(coord_name(L.coords[k])), cfg.quantiles[i], qs[i]});
        }
      if (quantities.empty()) continue;
      // values[q][age * B + b]
      std::vector<std::vector<double>> values(quantities.size(), std::vector<double>(n_age * B));
      for (std::size_t b = 0; b < B; ++b) {
        const auto params = from_unconstrained(states[b], draws.variant);
        combine_components(params, component_cdfs(params, draws.variant, grid), probs);
        const bool need_table = std::any_of(quantities.begin(), quantities.end(),
                                            [](Quantity q) { return q != Quantity::age_at_death; });
        LifeTable lt;
        if (need_table) {
          double s = 0.0;
          for (double v : probs) s += v;
          for (double& v : probs) v /= s;
          lt = life_table(probs, cfg.a0);
        }
        for (std::size_t qi = 0; qi < quantities.size(); ++qi) {
          const std::vector<double>* src = nullptr;
          switch (quantities[qi]) {
            case Quantity::age_at_death: src = &probs; break;
            case Quantity::qx: src = &lt.q; break;
            case Quantity::mx: src = &lt.m; break;
            case Quantity::ex: src = &lt.e; break;
          }
          for (std::size_t x = 0; x < n_age; ++x) values[qi][x * B + b] = (*src)[x];
        }
      }
      for (std::size_t qi = 0; qi < quantities.size(); ++qi) {
        const std::string name(quantity_name(quantities[qi]));
        for (std::size_t x = 0; x < n_age; ++x) {
          std::vector<double> v(values[qi].begin() + static_cast<std::ptrdiff_t>(x * B),
                                values[qi].begin() + static_cast<std::ptrdiff_t>((x + 1) * B));
          const auto qs = summarize(std::move(v), cfg.quantiles);
          for (std::size_t i = 0; i < qs.size(); ++i)
            table.rows.push_back({j, year, static_cast<int>(x), name, cfg.quantiles[i], qs[i]});
        }
      }
    }
  return table;
}

/// Pointwise posterior median of the age-at-death distribution of country j in
/// a given year, rescaled to sum to one (the point prediction used for scoring).
inline std::vector<double> median_distribution(const PosteriorDraws& draws, const StateForecast* fc, std::size_t j,
                                               int year) {
  const AgeGrid grid{draws.max_age};
  const auto states = states_for_year(draws, fc, j, year);
  std::vector<double> values(grid.cells() * states.size());
  std::vector<double> probs(grid.cells());
  for (std::size_t b = 0; b < states.size(); ++b) {
    const auto params = from_unconstrained(states[b], draws.variant);
    combine_components(params, component_cdfs(params, draws.variant, grid), probs);
    for (std::size_t x = 0; x < probs.size(); ++x) values[x * states.size() + b] = probs[x];
  }
  const double half[] = {0.5};
  std::vector<double> out(grid.cells());
  for (std::size_t x = 0; x < out.size(); ++x) {
    std::vector<double> v(values.begin() + static_cast<std::ptrdiff_t>(x * states.size()),
                          values.begin() + static_cast<std::ptrdiff_t>((x + 1) * states.size()));
    out[x] = summarize(std::move(v), half)[0];
  }
  double s = 0.0;
  for (double v : out) s += v;
  if (s > 0.0)
    for (double& v : out) v /= s;
  return out;
}

}  // namespace dysm
