#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dysm/adaptive_proposal.hpp"
#include "dysm/dynamic_prior.hpp"
#include "dysm/errors.hpp"
#include "dysm/mortality_model.hpp"
#include "dysm/panel.hpp"
#include "dysm/point_fit.hpp"
#include "dysm/random.hpp"

namespace dysm {

enum class Blocking {
  per_tk_across_countries,  // one block per (year, coordinate) stacking all countries
  per_jt,                   // one block per (country, year) over all coordinates
  scalar,                   // one block per (country, year, coordinate)
};

enum class InitMode {
  data,   // per country-year penalized point fits
  prior,  // draws from the initial-state prior
};

struct SamplerConfig {
  std::int64_t n_iter = 105000;  // total iterations, burn-in included
  std::int64_t burn_in = 5000;
  std::int64_t thin = 5;
  int n_chains = 1;
  std::uint64_t seed = 1;
  Blocking blocking = Blocking::per_tk_across_countries;
  int adapt_interval = 200;
  std::optional<double> target_accept;  // 0.234 for blocks, 0.44 for scalars when unset
  ModelVariant variant{};
  InnovationLaw innovation{};
  bool flat_priors = false;
  double initial_proposal_sd = 0.1;
  double epsilon = 1e-6;
  int threads = 1;
  InitMode init = InitMode::data;
  bool rescale_moves = true;  // joint (eta^2, path) rescaling after the dynamics updates

  std::int64_t stored_per_chain() const { return (n_iter - burn_in) / thin; }

  void validate() const {
    if (n_iter < 1) throw ConfigError("n_iter must be positive");
    if (burn_in < 0 || burn_in >= n_iter) throw ConfigError("burn_in must satisfy 0 <= burn_in < n_iter");
    if (thin < 1 || thin > n_iter) throw ConfigError("thin must satisfy 1 <= thin <= n_iter");
    if (n_chains < 1) throw ConfigError("n_chains must be positive");
    if (adapt_interval < 1) throw ConfigError("adapt_interval must be positive");
    if (target_accept && !(*target_accept > 0.0 && *target_accept < 1.0))
      throw ConfigError("target_accept must lie in (0, 1)");
    if (!(initial_proposal_sd > 0.0)) throw ConfigError("initial_proposal_sd must be positive");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (threads < 1) throw ConfigError("threads must be positive");
    innovation.validate();
  }
};

/// Column layout shared by the live chain state and stored draws:
/// theta0[j,k], beta[j,k], eta2[j,k], then theta[j,t,k].
struct DrawLayout {
  std::vector<std::string> countries;
  int first_year = 0;
  std::size_t years = 0;
  std::vector<Coord> coords;

  std::size_t p() const { return countries.size(); }
  std::size_t K() const { return coords.size(); }
  std::size_t T() const { return years; }
  std::size_t n_columns() const { return 3 * p() * K() + p() * T() * K(); }

  std::size_t theta0_col(std::size_t j, std::size_t k) const { return j * K() + k; }
  std::size_t beta_col(std::size_t j, std::size_t k) const { return p() * K() + j * K() + k; }
  std::size_t eta2_col(std::size_t j, std::size_t k) const { return 2 * p() * K() + j * K() + k; }
  std::size_t theta_col(std::size_t j, std::size_t t, std::size_t k) const {
    return 3 * p() * K() + (j * T() + t) * K() + k;
  }

  std::vector<std::string> column_names() const {
    std::vector<std::string> out(n_columns());
    for (std::size_t j = 0; j < p(); ++j)
      for (std::size_t k = 0; k < K(); ++k) {
        const std::string tail = countries[j] + ":" + std::string(coord_name(coords[k]));
        out[theta0_col(j, k)] = "theta0:" + tail;
        out[beta_col(j, k)] = "beta:" + tail;
        out[eta2_col(j, k)] = "eta2:" + tail;
        for (std::size_t t = 0; t < T(); ++t)
          out[theta_col(j, t, k)] = "theta:" + countries[j] + ":" + std::to_string(first_year + static_cast<int>(t)) +
                                    ":" + std::string(coord_name(coords[k]));
      }
    return out;
  }

  bool operator==(const DrawLayout&) const = default;
};

/// Full parameter set of the model, stored flat in DrawLayout order.
/// Year index t runs 0..T-1; theta0 is the state before the first year.
class ModelState {
 public:
  ModelState() = default;
  explicit ModelState(DrawLayout layout) : layout_(std::move(layout)), values_(layout_.n_columns(), 0.0) {}

  const DrawLayout& layout() const { return layout_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  double& theta0(std::size_t j, std::size_t k) { return values_[layout_.theta0_col(j, k)]; }
  double theta0(std::size_t j, std::size_t k) const { return values_[layout_.theta0_col(j, k)]; }
  double& beta(std::size_t j, std::size_t k) { return values_[layout_.beta_col(j, k)]; }
  double beta(std::size_t j, std::size_t k) const { return values_[layout_.beta_col(j, k)]; }
  double& eta2(std::size_t j, std::size_t k) { return values_[layout_.eta2_col(j, k)]; }
  double eta2(std::size_t j, std::size_t k) const { return values_[layout_.eta2_col(j, k)]; }
  double& theta(std::size_t j, std::size_t t, std::size_t k) { return values_[layout_.theta_col(j, t, k)]; }
  double theta(std::size_t j, std::size_t t, std::size_t k) const { return values_[layout_.theta_col(j, t, k)]; }

  /// Latent state of country j in year index t.
  std::span<const double> cell(std::size_t j, std::size_t t) const {
    return {values_.data() + layout_.theta_col(j, t, 0), layout_.K()};
  }

  /// State at time `step`, where step 0 is theta0 and step s >= 1 is year index s-1.
  double at(std::size_t j, std::size_t step, std::size_t k) const {
    return step == 0 ? theta0(j, k) : theta(j, step - 1, k);
  }

  CountryDynamics dynamics(std::size_t j) const {
    const std::size_t K = layout_.K(), T = layout_.T();
    CountryDynamics d;
    d.years = T;
    for (std::size_t k = 0; k < K; ++k) {
      d.beta.push_back(beta(j, k));
      d.eta2.push_back(eta2(j, k));
      d.theta0.push_back(theta0(j, k));
    }
    d.trajectory.resize(T * K);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < K; ++k) d.trajectory[t * K + k] = theta(j, t, k);
    return d;
  }

 private:
  DrawLayout layout_;
  std::vector<double> values_;
};

/// Everything the posterior depends on besides the parameters.
struct Model {
  const DeathPanel* panel = nullptr;
  ModelVariant variant{};
  Hyperparams hyper;
  InnovationLaw law{};
  bool flat_priors = false;
  std::vector<Coord> coords;

  Model(const DeathPanel& data, ModelVariant v, Hyperparams h, InnovationLaw l = {}, bool flat = false)
      : panel(&data), variant(v), hyper(std::move(h)), law(l), flat_priors(flat), coords(coordinates(v)) {
    hyper.validate(coords.size());
    law.validate();
    if (flat_priors && law.kind == InnovationLaw::Kind::gaussian && data.years() < 2)
      throw ConfigError("flat priors need at least two years of data for a proper posterior");
  }

  std::size_t dim() const { return coords.size(); }

  DrawLayout layout() const { return {panel->labels(), panel->first_year(), panel->years(), coords}; }
};

/// Multinomial log-likelihood of cell (j, t) at the given latent state.
inline double cell_loglik(const Model& model, std::size_t j, std::size_t t, std::span<const double> state) {
  const auto deaths = model.panel->cell(j, t);
  if (model.panel->total(j, t) == 0) return 0.0;
  const auto probs = discretize(from_unconstrained(state, model.variant), model.variant, model.panel->grid());
  return multinomial_loglik(deaths, probs);
}

inline double total_loglik(const Model& model, const ModelState& s) {
  double total = 0.0;
  for (std::size_t j = 0; j < model.panel->countries(); ++j)
    for (std::size_t t = 0; t < model.panel->years(); ++t) total += cell_loglik(model, j, t, s.cell(j, t));
  return total;
}

/// Unnormalized log posterior of the complete parameter set.
inline double log_posterior(const Model& model, const ModelState& s) {
  double total = total_loglik(model, s);
  for (std::size_t j = 0; j < model.panel->countries(); ++j)
    total += log_state_prior(s.dynamics(j), model.hyper, model.law, model.flat_priors);
  return total;
}

/// A Metropolis block: a set of (country, coordinate) sites sharing year index t.
struct Site {
  std::size_t j;
  std::size_t k;
};

struct Block {
  std::size_t t = 0;
  std::vector<Site> sites;
};

/// Change in the transition terms touching year t when the block's sites move
/// to `proposed`: the density into t from t-1 and, unless t is the last year,
/// the density out of t into t+1.
inline double transition_log_ratio(const Model& model, const ModelState& s, const Block& block,
                                   std::span<const double> proposed) {
  const std::size_t T = s.layout().T();
  const std::size_t step = block.t + 1;
  double r = 0.0;
  for (std::size_t i = 0; i < block.sites.size(); ++i) {
    const auto [j, k] = block.sites[i];
    const double beta = s.beta(j, k), eta2 = s.eta2(j, k);
    const double prev = s.at(j, step - 1, k);
    const double cur = s.at(j, step, k);
    const double prop = proposed[i];
    r += model.law.log_density(prop, beta + prev, eta2) - model.law.log_density(cur, beta + prev, eta2);
    if (block.t + 1 < T) {
      const double next = s.at(j, step + 1, k);
      r += model.law.log_density(next, beta + prop, eta2) - model.law.log_density(next, beta + cur, eta2);
    }
  }
  return r;
}

/// log q(proposed) - log q(current) for a block of latent states, where q is
/// the full conditional: multinomial likelihood of the touched cells times the
/// transition densities into and out of year t. The random-walk proposal is
/// symmetric and cancels.
inline double metropolis_log_ratio(const Model& model, const ModelState& s, const Block& block,
                                   std::span<const double> proposed) {
  detail::require(proposed.size() == block.sites.size(), "proposal does not match the block");
  double r = transition_log_ratio(model, s, block, proposed);
  std::vector<std::size_t> countries;
  for (const auto& site : block.sites)
    if (std::find(countries.begin(), countries.end(), site.j) == countries.end()) countries.push_back(site.j);
  for (std::size_t j : countries) {
    const auto cur = s.cell(j, block.t);
    std::vector<double> next(cur.begin(), cur.end());
    for (std::size_t i = 0; i < block.sites.size(); ++i)
      if (block.sites[i].j == j) next[block.sites[i].k] = proposed[i];
    const double after = cell_loglik(model, j, block.t, next);
    const double before = cell_loglik(model, j, block.t, cur);
    if (after == -std::numeric_limits<double>::infinity() || std::isnan(after))
      return -std::numeric_limits<double>::infinity();
    r += after - before;
  }
  return r;
}

inline std::vector<Block> make_blocks(Blocking blocking, std::size_t p, std::size_t T, std::size_t K) {
  std::vector<Block> out;
  for (std::size_t t = 0; t < T; ++t) {
    switch (blocking) {
      case Blocking::per_tk_across_countries:
        for (std::size_t k = 0; k < K; ++k) {
          Block b{t, {}};
          for (std::size_t j = 0; j < p; ++j) b.sites.push_back({j, k});
          out.push_back(std::move(b));
        }
        break;
      case Blocking::per_jt:
        for (std::size_t j = 0; j < p; ++j) {
          Block b{t, {}};
          for (std::size_t k = 0; k < K; ++k) b.sites.push_back({j, k});
          out.push_back(std::move(b));
        }
        break;
      case Blocking::scalar:
        for (std::size_t j = 0; j < p; ++j)
          for (std::size_t k = 0; k < K; ++k) out.push_back({t, {{j, k}}});
        break;
    }
  }
  return out;
}

/// Draws the initial parameter set: theta0 from its prior, a flat trajectory
/// at theta0, beta at its prior mean and eta^2 at the prior mode b/(a+1)
/// (at least 1e-4). Draws whose log-likelihood is not finite are retried with
/// the prior spread shrunk by 10% per attempt, up to 100 attempts.
inline ModelState initialize_states(const Model& model, Rng& rng) {
  const auto layout = model.layout();
  const std::size_t p = layout.p(), T = layout.T(), K = layout.K();
  const auto& h = model.hyper;
  std::string last_failure;
  double shrink = 1.0;
  for (int attempt = 0; attempt < 100; ++attempt, shrink *= 0.9) {
    ModelState s(layout);
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t k = 0; k < K; ++k) {
        s.theta0(j, k) = h.m[k] + shrink * h.s[k] * draw_normal(rng);
        s.beta(j, k) = model.flat_priors ? 0.0 : h.m_beta[k];
        s.eta2(j, k) = model.flat_priors ? 1e-4 : std::max(h.b[k] / (h.a[k] + 1.0), 1e-4);
        for (std::size_t t = 0; t < T; ++t) s.theta(j, t, k) = s.theta0(j, k);
      }
    bool ok = true;
    for (std::size_t j = 0; j < p && ok; ++j)
      for (std::size_t t = 0; t < T && ok; ++t) {
        const double ll = cell_loglik(model, j, t, s.cell(j, t));
        if (!std::isfinite(ll)) {
          ok = false;
          last_failure = layout.countries[j] + " " + std::to_string(layout.first_year + static_cast<int>(t));
        }
      }
    if (ok) return s;
  }
  throw NumericalError("no finite initial log-likelihood after 100 attempts; last failing cell: " + last_failure);
}

/// Starts every trajectory at penalized point fits of the observed cells
/// (warm-started year to year; years without deaths copy the nearest fitted
/// year), theta0 at the first year, beta and eta^2 at the mean and variance of
/// the fitted increments. Falls back to initialize_states when a cell is not
/// finite.
inline ModelState initialize_from_data(const Model& model, Rng& rng) {
  gsl_set_error_handler_off();
  const auto layout = model.layout();
  const auto& panel = *model.panel;
  const std::size_t p = layout.p(), T = layout.T(), K = layout.K();
  const auto& h = model.hyper;
  ModelState s(layout);
  for (std::size_t j = 0; j < p; ++j) {
    std::vector<double> pooled(panel.grid().cells(), 0.0);
    double n = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const auto c = panel.cell(j, t);
      for (std::size_t x = 0; x < c.size(); ++x) pooled[x] += static_cast<double>(c[x]);
      n += static_cast<double>(panel.total(j, t));
    }
    std::vector<std::vector<double>> fitted(T);
    if (n > 0.0) {
      for (double& v : pooled) v /= n;
      const auto start = to_unconstrained(heuristic_params(pooled, model.variant), model.variant);
      std::vector<double> x(start.values().begin(), start.values().end());
      bool first = true;
      for (std::size_t t = 0; t < T; ++t) {
        if (panel.total(j, t) == 0) continue;
        x = fit_cell(panel.cell(j, t), model.variant, panel.grid(), h, x, first ? 4000 : 800);
        fitted[t] = x;
        first = false;
      }
      for (std::size_t t = 1; t < T; ++t)
        if (fitted[t].empty() && !fitted[t - 1].empty()) fitted[t] = fitted[t - 1];
      for (std::size_t t = T - 1; t-- > 0;)
        if (fitted[t].empty()) fitted[t] = fitted[t + 1];
    } else {
      for (auto& f : fitted) f = h.m;
    }
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t t = 0; t < T; ++t) s.theta(j, t, k) = fitted[t][k];
      s.theta0(j, k) = fitted[0][k];
      double mean = 0.0, ss = 0.0;
      for (std::size_t t = 1; t < T; ++t) mean += fitted[t][k] - fitted[t - 1][k];
      mean = T > 1 ? mean / static_cast<double>(T - 1) : 0.0;
      for (std::size_t t = 1; t < T; ++t) {
        const double d = fitted[t][k] - fitted[t - 1][k] - mean;
        ss += d * d;
      }
      s.beta(j, k) = T > 1 ? mean : (model.flat_priors ? 0.0 : h.m_beta[k]);
      s.eta2(j, k) = std::max(T > 2 ? ss / static_cast<double>(T - 2) : 0.0, 1e-4);
    }
  }
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t t = 0; t < T; ++t)
      if (!std::isfinite(cell_loglik(model, j, t, s.cell(j, t)))) return initialize_states(model, rng);
  return s;
}

/// Sum over years of the innovation log densities of coordinate k of country j.
inline double walk_log_density(const Model& model, const ModelState& s, std::size_t j, std::size_t k) {
  double total = 0.0;
  const double beta = s.beta(j, k), eta2 = s.eta2(j, k);
  for (std::size_t t = 1; t <= s.layout().T(); ++t) total += model.law.log_density(s.at(j, t, k), beta + s.at(j, t - 1, k), eta2);
  return total;
}

// Full conditionals (up to constants) of the scalar dynamics parameters,
// evaluated at the values currently held in s. Used by the Metropolis updates
// when the innovations are not Gaussian.

inline double theta0_log_conditional(const Model& model, const ModelState& s, std::size_t j, std::size_t k) {
  const auto& h = model.hyper;
  return log_normal_density(s.theta0(j, k), h.m[k], h.s[k] * h.s[k]) +
         model.law.log_density(s.at(j, 1, k), s.beta(j, k) + s.theta0(j, k), s.eta2(j, k));
}

inline double beta_log_conditional(const Model& model, const ModelState& s, std::size_t j, std::size_t k) {
  const auto& h = model.hyper;
  const double prior = model.flat_priors ? 0.0 : log_normal_density(s.beta(j, k), h.m_beta[k], h.s_beta[k] * h.s_beta[k]);
  return walk_log_density(model, s, j, k) + prior;
}

/// Conditional density of u = log eta^2, including the Jacobian e^u.
inline double log_eta2_log_conditional(const Model& model, const ModelState& s, std::size_t j, std::size_t k) {
  const auto& h = model.hyper;
  const double e = s.eta2(j, k);
  if (!(e > 0.0) || e > eta2_max) return -std::numeric_limits<double>::infinity();
  const double prior = model.flat_priors ? log_flat_eta2_density(e) : log_inv_gamma_density(e, h.a[k], h.b[k]);
  return walk_log_density(model, s, j, k) + prior + std::log(e);
}

/// Thinned output of one chain.
struct ChainDraws {
  std::vector<std::int64_t> iteration;
  std::vector<double> loglik;   // total log-likelihood incl. multinomial coefficients
  std::vector<double> values;   // row-major, DrawLayout columns
  std::map<std::string, double> acceptance;  // post-burn-in acceptance rate per coordinate

  std::size_t rows() const { return iteration.size(); }
  std::span<const double> row(std::size_t r, std::size_t n_columns) const {
    return {values.data() + r * n_columns, n_columns};
  }
};

struct PosteriorDraws {
  DrawLayout layout;
  ModelVariant variant{};
  InnovationLaw law{};
  bool flat_priors = false;
  Hyperparams hyper;
  SamplerConfig config;
  int max_age = 110;
  std::vector<ChainDraws> chains;

  std::size_t total_rows() const {
    std::size_t n = 0;
    for (const auto& c : chains) n += c.rows();
    return n;
  }

  /// Visits every stored row across chains in chain order.
  template <typename F>
  void for_each_row(F&& f) const {
    const std::size_t n = layout.n_columns();
    for (const auto& c : chains)
      for (std::size_t r = 0; r < c.rows(); ++r) f(c.row(r, n));
  }

  /// Column of one parameter across all rows.
  std::vector<double> column(std::size_t col) const {
    std::vector<double> out;
    out.reserve(total_rows());
    for_each_row([&](std::span<const double> row) { out.push_back(row[col]); });
    return out;
  }
};

/// One Metropolis-within-Gibbs chain. Each iteration sweeps the latent-state
/// blocks with adaptive random-walk Metropolis, then refreshes theta0, beta and
/// eta^2 per (country, coordinate): exact Gibbs draws under Gaussian
/// innovations, scalar adaptive Metropolis under Student-t innovations.
class Chain {
 public:
  /// Starts from `start` when given, otherwise from cfg.init.
  Chain(const Model& model, const SamplerConfig& cfg, std::uint64_t seed, const ModelState* start = nullptr)
      : model_(model), cfg_(cfg), rng_(seed), layout_(model.layout()) {
    cfg_.validate();
    Rng init_rng(derive_seed(seed, {stream::init}));
    if (start) {
      detail::require(start->layout() == layout_, "start state layout does not match the model");
      state_ = *start;
    } else {
      state_ = cfg_.init == InitMode::data ? initialize_from_data(model_, init_rng) : initialize_states(model_, init_rng);
    }
    blocks_ = make_blocks(cfg_.blocking, layout_.p(), layout_.T(), layout_.K());
    for (const auto& b : blocks_) {
      const std::size_t d = b.sites.size();
      const double target = cfg_.target_accept.value_or(d == 1 ? 0.44 : 0.234);
      proposals_.emplace_back(d, cfg_.initial_proposal_sd, target, cfg_.epsilon);
    }
    if (conjugate_free()) {
      const std::size_t n = layout_.p() * layout_.K();
      const double target = cfg_.target_accept.value_or(0.44);
      for (std::size_t i = 0; i < 3 * n; ++i) scalar_proposals_.emplace_back(1, cfg_.initial_proposal_sd, target, cfg_.epsilon);
    }
    if (cfg_.rescale_moves)
      for (std::size_t i = 0; i < layout_.p() * layout_.K(); ++i)
        rescale_proposals_.emplace_back(1, 1.0, cfg_.target_accept.value_or(0.44), cfg_.epsilon);
    refresh_data();
  }

  const ModelState& state() const { return state_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const std::vector<AdaptiveProposal>& proposals() const { return proposals_; }
  std::int64_t iteration() const { return iteration_; }
  bool adapting() const { return iteration_ < cfg_.burn_in; }

  double total_loglik() const {
    double s = 0.0;
    for (const auto& c : cache_) s += c.log_coef + c.kernel;
    return s;
  }

  /// Rebuilds the likelihood caches, e.g. after the panel's counts changed.
  void refresh_data() {
    const std::size_t p = layout_.p(), T = layout_.T();
    cache_.assign(p * T, {});
    scratch_.assign(p, {});
    probs_.assign(model_.panel->grid().cells(), 0.0);
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t t = 0; t < T; ++t) {
        auto& c = cache_[j * T + t];
        c.log_coef = log_multinomial_coefficient(model_.panel->cell(j, t));
        c.params = from_unconstrained(state_.cell(j, t), model_.variant);
        c.cdfs = component_cdfs(c.params, model_.variant, model_.panel->grid());
        c.kernel = kernel_for(j, t, c.params, c.cdfs);
      }
  }

  /// Replaces the current parameters (caches are rebuilt).
  void set_state(const ModelState& s) {
    detail::require(s.layout() == layout_, "state layout does not match the chain");
    state_ = s;
    refresh_data();
  }

  /// Log acceptance ratio of a block move computed through the likelihood
  /// caches; equals metropolis_log_ratio.
  double cached_log_ratio(std::size_t b, std::span<const double> proposed) {
    return evaluate_block(blocks_[b], proposed);
  }

  /// Log acceptance ratio of the rescaling move that sets log eta^2 to
  /// `log_eta2` and scales the deviations of theta[j, 1..T, k] from the drift
  /// line theta0 + beta t by the matching factor.
  double rescale_log_ratio(std::size_t j, std::size_t k, double log_eta2) { return evaluate_rescale(j, k, log_eta2); }

  void step() {
    const bool adapt = adapting();
    for (std::size_t b = 0; b < blocks_.size(); ++b) update_block(b, adapt);
    update_dynamics(adapt);
    ++iteration_;
    if (adapt && iteration_ % cfg_.adapt_interval == 0) {
      for (auto& q : proposals_) q.adapt();
      for (auto& q : scalar_proposals_) q.adapt();
      for (auto& q : rescale_proposals_) q.adapt();
    }
    if (iteration_ == cfg_.burn_in) {
      for (auto& q : proposals_) q.reset_counts();
      for (auto& q : scalar_proposals_) q.reset_counts();
      for (auto& q : rescale_proposals_) q.reset_counts();
    }
  }

  ChainDraws run() {
    ChainDraws out;
    const auto n_store = static_cast<std::size_t>(cfg_.stored_per_chain());
    out.iteration.reserve(n_store);
    out.loglik.reserve(n_store);
    out.values.reserve(n_store * layout_.n_columns());
    while (iteration_ < cfg_.n_iter) {
      step();
      if (iteration_ > cfg_.burn_in && (iteration_ - cfg_.burn_in) % cfg_.thin == 0) {
        out.iteration.push_back(iteration_);
        out.loglik.push_back(total_loglik());
        auto v = state_.values();
        out.values.insert(out.values.end(), v.begin(), v.end());
      }
    }
    out.acceptance = acceptance_summary();
    return out;
  }

  /// Acceptance rate per latent coordinate, pooled over the blocks touching it
  /// (counts since the end of burn-in).
  std::map<std::string, double> acceptance_summary() const {
    std::map<std::string, std::pair<long long, long long>> counts;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      std::vector<std::size_t> ks;
      for (const auto& s : blocks_[b].sites)
        if (std::find(ks.begin(), ks.end(), s.k) == ks.end()) ks.push_back(s.k);
      const std::string key = ks.size() == 1 ? "theta:" + std::string(coord_name(layout_.coords[ks[0]])) : "theta:all";
      counts[key].first += proposals_[b].accepted();
      counts[key].second += proposals_[b].proposed();
    }
    for (std::size_t i = 0; i < scalar_proposals_.size(); ++i) {
      static const char* kinds[] = {"theta0", "beta", "log_eta2"};
      auto& c = counts[kinds[i % 3]];
      c.first += scalar_proposals_[i].accepted();
      c.second += scalar_proposals_[i].proposed();
    }
    for (const auto& q : rescale_proposals_) {
      counts["rescale"].first += q.accepted();
      counts["rescale"].second += q.proposed();
    }
    std::map<std::string, double> out;
    for (const auto& [k, c] : counts) out[k] = c.second > 0 ? static_cast<double>(c.first) / c.second : 0.0;
    return out;
  }

 private:
  struct CellCache {
    MixtureParams params;
    ComponentCdfs cdfs;
    double log_coef = 0.0;
    double kernel = 0.0;
  };

  bool conjugate_free() const { return model_.law.kind != InnovationLaw::Kind::gaussian; }

  double kernel_for(std::size_t j, std::size_t t, const MixtureParams& params, const ComponentCdfs& cdfs) {
    if (model_.panel->total(j, t) == 0) return 0.0;
    combine_components(params, cdfs, probs_);
    const double k = multinomial_kernel(model_.panel->cell(j, t), probs_);
    return std::isnan(k) ? -std::numeric_limits<double>::infinity() : k;
  }

  // Fills scratch_ for every country touched by the block and returns the
  // log acceptance ratio.
  double evaluate_block(const Block& block, std::span<const double> proposed) {
    const std::size_t T = layout_.T();
    double r = transition_log_ratio(model_, state_, block, proposed);
    touched_.clear();
    for (std::size_t i = 0; i < block.sites.size(); ++i) {
      const std::size_t j = block.sites[i].j;
      if (std::find(touched_.begin(), touched_.end(), j) == touched_.end()) {
        touched_.push_back(j);
        auto cur = state_.cell(j, block.t);
        scratch_[j].state.assign(cur.begin(), cur.end());
        scratch_[j].changed = 0;
      }
      scratch_[j].state[block.sites[i].k] = proposed[i];
      scratch_[j].changed |= 1u << static_cast<unsigned>(component_of(layout_.coords[block.sites[i].k]));
    }
    for (std::size_t j : touched_) {
      auto& sc = scratch_[j];
      const auto& cached = cache_[j * T + block.t];
      sc.empty = model_.panel->total(j, block.t) == 0;
      if (sc.empty) continue;  // no likelihood; cdfs are rebuilt by refresh_data when needed
      sc.params = from_unconstrained(sc.state, model_.variant);
      sc.cdfs = cached.cdfs;
      for (Component c : {Component::infant, Component::adult, Component::old_age})
        if (sc.changed & (1u << static_cast<unsigned>(c)))
          compute_component(c, sc.params, model_.variant, model_.panel->grid(), sc.cdfs);
      sc.kernel = kernel_for(j, block.t, sc.params, sc.cdfs);
      if (sc.kernel == -std::numeric_limits<double>::infinity()) return -std::numeric_limits<double>::infinity();
      r += sc.kernel - cached.kernel;
    }
    return r;
  }

  void update_block(std::size_t b, bool adapt) {
    const Block& block = blocks_[b];
    auto& q = proposals_[b];
    const std::size_t d = block.sites.size();
    current_.resize(d);
    proposed_.resize(d);
    for (std::size_t i = 0; i < d; ++i) current_[i] = state_.theta(block.sites[i].j, block.t, block.sites[i].k);
    q.propose(current_, proposed_, rng_);
    const double r = evaluate_block(block, proposed_);
    const bool accept = std::log(draw_uniform(rng_)) < r;
    if (accept) {
      for (std::size_t i = 0; i < d; ++i) state_.theta(block.sites[i].j, block.t, block.sites[i].k) = proposed_[i];
      for (std::size_t j : touched_) {
        if (scratch_[j].empty) continue;
        auto& cached = cache_[j * layout_.T() + block.t];
        std::swap(cached.cdfs, scratch_[j].cdfs);
        cached.params = scratch_[j].params;
        cached.kernel = scratch_[j].kernel;
      }
    }
    q.count(accept);
    if (adapt) q.record(accept ? std::span<const double>(proposed_) : std::span<const double>(current_));
  }

  void update_dynamics(bool adapt) {
    const std::size_t p = layout_.p(), T = layout_.T(), K = layout_.K();
    const auto& h = model_.hyper;
    increments_.resize(T);
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t k = 0; k < K; ++k) {
        if (!conjugate_free()) {
          state_.theta0(j, k) =
              gibbs_update_theta0(state_.at(j, 1, k), state_.beta(j, k), state_.eta2(j, k), h.m[k], h.s[k], rng_);
          fill_increments(j, k);
          const double s_beta = model_.flat_priors ? std::numeric_limits<double>::infinity() : h.s_beta[k];
          state_.beta(j, k) = gibbs_update_beta(increments_, state_.eta2(j, k), h.m_beta[k], s_beta, rng_);
          const double a = model_.flat_priors ? 0.0 : h.a[k];
          const double b = model_.flat_priors ? 0.0 : h.b[k];
          state_.eta2(j, k) = gibbs_update_eta2(increments_, state_.beta(j, k), a, b, rng_);
        } else {
          metropolis_dynamics(j, k, adapt);
        }
        if (cfg_.rescale_moves) rescale_move(j, k, adapt);
      }
  }

  // Under the map the walk density of the increments and the Jacobian of the
  // path cancel, leaving the eta^2 prior, the log-scale term and the likelihood.
  double evaluate_rescale(std::size_t j, std::size_t k, double log_eta2) {
    const std::size_t T = layout_.T();
    const auto& h = model_.hyper;
    const double cur = std::log(state_.eta2(j, k));
    auto prior = [&](double u) {
      const double e = std::exp(u);
      if (e > eta2_max) return -std::numeric_limits<double>::infinity();
      return (model_.flat_priors ? log_flat_eta2_density(e) : log_inv_gamma_density(e, h.a[k], h.b[k])) + u;
    };
    double r = prior(log_eta2) - prior(cur);
    if (!std::isfinite(r)) return -std::numeric_limits<double>::infinity();
    const double scale = std::exp(0.5 * (log_eta2 - cur));
    const double th0 = state_.theta0(j, k), beta = state_.beta(j, k);
    const Component comp = component_of(layout_.coords[k]);
    rescaled_.resize(T);
    rescale_scratch_.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
      const double line = th0 + beta * static_cast<double>(t + 1);
      rescaled_[t] = line + scale * (state_.theta(j, t, k) - line);
      auto& sc = rescale_scratch_[t];
      sc.empty = model_.panel->total(j, t) == 0;
      if (sc.empty) continue;
      const auto& cached = cache_[j * T + t];
      auto cell = state_.cell(j, t);
      sc.state.assign(cell.begin(), cell.end());
      sc.state[k] = rescaled_[t];
      sc.params = from_unconstrained(sc.state, model_.variant);
      sc.cdfs = cached.cdfs;
      if (comp != Component::weights) compute_component(comp, sc.params, model_.variant, model_.panel->grid(), sc.cdfs);
      sc.kernel = kernel_for(j, t, sc.params, sc.cdfs);
      if (sc.kernel == -std::numeric_limits<double>::infinity()) return -std::numeric_limits<double>::infinity();
      r += sc.kernel - cached.kernel;
    }
    return r;
  }

  void rescale_move(std::size_t j, std::size_t k, bool adapt) {
    auto& q = rescale_proposals_[j * layout_.K() + k];
    const double cur = std::log(state_.eta2(j, k));
    double prop = 0.0;
    q.propose(std::span<const double>(&cur, 1), std::span<double>(&prop, 1), rng_);
    const double r = evaluate_rescale(j, k, prop);
    const bool accept = std::log(draw_uniform(rng_)) < r;
    q.count(accept);
    if (accept) {
      const std::size_t T = layout_.T();
      state_.eta2(j, k) = std::exp(prop);
      for (std::size_t t = 0; t < T; ++t) {
        state_.theta(j, t, k) = rescaled_[t];
        auto& sc = rescale_scratch_[t];
        if (sc.empty) continue;
        auto& cached = cache_[j * T + t];
        std::swap(cached.cdfs, sc.cdfs);
        cached.params = sc.params;
        cached.kernel = sc.kernel;
      }
    }
    if (adapt) q.record(std::span<const double>(accept ? &prop : &cur, 1));
  }

  void fill_increments(std::size_t j, std::size_t k) {
    for (std::size_t t = 1; t <= layout_.T(); ++t) increments_[t - 1] = state_.at(j, t, k) - state_.at(j, t - 1, k);
  }

  // Scalar random-walk updates for theta0, beta and log eta^2 when the
  // innovations are not Gaussian.
  void metropolis_dynamics(std::size_t j, std::size_t k, bool adapt) {
    const std::size_t base = 3 * (j * layout_.K() + k);
    auto mh = [&](AdaptiveProposal& q, double& value, auto&& log_target) {
      const double cur = value;
      double prop = 0.0;
      q.propose(std::span<const double>(&cur, 1), std::span<double>(&prop, 1), rng_);
      value = prop;
      const double after = log_target();
      value = cur;
      const double r = after - log_target();
      const bool accept = std::log(draw_uniform(rng_)) < r;
      q.count(accept);
      if (accept) value = prop;
      if (adapt) q.record(std::span<const double>(&value, 1));
    };
    mh(scalar_proposals_[base], state_.theta0(j, k), [&] { return theta0_log_conditional(model_, state_, j, k); });
    mh(scalar_proposals_[base + 1], state_.beta(j, k), [&] { return beta_log_conditional(model_, state_, j, k); });
    double u = std::log(state_.eta2(j, k));
    mh(scalar_proposals_[base + 2], u, [&] {
      state_.eta2(j, k) = std::exp(u);
      return log_eta2_log_conditional(model_, state_, j, k);
    });
    state_.eta2(j, k) = std::exp(u);
  }

  struct Scratch {
    std::vector<double> state;
    MixtureParams params;
    ComponentCdfs cdfs;
    double kernel = 0.0;
    unsigned changed = 0;
    bool empty = false;
  };

  const Model& model_;
  SamplerConfig cfg_;
  Rng rng_;
  DrawLayout layout_;
  ModelState state_;
  std::vector<Block> blocks_;
  std::vector<AdaptiveProposal> proposals_;
  std::vector<AdaptiveProposal> scalar_proposals_;  // 3 per (j, k): theta0, beta, log eta^2
  std::vector<AdaptiveProposal> rescale_proposals_;  // 1 per (j, k), on log eta^2
  std::vector<CellCache> cache_;
  std::vector<Scratch> scratch_, rescale_scratch_;
  std::vector<std::size_t> touched_;
  std::vector<double> probs_, current_, proposed_, increments_, rescaled_;
  std::int64_t iteration_ = 0;
};

/// Runs cfg.n_chains independent chains (in parallel up to cfg.threads) and
/// collects their thinned draws. Chain c uses the stream
/// derive_seed(cfg.seed, {stream::chain, c}).
inline PosteriorDraws run_chain(const DeathPanel& panel, const Hyperparams& h, const SamplerConfig& cfg) {
  cfg.validate();
  const Model model(panel, cfg.variant, h, cfg.innovation, cfg.flat_priors);
  PosteriorDraws out;
  out.layout = model.layout();
  out.variant = cfg.variant;
  out.law = cfg.innovation;
  out.flat_priors = cfg.flat_priors;
  out.hyper = model.hyper;
  out.config = cfg;
  out.max_age = panel.grid().max_age;
  out.chains.resize(static_cast<std::size_t>(cfg.n_chains));

  // The data-driven start is deterministic, so it is computed once and shared.
  std::optional<ModelState> start;
  if (cfg.init == InitMode::data) {
    Rng init_rng(derive_seed(cfg.seed, {stream::init}));
    start = initialize_from_data(model, init_rng);
  }
  std::vector<std::exception_ptr> errors(out.chains.size());
  auto run_one = [&](std::size_t c) {
    try {
      Chain chain(model, cfg, derive_seed(cfg.seed, {stream::chain, c}), start ? &*start : nullptr);
      out.chains[c] = chain.run();
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), out.chains.size());
  if (workers <= 1) {
    for (std::size_t c = 0; c < out.chains.size(); ++c) run_one(c);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < out.chains.size(); c += workers) run_one(c);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace dysm
