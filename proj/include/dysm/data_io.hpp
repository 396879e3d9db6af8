#pragma once

#include <algorithm>
#include <charconv>
#include <climits>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "dysm/config_io.hpp"
#include "dysm/diagnostics.hpp"
#include "dysm/errors.hpp"
#include "dysm/panel.hpp"
#include "dysm/random.hpp"
#include "dysm/sampler.hpp"

namespace dysm {

namespace csv {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

inline bool parse_int(std::string_view s, long long& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

/// Shortest representation that reads back to the same double.
inline std::string format(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

/// Column index by header name.
inline std::map<std::string, std::size_t> header_index(std::string_view line) {
  std::map<std::string, std::size_t> idx;
  const auto cols = split(line);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    std::string name(cols[i]);
    if (i == 0 && name.size() >= 3 && name.compare(0, 3, "\xEF\xBB\xBF") == 0) name.erase(0, 3);
    idx[name] = i;
  }
  return idx;
}

}  // namespace csv

/// Rounds nonnegative values half-to-even and then moves single units by
/// largest remainder so the integers sum to the half-to-even rounded total.
/// Ties between remainders go to the lower index.
inline std::vector<std::int64_t> round_preserving_total(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::int64_t> out(n);
  std::vector<double> residual(n);
  double total = 0.0;
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += values[i];
    out[i] = static_cast<std::int64_t>(std::nearbyint(values[i]));
    residual[i] = values[i] - static_cast<double>(out[i]);
    sum += out[i];
  }
  const auto target = static_cast<std::int64_t>(std::nearbyint(total));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (sum < target) {
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return residual[a] > residual[b]; });
    for (std::size_t i = 0; sum < target; i = (i + 1) % n, ++sum) ++out[order[i]];
  } else if (sum > target) {
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return residual[a] < residual[b]; });
    for (std::size_t i = 0; sum > target; i = (i + 1) % n) {
      if (out[order[i]] > 0) {
        --out[order[i]];
        --sum;
      }
    }
  }
  return out;
}

/// Reads a long CSV with header columns country, year, age, deaths (any order,
/// other columns ignored). The age label "110+" (any "N+") maps to cell N.
/// Non-integer counts are rounded per country-year with a warning.
inline DeathPanel load_panel(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open panel file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("panel file " + path.string() + " is empty");
  const auto idx = csv::header_index(line);
  for (const char* col : {"country", "year", "age", "deaths"})
    if (!idx.count(col)) throw DataError(std::string("panel file lacks column '") + col + "'");
  const std::size_t ic = idx.at("country"), iy = idx.at("year"), ia = idx.at("age"), id = idx.at("deaths");
  const std::size_t need = std::max({ic, iy, ia, id}) + 1;

  std::vector<std::string> countries;
  std::map<std::string, std::size_t> country_pos;
  std::map<std::tuple<std::size_t, long long, long long>, double> cells;
  long long max_age = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    const std::string where = path.filename().string() + ":" + std::to_string(line_no);
    if (f.size() < need) throw DataError(where + ": expected at least " + std::to_string(need) + " fields");
    const std::string country(f[ic]);
    if (country.empty()) throw DataError(where + ": empty country label");
    long long year = 0, age = 0;
    if (!csv::parse_int(f[iy], year)) throw DataError(where + ": bad year '" + std::string(f[iy]) + "'");
    std::string_view age_s = f[ia];
    if (!age_s.empty() && age_s.back() == '+') age_s.remove_suffix(1);
    if (!csv::parse_int(age_s, age) || age < 0) throw DataError(where + ": bad age '" + std::string(f[ia]) + "'");
    double deaths = 0.0;
    if (!csv::parse_double(f[id], deaths) || !std::isfinite(deaths))
      throw DataError(where + ": bad death count '" + std::string(f[id]) + "'");
    if (deaths < 0.0) throw DataError(where + ": negative death count");
    auto [it, fresh] = country_pos.try_emplace(country, countries.size());
    if (fresh) countries.push_back(country);
    if (!cells.emplace(std::make_tuple(it->second, year, age), deaths).second)
      throw DataError(where + ": duplicate entry for " + country + " " + std::to_string(year) + " age " +
                      std::to_string(age));
    max_age = std::max(max_age, age);
  }
  if (cells.empty()) throw DataError("panel file " + path.string() + " has no data rows");
  if (max_age < 1) throw DataError("panel needs at least ages 0 and 1");

  std::vector<std::pair<long long, long long>> ranges(countries.size(), {LLONG_MAX, LLONG_MIN});
  std::vector<std::set<long long>> years(countries.size());
  for (const auto& [key, v] : cells) {
    const auto [j, y, a] = key;
    years[j].insert(y);
  }
  for (std::size_t j = 0; j < countries.size(); ++j) {
    const long long lo = *years[j].begin(), hi = *years[j].rbegin();
    if (static_cast<long long>(years[j].size()) != hi - lo + 1)
      throw DataError("years for " + countries[j] + " are not contiguous");
    ranges[j] = {lo, hi};
    if (ranges[j] != ranges[0])
      throw DataError("ragged years: " + countries[j] + " covers " + std::to_string(lo) + "-" + std::to_string(hi) +
                      " but " + countries[0] + " covers " + std::to_string(ranges[0].first) + "-" +
                      std::to_string(ranges[0].second));
  }
  const long long first = ranges[0].first;
  const int n_years = static_cast<int>(ranges[0].second - first + 1);
  const AgeGrid grid{static_cast<int>(max_age)};

  std::vector<std::string> gaps;
  std::size_t n_gaps = 0;
  std::vector<std::int64_t> deaths(countries.size() * n_years * grid.cells());
  std::vector<double> raw(grid.cells());
  std::size_t rounded_cells = 0;
  for (std::size_t j = 0; j < countries.size(); ++j)
    for (int t = 0; t < n_years; ++t) {
      bool fractional = false;
      for (long long a = 0; a <= max_age; ++a) {
        auto it = cells.find({j, first + t, a});
        if (it == cells.end()) {
          if (++n_gaps <= 20) gaps.push_back(countries[j] + " " + std::to_string(first + t) + " age " + std::to_string(a));
          raw[a] = 0.0;
          continue;
        }
        raw[a] = it->second;
        if (raw[a] != std::floor(raw[a])) fractional = true;
      }
      auto dst = deaths.begin() + static_cast<std::ptrdiff_t>((j * n_years + t) * grid.cells());
      if (fractional) {
        ++rounded_cells;
        const auto r = round_preserving_total(raw);
        std::copy(r.begin(), r.end(), dst);
      } else {
        for (std::size_t a = 0; a < raw.size(); ++a) dst[a] = static_cast<std::int64_t>(raw[a]);
      }
    }
  if (n_gaps > 0) {
    std::string msg = "panel has " + std::to_string(n_gaps) + " missing (country, year, age) cells:";
    for (const auto& g : gaps) msg += "\n  " + g;
    if (n_gaps > gaps.size()) msg += "\n  ...";
    throw DataError(msg);
  }
  if (rounded_cells > 0 && warnings)
    warnings->push_back("non-integer death counts in " + std::to_string(rounded_cells) +
                        " country-years were rounded half-to-even with totals preserved");
  return DeathPanel(countries, static_cast<int>(first), n_years, grid, std::move(deaths));
}

inline void save_panel(const DeathPanel& panel, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "country,year,age,deaths\n";
  for (std::size_t j = 0; j < panel.countries(); ++j)
    for (std::size_t t = 0; t < panel.years(); ++t) {
      const auto c = panel.cell(j, t);
      for (std::size_t x = 0; x < c.size(); ++x)
        out << panel.labels()[j] << ',' << panel.first_year() + static_cast<int>(t) << ',' << x << ',' << c[x] << '\n';
    }
  if (!out) throw DataError("failed writing " + path.string());
}

/// Known dynamics for simulated panels. theta0, beta and eta2 hold either K
/// values shared by all countries or p*K values (country-major).
struct SyntheticSpec {
  ModelVariant variant{};
  InnovationLaw law{};
  std::vector<std::string> countries{"A"};
  int first_year = 1960;
  int years = 20;
  int max_age = 110;
  std::int64_t deaths_per_year = 100000;
  std::vector<double> theta0, beta, eta2;
  std::uint64_t seed = 1;

  /// Plausible modern low-mortality dynamics for the base model: 1% infant
  /// deaths, an adult hump at 55 and a skewed old-age peak near 88 that
  /// drifts upward. Other variants get neutral values.
  static SyntheticSpec defaults(const ModelVariant& v = {}) {
    SyntheticSpec s;
    s.variant = v;
    for (Coord c : coordinates(v)) {
      double th = 0.0, b = 0.0, e = 0.0025;
      switch (c) {
        case Coord::logit_pi1: th = std::log(0.15 / 0.85); b = -0.01; break;
        case Coord::log_ratio_pi2: th = std::log(0.84 / 0.01); b = 0.02; break;
        case Coord::mu: th = 55.0; b = 0.2; e = 0.04; break;
        case Coord::log_sigma: th = std::log(15.0); b = 0.0; break;
        case Coord::xi: th = 88.0; b = 0.15; e = 0.04; break;
        case Coord::log_omega: th = std::log(10.0); b = 0.0; break;
        case Coord::alpha: th = -3.0; b = 0.0; e = 0.01; break;
        case Coord::log_gamma: th = std::log(0.3); break;
        case Coord::log_beta_a: th = std::log(3.0); break;
        case Coord::log_beta_b: th = std::log(4.0); break;
      }
      if (v.adult == AdultKind::absent && c == Coord::log_ratio_pi2) th = std::log(0.97 / 0.03);
      s.theta0.push_back(th);
      s.beta.push_back(b);
      s.eta2.push_back(e);
    }
    return s;
  }

  void validate() const {
    const std::size_t K = coordinates(variant).size(), p = countries.size();
    if (p == 0) throw ConfigError("synthetic spec needs at least one country");
    if (years < 1) throw ConfigError("synthetic spec 'years' must be positive");
    if (max_age < 1) throw ConfigError("synthetic spec 'max_age' must be >= 1");
    if (deaths_per_year < 1) throw ConfigError("synthetic spec 'deaths_per_year' (n) must be at least 1");
    auto check = [&](const std::vector<double>& v, const char* name) {
      if (v.size() != K && v.size() != p * K)
        throw ConfigError(std::string("synthetic spec '") + name + "' needs " + std::to_string(K) + " or " +
                          std::to_string(p * K) + " entries");
      for (double x : v)
        if (!std::isfinite(x)) throw ConfigError(std::string("synthetic spec '") + name + "' must be finite");
    };
    check(theta0, "theta0");
    check(beta, "beta");
    check(eta2, "eta2");
    for (double e : eta2)
      if (e < 0.0) throw ConfigError("synthetic spec 'eta2' must be nonnegative");
    law.validate();
  }
};

struct SyntheticData {
  DeathPanel panel;
  ModelState truth;  // true theta0, beta, eta2 and trajectories
};

/// Simulates trajectories from the random walk and draws each country-year's
/// deaths from Multinomial(n, discretized mixture).
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto coords = coordinates(spec.variant);
  const std::size_t K = coords.size(), p = spec.countries.size(), T = static_cast<std::size_t>(spec.years);
  const AgeGrid grid{spec.max_age};
  DrawLayout layout{spec.countries, spec.first_year, T, coords};
  ModelState truth(layout);
  Rng rng(derive_seed(spec.seed, {stream::synthetic}));
  auto pick = [&](const std::vector<double>& v, std::size_t j, std::size_t k) { return v.size() == K ? v[k] : v[j * K + k]; };
  std::vector<std::int64_t> deaths;
  deaths.reserve(p * T * grid.cells());
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = 0; k < K; ++k) {
      truth.theta0(j, k) = pick(spec.theta0, j, k);
      truth.beta(j, k) = pick(spec.beta, j, k);
      truth.eta2(j, k) = pick(spec.eta2, j, k);
      double x = truth.theta0(j, k);
      const double eta = std::sqrt(truth.eta2(j, k));
      for (std::size_t t = 0; t < T; ++t) {
        x += truth.beta(j, k) + (eta > 0.0 ? eta * spec.law.draw(rng) : 0.0);
        truth.theta(j, t, k) = x;
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      const auto probs = discretize(from_unconstrained(truth.cell(j, t), spec.variant), spec.variant, grid);
      const auto d = draw_multinomial(rng, spec.deaths_per_year, probs);
      deaths.insert(deaths.end(), d.begin(), d.end());
    }
  }
  return {DeathPanel(spec.countries, spec.first_year, spec.years, grid, std::move(deaths)), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Draw store: <dir>/draws.csv (chain, iteration, loglik, one column per
// parameter) and <dir>/manifest.json.

inline constexpr int draw_store_version = 1;

inline json layout_to_json(const DrawLayout& L) {
  json coords = json::array();
  for (Coord c : L.coords) coords.push_back(std::string(coord_name(c)));
  return {{"countries", L.countries}, {"first_year", L.first_year}, {"years", L.years}, {"coordinates", coords}};
}

/// Per-parameter ESS (summed over chains) and the names of degenerate columns.
inline json ess_summary(const PosteriorDraws& d) {
  const auto names = d.layout.column_names();
  const std::size_t n = d.layout.n_columns();
  json ess = json::object();
  json degenerate = json::array();
  for (std::size_t col = 0; col < n; ++col) {
    double total = 0.0;
    bool any_ok = false, all_const = true;
    for (const auto& c : d.chains) {
      if (c.rows() < 10) continue;
      std::vector<double> x(c.rows());
      for (std::size_t r = 0; r < c.rows(); ++r) x[r] = c.values[r * n + col];
      const auto e = effective_sample_size(x);
      total += e.ess;
      any_ok = true;
      all_const = all_const && e.degenerate;
    }
    if (!any_ok) continue;
    ess[names[col]] = total;
    if (all_const) degenerate.push_back(names[col]);
  }
  return {{"ess", ess}, {"degenerate", degenerate}};
}

inline void save_draws(const PosteriorDraws& d, const std::filesystem::path& dir, const json& extra = json::object()) {
  std::filesystem::create_directories(dir);
  const auto csv_path = dir / "draws.csv";
  {
    std::ofstream out(csv_path);
    if (!out) throw DataError("cannot write " + csv_path.string());
    out << "chain,iteration,loglik";
    for (const auto& name : d.layout.column_names()) out << ',' << name;
    out << '\n';
    const std::size_t n = d.layout.n_columns();
    for (std::size_t c = 0; c < d.chains.size(); ++c) {
      const auto& ch = d.chains[c];
      for (std::size_t r = 0; r < ch.rows(); ++r) {
        out << c << ',' << ch.iteration[r] << ',' << csv::format(ch.loglik[r]);
        for (std::size_t k = 0; k < n; ++k) out << ',' << csv::format(ch.values[r * n + k]);
        out << '\n';
      }
    }
    if (!out) throw DataError("failed writing " + csv_path.string());
  }
  json chains = json::array();
  for (const auto& ch : d.chains) chains.push_back({{"rows", ch.rows()}, {"acceptance", ch.acceptance}});
  json m = {{"format_version", draw_store_version},
            {"rows", d.total_rows()},
            {"columns", d.layout.n_columns()},
            {"layout", layout_to_json(d.layout)},
            {"model", to_json(ModelConfig{d.variant, d.law, d.flat_priors})},
            {"hyper", to_json(d.hyper)},
            {"sampler", to_json(d.config)},
            {"seed", d.config.seed},
            {"max_age", d.max_age},
            {"chains", chains}};
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  std::ofstream out(dir / "manifest.json");
  out << m.dump(2) << '\n';
  if (!out) throw DataError("failed writing manifest in " + dir.string());
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline PosteriorDraws load_draws(const std::filesystem::path& dir) {
  const json m = read_json_file(dir / "manifest.json");
  try {
    const int version = m.at("format_version").get<int>();
    if (version != draw_store_version)
      throw DataError("draw store format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(draw_store_version) + ")");
    PosteriorDraws d;
    const auto model = model_from_json(m.at("model"));
    d.variant = model.variant;
    d.law = model.law;
    d.flat_priors = model.flat_priors;
    d.layout.countries = m.at("layout").at("countries").get<std::vector<std::string>>();
    d.layout.first_year = m.at("layout").at("first_year").get<int>();
    d.layout.years = m.at("layout").at("years").get<std::size_t>();
    d.layout.coords = coordinates(d.variant);
    const auto names = m.at("layout").at("coordinates").get<std::vector<std::string>>();
    if (names.size() != d.layout.coords.size()) throw DataError("manifest coordinates do not match the model variant");
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] != coord_name(d.layout.coords[k])) throw DataError("manifest coordinates do not match the model variant");
    d.hyper = hyper_from_json(m.at("hyper"), d.variant);
    d.config = sampler_from_json(m.at("sampler"), model);
    d.max_age = m.at("max_age").get<int>();
    const std::size_t n = d.layout.n_columns();
    if (m.at("columns").get<std::size_t>() != n) throw DataError("manifest column count does not match its layout");
    const auto& chains = m.at("chains");
    d.chains.resize(chains.size());
    for (std::size_t c = 0; c < chains.size(); ++c) {
      d.chains[c].acceptance = chains[c].at("acceptance").get<std::map<std::string, double>>();
      d.chains[c].iteration.reserve(chains[c].at("rows").get<std::size_t>());
    }
    const std::size_t expected_rows = m.at("rows").get<std::size_t>();

    const auto csv_path = dir / "draws.csv";
    std::ifstream in(csv_path);
    if (!in) throw DataError("cannot open " + csv_path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("draw store " + csv_path.string() + " is empty");
    if (csv::split(line).size() != n + 3) throw DataError("draw store header does not match the manifest");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = csv::split(line);
      if (f.size() != n + 3)
        throw DataError("draw store row " + std::to_string(rows + 1) + " has " + std::to_string(f.size()) +
                        " fields, expected " + std::to_string(n + 3) + " (truncated file?)");
      long long chain = 0, iter = 0;
      double ll = 0.0;
      if (!csv::parse_int(f[0], chain) || chain < 0 || static_cast<std::size_t>(chain) >= d.chains.size() ||
          !csv::parse_int(f[1], iter) || !csv::parse_double(f[2], ll))
        throw DataError("draw store row " + std::to_string(rows + 1) + " is malformed");
      auto& ch = d.chains[static_cast<std::size_t>(chain)];
      ch.iteration.push_back(iter);
      ch.loglik.push_back(ll);
      for (std::size_t k = 0; k < n; ++k) {
        double v = 0.0;
        if (!csv::parse_double(f[3 + k], v))
          throw DataError("draw store row " + std::to_string(rows + 1) + " has a malformed value");
        ch.values.push_back(v);
      }
      ++rows;
    }
    if (rows != expected_rows)
      throw DataError("draw store holds " + std::to_string(rows) + " rows but the manifest records " +
                      std::to_string(expected_rows) + " (truncated file?)");
    for (std::size_t c = 0; c < chains.size(); ++c)
      if (d.chains[c].rows() != chains[c].at("rows").get<std::size_t>())
        throw DataError("draw store chain " + std::to_string(c) + " row count does not match the manifest");
    return d;
  } catch (const json::exception& e) {
    throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("manifest in " + dir.string() + " holds an invalid configuration: " + e.what());
  }
}

}  // namespace dysm
