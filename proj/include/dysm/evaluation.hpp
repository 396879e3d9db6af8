#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "dysm/data_io.hpp"
#include "dysm/errors.hpp"
#include "dysm/forecast.hpp"

namespace dysm {

struct WindowSpec {
  int fit_length = 20;
  int horizon = 10;
  int step = 1;
  int first_year = 1960;
  int last_year = 2016;

  void validate() const {
    if (fit_length < 1) throw ConfigError("window fit_length must be positive");
    if (horizon < 1) throw ConfigError("window horizon must be positive");
    if (step < 1) throw ConfigError("window step must be positive");
    if (last_year < first_year) throw ConfigError("window range is empty");
    if (fit_length + horizon > last_year - first_year + 1)
      throw ConfigError("fit_length + horizon exceeds the window range");
  }
};

struct Window {
  int fit_first, fit_last;
  int test_first, test_last;
  bool operator==(const Window&) const = default;
};

inline std::vector<Window> rolling_windows(const WindowSpec& spec) {
  spec.validate();
  std::vector<Window> out;
  for (int start = spec.first_year; start + spec.fit_length + spec.horizon - 1 <= spec.last_year; start += spec.step)
    out.push_back({start, start + spec.fit_length - 1, start + spec.fit_length, start + spec.fit_length + spec.horizon - 1});
  if (out.empty()) throw ConfigError("window specification yields no windows");
  return out;
}

enum class Metric { mae, mse };

inline std::string_view metric_name(Metric m) { return m == Metric::mae ? "mae" : "mse"; }

/// Mean absolute or squared difference over every (age, year) entry.
inline double score(std::span<const double> predicted, std::span<const double> observed, Metric metric) {
  if (predicted.size() != observed.size())
    throw std::invalid_argument("score: predicted has " + std::to_string(predicted.size()) + " entries, observed " +
                                std::to_string(observed.size()));
  if (predicted.empty()) throw std::invalid_argument("score: nothing to compare");
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - observed[i];
    s += metric == Metric::mae ? std::abs(d) : d * d;
  }
  return s / static_cast<double>(predicted.size());
}

/// Identifies one scored unit: a country within a rolling window (by the
/// window's first fitted year) for one population subgroup.
struct ScoreKey {
  std::string country;
  int window = 0;
  std::string sex = "total";
  auto operator<=>(const ScoreKey&) const = default;
};

inline std::string describe(const ScoreKey& k) {
  return k.country + "/" + std::to_string(k.window) + "/" + k.sex;
}

struct RelativeSummary {
  std::string method;
  double median, q1, q3;
  std::size_t n;
};

/// Distribution of competitor/self error ratios over the shared keys, per
/// method, summarized by median and quartiles (midpoint rule). Equal errors
/// give a ratio of exactly 1.
inline std::vector<RelativeSummary> relative_report(const std::map<ScoreKey, double>& self,
                                                    const std::map<std::string, std::map<ScoreKey, double>>& competitors) {
  std::vector<RelativeSummary> out;
  for (const auto& [method, scores] : competitors) {
    std::vector<std::string> missing;
    for (const auto& [k, v] : self)
      if (!scores.count(k)) missing.push_back(describe(k));
    for (const auto& [k, v] : scores)
      if (!self.count(k)) missing.push_back(describe(k) + " (no self score)");
    if (!missing.empty()) {
      std::string msg = "method " + method + " is missing keys:";
      for (const auto& m : missing) msg += " " + m;
      throw DataError(msg);
    }
    std::vector<double> ratios;
    for (const auto& [k, s] : self) {
      const double c = scores.at(k);
      ratios.push_back(c == s ? 1.0 : c / s);
    }
    const double probs[] = {0.5, 0.25, 0.75};
    const auto q = summarize(ratios, probs);
    out.push_back({method, q[0], q[1], q[2], ratios.size()});
  }
  return out;
}

struct HarmonicMeanResult {
  double log_ml;
  double jackknife_se;  // NaN for a single draw
};

/// log of the harmonic mean of likelihoods: log B - logsumexp(-l_b).
inline double harmonic_mean_logml(std::span<const double> loglik) {
  if (loglik.empty()) throw std::invalid_argument("harmonic mean estimator needs at least one draw");
  double lo = std::numeric_limits<double>::infinity();
  for (double l : loglik) {
    if (!std::isfinite(l)) throw NumericalError("harmonic mean estimator is undefined for non-finite log-likelihoods");
    lo = std::min(lo, l);
  }
  if (loglik.size() == 1) return loglik[0];
  // Summing in sorted order makes the result independent of draw order.
  std::vector<double> sorted(loglik.begin(), loglik.end());
  std::sort(sorted.begin(), sorted.end());
  double s = 0.0;
  for (double l : sorted) s += std::exp(lo - l);
  return lo - std::log(s / static_cast<double>(sorted.size()));
}

/// Estimate plus its delete-one jackknife standard error, computed from the
/// same shifted sums in O(B).
inline HarmonicMeanResult harmonic_mean_with_se(std::span<const double> loglik) {
  const double est = harmonic_mean_logml(loglik);
  const std::size_t B = loglik.size();
  if (B == 1) return {est, std::numeric_limits<double>::quiet_NaN()};
  const double lo = *std::min_element(loglik.begin(), loglik.end());
  std::vector<double> w(B);
  double s = 0.0;
  for (std::size_t b = 0; b < B; ++b) s += (w[b] = std::exp(lo - loglik[b]));
  std::vector<double> loo(B);
  double mean = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double rest = std::max(s - w[b], std::numeric_limits<double>::min());
    loo[b] = std::log(static_cast<double>(B - 1)) + lo - std::log(rest);
    mean += loo[b];
  }
  mean /= static_cast<double>(B);
  double ss = 0.0;
  for (double v : loo) ss += (v - mean) * (v - mean);
  return {est, std::sqrt(static_cast<double>(B - 1) / static_cast<double>(B) * ss)};
}

/// Competitor predictions keyed by (method, country, window, year); window is
/// -1 when the file carries no window column.
struct ExternalForecast {
  std::map<std::tuple<std::string, std::string, int, int>, std::vector<double>> series;
  int max_age = 0;

  std::set<std::string> methods() const {
    std::set<std::string> out;
    for (const auto& [k, v] : series) out.insert(std::get<0>(k));
    return out;
  }

  /// Prediction for a window, falling back to window-free rows.
  const std::vector<double>* find(const std::string& method, const std::string& country, int window, int year) const {
    auto it = series.find({method, country, window, year});
    if (it == series.end()) it = series.find({method, country, -1, year});
    return it == series.end() ? nullptr : &it->second;
  }
};

/// Reads method, country, year, age, value (optional window) rows. Each
/// (method, country, window, year) must cover ages 0..max and sum to one
/// within 1e-6 (renormalized with a warning); years per series must be
/// contiguous.
inline ExternalForecast ingest_external_forecast(const std::filesystem::path& path,
                                                 std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open forecast file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("forecast file " + path.string() + " is empty");
  const auto idx = csv::header_index(line);
  for (const char* col : {"method", "country", "year", "age", "value"})
    if (!idx.count(col)) throw DataError(std::string("forecast file lacks column '") + col + "'");
  const bool has_window = idx.count("window") > 0;
  const std::size_t im = idx.at("method"), ic = idx.at("country"), iy = idx.at("year"), ia = idx.at("age"),
                    iv = idx.at("value"), iw = has_window ? idx.at("window") : 0;

  std::map<std::tuple<std::string, std::string, int, int>, std::map<int, double>> raw;
  int max_age = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    const std::string where = path.filename().string() + ":" + std::to_string(line_no);
    if (f.size() < idx.size()) throw DataError(where + ": too few fields");
    long long year = 0, age = 0, window = -1;
    double value = 0.0;
    std::string_view age_s = f[ia];
    if (!age_s.empty() && age_s.back() == '+') age_s.remove_suffix(1);
    if (!csv::parse_int(f[iy], year) || !csv::parse_int(age_s, age) || age < 0 || !csv::parse_double(f[iv], value) ||
        !std::isfinite(value) || value < 0.0 || (has_window && !csv::parse_int(f[iw], window)))
      throw DataError(where + ": malformed row");
    auto& series = raw[{std::string(f[im]), std::string(f[ic]), static_cast<int>(window), static_cast<int>(year)}];
    if (!series.emplace(static_cast<int>(age), value).second) throw DataError(where + ": duplicate entry");
    max_age = std::max(max_age, static_cast<int>(age));
  }
  if (raw.empty()) throw DataError("forecast file " + path.string() + " has no rows");

  ExternalForecast out;
  out.max_age = max_age;
  std::map<std::tuple<std::string, std::string, int>, std::set<int>> years;
  std::size_t renormalized = 0;
  for (auto& [key, ages] : raw) {
    const auto& [method, country, window, year] = key;
    const std::string label = method + " " + country + (window >= 0 ? " window " + std::to_string(window) : "") + " " +
                              std::to_string(year);
    std::vector<double> v(static_cast<std::size_t>(max_age) + 1);
    for (int a = 0; a <= max_age; ++a) {
      auto it = ages.find(a);
      if (it == ages.end()) throw DataError("gap in forecast file: " + label + " lacks age " + std::to_string(a));
      v[static_cast<std::size_t>(a)] = it->second;
    }
    double s = 0.0;
    for (double x : v) s += x;
    if (std::abs(s - 1.0) > 1e-6)
      throw DataError("forecast for " + label + " sums to " + csv::format(s) + ", not 1 within 1e-6");
    if (std::abs(s - 1.0) > 1e-12) {  // leave round-off in exported simplices alone
      for (double& x : v) x /= s;
      ++renormalized;
    }
    years[{method, country, window}].insert(year);
    out.series.emplace(key, std::move(v));
  }
  for (const auto& [key, ys] : years) {
    const int lo = *ys.begin(), hi = *ys.rbegin();
    for (int y = lo; y <= hi; ++y)
      if (!ys.count(y))
        throw DataError("gap in forecast file: " + std::get<0>(key) + " " + std::get<1>(key) + " lacks year " +
                        std::to_string(y));
  }
  if (renormalized > 0 && warnings)
    warnings->push_back(std::to_string(renormalized) + " forecast distributions were renormalized to sum to 1");
  return out;
}

}  // namespace dysm
