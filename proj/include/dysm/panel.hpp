#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dysm/errors.hpp"
#include "dysm/mortality_model.hpp"

namespace dysm {

/// Death counts D[x, j, t] over countries j, contiguous years t and ages x.
class DeathPanel {
 public:
  DeathPanel() = default;

  /// deaths is laid out [country][year][age].
  DeathPanel(std::vector<std::string> countries, int first_year, int years, AgeGrid grid,
             std::vector<std::int64_t> deaths)
      : countries_(std::move(countries)), first_year_(first_year), years_(years), grid_(grid),
        deaths_(std::move(deaths)) {
    if (countries_.empty()) throw DataError("panel has no countries");
    if (years_ < 1) throw DataError("panel has no years");
    if (grid_.max_age < 1) throw DataError("panel age grid must have max_age >= 1");
    if (deaths_.size() != countries_.size() * static_cast<std::size_t>(years_) * grid_.cells())
      throw DataError("panel death array has the wrong size");
    totals_.assign(countries_.size() * static_cast<std::size_t>(years_), 0);
    for (std::size_t j = 0; j < countries_.size(); ++j)
      for (int t = 0; t < years_; ++t) {
        std::int64_t n = 0;
        for (auto d : cell(j, t)) {
          if (d < 0) throw DataError("negative death count for " + countries_[j] + " " + std::to_string(first_year_ + t));
          n += d;
        }
        totals_[j * years_ + t] = n;
      }
  }

  std::size_t countries() const { return countries_.size(); }
  const std::vector<std::string>& labels() const { return countries_; }
  int first_year() const { return first_year_; }
  int last_year() const { return first_year_ + years_ - 1; }
  std::size_t years() const { return static_cast<std::size_t>(years_); }
  const AgeGrid& grid() const { return grid_; }

  /// Counts for country j in year index t (0-based).
  std::span<const std::int64_t> cell(std::size_t j, std::size_t t) const {
    return {deaths_.data() + (j * years_ + t) * grid_.cells(), grid_.cells()};
  }
  void set_cell(std::size_t j, std::size_t t, std::span<const std::int64_t> counts) {
    detail::require(counts.size() == grid_.cells(), "replacement cell has the wrong number of ages");
    std::int64_t n = 0;
    for (std::size_t x = 0; x < counts.size(); ++x) {
      if (counts[x] < 0) throw DataError("negative death count");
      deaths_[(j * years_ + t) * grid_.cells() + x] = counts[x];
      n += counts[x];
    }
    totals_[j * years_ + t] = n;
  }

  std::int64_t total(std::size_t j, std::size_t t) const { return totals_[j * years_ + t]; }
  const std::vector<std::int64_t>& raw() const { return deaths_; }

  /// Empirical age-at-death frequencies D_x / n (all zero when n = 0).
  std::vector<double> frequencies(std::size_t j, std::size_t t) const {
    std::vector<double> out(grid_.cells(), 0.0);
    const auto n = total(j, t);
    if (n == 0) return out;
    auto c = cell(j, t);
    for (std::size_t x = 0; x < c.size(); ++x) out[x] = static_cast<double>(c[x]) / static_cast<double>(n);
    return out;
  }

  /// Sub-panel for years [first, last].
  DeathPanel slice_years(int first, int last) const {
    if (first < first_year_ || last > last_year() || first > last)
      throw DataError("year range " + std::to_string(first) + "-" + std::to_string(last) + " is outside the panel");
    const int n_years = last - first + 1;
    std::vector<std::int64_t> out;
    out.reserve(countries_.size() * n_years * grid_.cells());
    for (std::size_t j = 0; j < countries_.size(); ++j)
      for (int y = first; y <= last; ++y) {
        auto c = cell(j, static_cast<std::size_t>(y - first_year_));
        out.insert(out.end(), c.begin(), c.end());
      }
    return DeathPanel(countries_, first, n_years, grid_, std::move(out));
  }

  bool operator==(const DeathPanel& o) const {
    return countries_ == o.countries_ && first_year_ == o.first_year_ && years_ == o.years_ &&
           grid_.max_age == o.grid_.max_age && deaths_ == o.deaths_;
  }

 private:
  std::vector<std::string> countries_;
  int first_year_ = 0;
  int years_ = 0;
  AgeGrid grid_{};
  std::vector<std::int64_t> deaths_;
  std::vector<std::int64_t> totals_;
};

}  // namespace dysm
