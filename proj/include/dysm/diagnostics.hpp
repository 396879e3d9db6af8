#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace dysm {

struct EssResult {
  double ess = 0.0;
  bool degenerate = false;  // constant sequence
};

/// Effective sample size by Geyer's initial monotone sequence estimator,
/// capped at n.
inline EssResult effective_sample_size(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 10) throw std::invalid_argument("effective_sample_size needs at least 10 samples");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = x[i] - mean;

  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += c[i] * c[i + lag];
    return s / static_cast<double>(n);
  };
  const double gamma0 = autocov(0);
  if (!(gamma0 > 0.0)) return {0.0, true};

  double sigma2 = -gamma0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
    double pair = (m == 0 ? gamma0 : autocov(2 * m)) + autocov(2 * m + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    sigma2 += 2.0 * pair;
    prev_pair = pair;
  }
  const double ess = sigma2 > 0.0 ? static_cast<double>(n) * gamma0 / sigma2 : static_cast<double>(n);
  return {std::min(ess, static_cast<double>(n)), false};
}

}  // namespace dysm
