// Copyright 2026 The Epihawkes Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef EPIHAWKES_STATS_HPP_
#define EPIHAWKES_STATS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace epihawkes {

// Pairwise (cascade) summation. All weight reductions in the filter go
// through this so that results do not depend on how work was split across
// threads.
inline double pairwise_sum(std::span<const double> x) {
  if (x.size() <= 8) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  }
  const std::size_t half = x.size() / 2;
  return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

inline double weighted_mean(std::span<const double> values,
                            std::span<const double> weights) {
  if (values.size() != weights.size()) {
    throw std::invalid_argument("weighted_mean: size mismatch");
  }
  std::vector<double> prod(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) prod[i] = values[i] * weights[i];
  return pairwise_sum(prod);
}

// Population-style weighted variance with normalized weights.
inline double weighted_variance(std::span<const double> values,
                                std::span<const double> weights) {
  const double mean = weighted_mean(values, weights);
  std::vector<double> prod(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - mean;
    prod[i] = weights[i] * d * d;
  }
  return std::max(0.0, pairwise_sum(prod));
}

// Left-continuous weighted quantile: smallest value whose cumulative weight
// reaches q * total. Ties broken by original index, so the result is
// deterministic.
inline double weighted_quantile(std::span<const double> values,
                                std::span<const double> weights, double q) {
  if (values.empty() || values.size() != weights.size()) {
    throw std::invalid_argument("weighted_quantile: bad inputs");
  }
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("weighted_quantile: q outside [0,1]");
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  double total = 0.0;
  for (double w : weights) total += w;
  if (total <= 0.0) throw std::invalid_argument("weighted_quantile: zero total weight");
  const double target = q * total;
  double cum = 0.0;
  for (std::size_t i : idx) {
    cum += weights[i];
    if (cum >= target) return values[i];
  }
  return values[idx.back()];
}

// Normalizes log weights in place via max subtraction. Returns the maximum
// finite log weight, or -inf when every entry is -inf (the caller decides
// whether that is an error).
inline double normalize_log_weights(std::span<const double> log_w,
                                    std::span<double> out) {
  if (log_w.size() != out.size()) throw std::invalid_argument("normalize_log_weights: size mismatch");
  double max_log = -std::numeric_limits<double>::infinity();
  for (double lw : log_w) max_log = std::max(max_log, lw);
  if (!std::isfinite(max_log)) {
    std::fill(out.begin(), out.end(), 0.0);
    return max_log;
  }
  std::vector<double> tmp(log_w.size());
  for (std::size_t i = 0; i < log_w.size(); ++i) tmp[i] = std::exp(log_w[i] - max_log);
  const double total = pairwise_sum(tmp);
  for (std::size_t i = 0; i < log_w.size(); ++i) out[i] = tmp[i] / total;
  return max_log;
}

}  // namespace epihawkes

#endif  // EPIHAWKES_STATS_HPP_
