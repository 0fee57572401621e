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

#ifndef EPIHAWKES_OBS_HPP_
#define EPIHAWKES_OBS_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "epihawkes/core.hpp"

namespace epihawkes {

// Reported case counts per subinterval per age band, row-major by interval.
struct ObservedSeries {
  int k = 0;
  int n_ages = 0;
  std::vector<std::int64_t> counts;

  ObservedSeries() = default;
  ObservedSeries(int intervals, int ages)
      : k(intervals), n_ages(ages),
        counts(static_cast<std::size_t>(intervals) * ages, 0) {}

  std::int64_t& at(int n, int a) { return counts[static_cast<std::size_t>(n - 1) * n_ages + a]; }
  std::int64_t at(int n, int a) const { return counts[static_cast<std::size_t>(n - 1) * n_ages + a]; }

  std::span<const std::int64_t> row(int n) const {
    return std::span<const std::int64_t>(counts).subspan(static_cast<std::size_t>(n - 1) * n_ages,
                                                         static_cast<std::size_t>(n_ages));
  }

  void validate() const {
    if (k < 1 || n_ages < 1 || counts.size() != static_cast<std::size_t>(k) * n_ages) {
      throw std::invalid_argument("ObservedSeries: bad dimensions");
    }
    for (std::int64_t y : counts) {
      if (y < 0) throw std::invalid_argument("ObservedSeries: counts must be >= 0");
    }
  }
};

struct ObsMeans {
  int k = 0;
  int n_ages = 0;
  std::vector<double> mu;

  ObsMeans() = default;
  ObsMeans(int intervals, int ages)
      : k(intervals), n_ages(ages), mu(static_cast<std::size_t>(intervals) * ages, 0.0) {}

  double& at(int n, int a) { return mu[static_cast<std::size_t>(n - 1) * n_ages + a]; }
  double at(int n, int a) const { return mu[static_cast<std::size_t>(n - 1) * n_ages + a]; }
};

// Negative binomial log pmf with mean mu and dispersion v under r = 1/v,
// variance mu + v*mu^2. In this parameterization pmf(0) = (1 + v*mu)^(-1/v)
// and v -> 0 recovers the Poisson limit.
inline double nb_log_pmf(std::int64_t y, double mu, double v) {
  if (y < 0) throw std::invalid_argument("nb_log_pmf: y must be >= 0");
  if (!(v > 0.0)) throw std::invalid_argument("nb_log_pmf: v must be > 0");
  if (mu < 0.0) throw std::invalid_argument("nb_log_pmf: mu must be >= 0");
  if (mu == 0.0) {
    return y == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  const double r = 1.0 / v;
  const double t = mu * v;  // mu / r
  const double yd = static_cast<double>(y);
  return std::lgamma(yd + r) - std::lgamma(r) - std::lgamma(yd + 1.0) -
         r * std::log1p(t) + yd * (std::log(t) - std::log1p(t));
}

// Expected reported cases of age `a` in subinterval n: beta times the
// reporting-delay mass each earlier infection places inside the subinterval.
// The caller supplies the event sets to include (seeds count as latent
// infections with known times).
inline double expected_observed(const EpidemicConfig& cfg, const GammaKernel& report,
                                std::span<const std::span<const MarkedEvent>> event_sets,
                                int n, int a) {
  const double t_lo = cfg.grid.boundary(n - 1);
  const double t_hi = cfg.grid.boundary(n);
  double total = 0.0;
  for (const auto& events : event_sets) {
    for (const auto& e : events) {
      if (e.age != a || e.time >= t_hi) continue;
      total += report.interval_mass(std::max(e.time, t_lo) - e.time, t_hi - e.time);
    }
  }
  return cfg.beta * total;
}

inline double expected_observed(const EpidemicConfig& cfg,
                                std::span<const MarkedEvent> events, int n, int a) {
  const GammaKernel report(cfg.obs_kernel);
  const std::span<const MarkedEvent> sets[] = {events};
  return expected_observed(cfg, report, sets, n, a);
}

// Per-age NB log likelihood of one subinterval's counts, summed in log space.
inline double interval_log_likelihood(std::span<const std::int64_t> y,
                                      std::span<const double> mu, double v) {
  if (y.size() != mu.size()) throw std::invalid_argument("interval_log_likelihood: size mismatch");
  double total = 0.0;
  for (std::size_t a = 0; a < y.size(); ++a) {
    const double term = nb_log_pmf(y[a], mu[a], v);
    if (std::isinf(term)) return -std::numeric_limits<double>::infinity();
    total += term;
  }
  return total;
}

inline double interval_log_likelihood(const EpidemicConfig& cfg,
                                      std::span<const std::int64_t> y,
                                      std::span<const std::span<const MarkedEvent>> event_sets,
                                      int n, double v) {
  const GammaKernel report(cfg.obs_kernel);
  std::vector<double> mu(static_cast<std::size_t>(cfg.n_ages()));
  for (int a = 0; a < cfg.n_ages(); ++a) {
    mu[static_cast<std::size_t>(a)] = expected_observed(cfg, report, event_sets, n, a);
  }
  return interval_log_likelihood(y, mu, v);
}

}  // namespace epihawkes

#endif  // EPIHAWKES_OBS_HPP_
