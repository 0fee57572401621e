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

#ifndef EPIHAWKES_DIAGNOSTICS_HPP_
#define EPIHAWKES_DIAGNOSTICS_HPP_

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "epihawkes/core.hpp"

namespace epihawkes {

struct ReproductionNumbers {
  ContactMatrix r_pair;          // R_{aa'}: secondary cases of group a' per infector of group a
  std::vector<double> r_age;     // R_a = sum over a'
  std::optional<double> r;       // infected-population-weighted average; empty if no infections
};

// Instantaneous reproduction numbers from the current weights and
// susceptible counts: R_{aa'} = (S_{a'}/N_{a'}) gamma_{a'} m_{a'a}.
inline ReproductionNumbers reproduction_numbers(std::span<const double> gammas,
                                                std::span<const std::int64_t> susceptibles,
                                                const EpidemicConfig& cfg,
                                                std::span<const double> infected_weights) {
  const int n = cfg.n_ages();
  if (gammas.size() != static_cast<std::size_t>(n) ||
      susceptibles.size() != static_cast<std::size_t>(n) ||
      infected_weights.size() != static_cast<std::size_t>(n)) {
    throw std::invalid_argument("reproduction_numbers: size mismatch");
  }
  ReproductionNumbers out;
  out.r_pair = ContactMatrix(n, std::vector<double>(static_cast<std::size_t>(n) * n, 0.0));
  out.r_age.assign(static_cast<std::size_t>(n), 0.0);
  for (int a = 0; a < n; ++a) {
    for (int ap = 0; ap < n; ++ap) {
      const double frac = static_cast<double>(susceptibles[static_cast<std::size_t>(ap)]) /
                          static_cast<double>(cfg.ages.populations[static_cast<std::size_t>(ap)]);
      const double r = frac * gammas[static_cast<std::size_t>(ap)] * cfg.contacts.at(ap, a);
      out.r_pair.at(a, ap) = r;
      out.r_age[static_cast<std::size_t>(a)] += r;
    }
  }
  double total = 0.0;
  for (double w : infected_weights) {
    if (w < 0.0) throw std::invalid_argument("reproduction_numbers: negative infected weight");
    total += w;
  }
  if (total > 0.0) {
    double r = 0.0;
    for (int a = 0; a < n; ++a) {
      r += infected_weights[static_cast<std::size_t>(a)] / total * out.r_age[static_cast<std::size_t>(a)];
    }
    out.r = r;
  }
  return out;
}

// Monte Carlo standard error of a posterior mean: the per-interval
// sqrt(var/N), averaged over intervals.
inline double mcse(std::span<const double> posterior_variances, int n_particles) {
  if (posterior_variances.empty()) throw std::invalid_argument("mcse: need at least one interval");
  if (n_particles < 1) throw std::invalid_argument("mcse: n_particles >= 1");
  double total = 0.0;
  for (double var : posterior_variances) {
    if (var < 0.0) throw std::invalid_argument("mcse: negative variance");
    total += std::sqrt(var / static_cast<double>(n_particles));
  }
  return total / static_cast<double>(posterior_variances.size());
}

// Proportional absolute error between a reference series and a candidate.
inline double pae(std::span<const double> reference, std::span<const double> candidate) {
  if (reference.empty() || reference.size() != candidate.size()) {
    throw std::invalid_argument("pae: series must be non-empty and equal length");
  }
  double abs_err = 0.0;
  double ref_total = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    abs_err += std::abs(reference[i] - candidate[i]);
    ref_total += reference[i];
  }
  if (!(ref_total > 0.0)) throw std::invalid_argument("pae: reference series sums to zero");
  return abs_err / ref_total;
}

// Latent intensity per age on an arbitrary time grid, evaluated from a fixed
// event log (seeds plus in-horizon events) with susceptibles replayed from
// the depletion implied by the log.
inline std::vector<std::vector<double>> intensity_curve(std::span<const MarkedEvent> log,
                                                        const std::vector<std::vector<double>>& gammas,
                                                        std::span<const std::int64_t> initial_susceptibles,
                                                        const EpidemicConfig& cfg,
                                                        std::span<const double> times) {
  const int n = cfg.n_ages();
  if (gammas.size() != static_cast<std::size_t>(cfg.k())) {
    throw std::invalid_argument("intensity_curve: gammas rows != k");
  }
  const GammaKernel gi(cfg.gi_kernel);
  const double cutoff = gi.tail_cutoff();
  std::vector<std::vector<double>> out(times.size(), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  std::vector<double> kernel_by_source(static_cast<std::size_t>(n));
  std::vector<std::int64_t> s_t(static_cast<std::size_t>(n));
  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    const double t = times[ti];
    const int m = interval_index(t, cfg.grid);
    std::fill(kernel_by_source.begin(), kernel_by_source.end(), 0.0);
    for (int a = 0; a < n; ++a) s_t[static_cast<std::size_t>(a)] = initial_susceptibles[static_cast<std::size_t>(a)];
    for (const auto& e : log) {
      if (!(e.time < t)) continue;
      if (e.time >= cfg.grid.t0()) --s_t[static_cast<std::size_t>(e.age)];
      if (t - e.time <= cutoff) {
        kernel_by_source[static_cast<std::size_t>(e.age)] += gi.density(t - e.time);
      }
    }
    for (int a = 0; a < n; ++a) {
      double excite = 0.0;
      for (int ai = 0; ai < n; ++ai) excite += kernel_by_source[static_cast<std::size_t>(ai)] * cfg.contacts.at(a, ai);
      const double frac = static_cast<double>(s_t[static_cast<std::size_t>(a)]) /
                          static_cast<double>(cfg.ages.populations[static_cast<std::size_t>(a)]);
      out[ti][static_cast<std::size_t>(a)] =
          frac * gammas[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(a)] * excite;
    }
  }
  return out;
}

}  // namespace epihawkes

#endif  // EPIHAWKES_DIAGNOSTICS_HPP_
