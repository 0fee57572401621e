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

#ifndef EPIHAWKES_SIM_HPP_
#define EPIHAWKES_SIM_HPP_

#include <algorithm>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "epihawkes/core.hpp"
#include "epihawkes/obs.hpp"
#include "epihawkes/rng.hpp"

namespace epihawkes {

// Latent infections drawn for one subinterval, plus caches that let the
// filter reuse shared samples without re-evaluating kernel CDFs:
//   mu_contrib[j][a]   reporting-delay mass (unscaled by beta) the events of
//                      age a place into subinterval interval + j, j = 0..eta
//   gi_mass_fwd[j][e]  generation-interval mass event e spawns with into
//                      subinterval interval + 1 + j, j = 0..eta-1
struct IntervalSample {
  int interval = 0;
  std::vector<MarkedEvent> events;
  std::vector<std::int64_t> counts_by_age;
  std::vector<std::vector<double>> mu_contrib;
  std::vector<std::vector<double>> gi_mass_fwd;
};

// What to precompute on a fresh sample. Lookahead samples are discarded
// after one likelihood evaluation, so they only need the own-interval
// reporting row; anything kept as history needs the full caches.
enum class SampleFill { kLookaheadOnly, kFull };

// Per-run tables shared by every particle: the seeds' generation-interval
// mass into each subinterval 1..k+1.
struct SimCache {
  std::vector<std::vector<double>> seed_gi_mass;  // [n-1][seed index]
};

inline SimCache build_sim_cache(const EpidemicConfig& cfg, const KernelPair& kernels,
                                const SeedHistory& seeds) {
  SimCache cache;
  const int rows = cfg.k() + 1;
  cache.seed_gi_mass.assign(static_cast<std::size_t>(rows),
                            std::vector<double>(seeds.events.size(), 0.0));
  const double cutoff = kernels.gi.tail_cutoff();
  for (std::size_t s = 0; s < seeds.events.size(); ++s) {
    const double t = seeds.events[s].time;
    double prev_cdf = kernels.gi.cdf(cfg.grid.boundary(0) - t);
    for (int n = 1; n <= rows; ++n) {
      const double hi = cfg.grid.boundary(n) - t;
      const double cdf_hi = kernels.gi.cdf(hi);
      if (cfg.grid.boundary(n - 1) - t <= cutoff) {
        cache.seed_gi_mass[static_cast<std::size_t>(n - 1)][s] = std::max(0.0, cdf_hi - prev_cdf);
      }
      prev_cdf = cdf_hi;
    }
  }
  return cache;
}

// Poisson rate of offspring a parent generates inside subinterval n: the
// contact-weighted susceptible fraction times the generation-interval mass
// remaining in the subinterval.
inline double offspring_rate(const MarkedEvent& parent, std::span<const double> gammas,
                             const SusceptibleLedger& ledger, const EpidemicConfig& cfg,
                             const GammaKernel& gi, int n) {
  const double t_lo = cfg.grid.boundary(n - 1);
  const double t_hi = cfg.grid.boundary(n);
  if (!(parent.time < t_hi)) throw std::invalid_argument("offspring_rate: parent not before T_n");
  double rate = 0.0;
  for (int a = 0; a < cfg.n_ages(); ++a) {
    const double frac = static_cast<double>(ledger.count(a)) /
                        static_cast<double>(cfg.ages.populations[static_cast<std::size_t>(a)]);
    rate += gammas[static_cast<std::size_t>(a)] * frac * cfg.contacts.at(a, parent.age);
  }
  const double lo = std::max(parent.time, t_lo) - parent.time;
  const double hi = t_hi - parent.time;
  return rate * gi.interval_mass(lo, hi);
}

inline double offspring_rate(const MarkedEvent& parent, std::span<const double> gammas,
                             const SusceptibleLedger& ledger, const EpidemicConfig& cfg, int n) {
  return offspring_rate(parent, gammas, ledger, cfg, GammaKernel(cfg.gi_kernel), n);
}

// Offspring age distribution given the parent's group: proportional to the
// susceptible fraction times the contact column of the parent. Returns false
// when every group is exhausted (caller emits no offspring).
inline bool sample_offspring_ages(int parent_age, const SusceptibleLedger& ledger,
                                  const EpidemicConfig& cfg, std::span<double> probs) {
  double total = 0.0;
  for (int a = 0; a < cfg.n_ages(); ++a) {
    const double frac = static_cast<double>(ledger.count(a)) /
                        static_cast<double>(cfg.ages.populations[static_cast<std::size_t>(a)]);
    probs[static_cast<std::size_t>(a)] = frac * cfg.contacts.at(a, parent_age);
    total += probs[static_cast<std::size_t>(a)];
  }
  if (!(total > 0.0)) return false;
  for (auto& p : probs) p /= total;
  return true;
}

namespace detail {

// Rows are consecutive CDF differences, so filling costs eta + 1 kernel CDF
// evaluations per event and kernel.
inline void fill_mu_contrib(IntervalSample& sample, const EpidemicConfig& cfg,
                            const GammaKernel& report) {
  const int n = sample.interval;
  sample.mu_contrib.assign(static_cast<std::size_t>(cfg.eta) + 1,
                           std::vector<double>(static_cast<std::size_t>(cfg.n_ages()), 0.0));
  for (const auto& e : sample.events) {
    double prev_cdf = 0.0;  // reporting delay is 0 at the infection itself
    for (int j = 0; j <= cfg.eta; ++j) {
      const double cdf_hi = report.cdf(cfg.grid.boundary(n + j) - e.time);
      sample.mu_contrib[static_cast<std::size_t>(j)][static_cast<std::size_t>(e.age)] +=
          std::max(0.0, cdf_hi - prev_cdf);
      prev_cdf = cdf_hi;
    }
  }
}

inline void fill_mu_contrib_row0(IntervalSample& sample, const EpidemicConfig& cfg,
                                 const GammaKernel& report) {
  const int n = sample.interval;
  sample.mu_contrib.assign(static_cast<std::size_t>(cfg.eta) + 1,
                           std::vector<double>(static_cast<std::size_t>(cfg.n_ages()), 0.0));
  for (const auto& e : sample.events) {
    sample.mu_contrib[0][static_cast<std::size_t>(e.age)] +=
        report.cdf(cfg.grid.boundary(n) - e.time);
  }
}

inline void fill_gi_mass_fwd(IntervalSample& sample, const EpidemicConfig& cfg,
                             const GammaKernel& gi) {
  const int n = sample.interval;
  const double cutoff = gi.tail_cutoff();
  sample.gi_mass_fwd.assign(static_cast<std::size_t>(cfg.eta),
                            std::vector<double>(sample.events.size(), 0.0));
  for (std::size_t e = 0; e < sample.events.size(); ++e) {
    const double t = sample.events[e].time;
    double prev_cdf = gi.cdf(cfg.grid.boundary(n) - t);
    for (int j = 0; j < cfg.eta; ++j) {
      const double cdf_hi = gi.cdf(cfg.grid.boundary(n + 1 + j) - t);
      // Zero past the tail cutoff, matching the uncached path exactly.
      if (cfg.grid.boundary(n + j) - t <= cutoff) {
        sample.gi_mass_fwd[static_cast<std::size_t>(j)][e] = std::max(0.0, cdf_hi - prev_cdf);
      }
      prev_cdf = cdf_hi;
    }
  }
}

}  // namespace detail

// Branching draw of the latent infections falling into subinterval n, given
// the seeds and the samples of the preceding eta subintervals. FIFO queue:
// sources spawn first, then each new event is processed in creation order
// and may spawn further offspring inside the subinterval. The ledger is
// decremented as each infection is generated and rates always read the
// current counts, so susceptibles can never go negative; offspring are
// discarded once every group is exhausted.
//
// `base_index` is the flat index of the first new event in the owning log
// (seeds, then prior intervals); parent references use that indexing.
inline IntervalSample simulate_interval(const EpidemicConfig& cfg, const KernelPair& kernels,
                                        const SeedHistory& seeds,
                                        std::span<const std::shared_ptr<const IntervalSample>> history,
                                        std::span<const double> gammas,
                                        SusceptibleLedger& ledger, int n, RngStream& rng,
                                        std::int64_t base_index,
                                        SampleFill fill = SampleFill::kFull,
                                        const SimCache* cache = nullptr) {
  const double t_lo = cfg.grid.boundary(n - 1);
  const double t_hi = cfg.grid.boundary(n);
  const double stale_cutoff = kernels.gi.tail_cutoff();

  IntervalSample sample;
  sample.interval = n;
  sample.counts_by_age.assign(static_cast<std::size_t>(cfg.n_ages()), 0);

  std::vector<double> probs(static_cast<std::size_t>(cfg.n_ages()));

  const auto spawn_from = [&](double t_i, int a_i, std::int64_t idx, double mass) {
    if (!(mass > 0.0)) return;
    double rate = 0.0;
    for (int a = 0; a < cfg.n_ages(); ++a) {
      const double frac = static_cast<double>(ledger.count(a)) /
                          static_cast<double>(cfg.ages.populations[static_cast<std::size_t>(a)]);
      rate += gammas[static_cast<std::size_t>(a)] * frac * cfg.contacts.at(a, a_i);
    }
    const double lambda = rate * mass;
    if (!(lambda > 0.0)) return;
    const double lo = std::max(t_i, t_lo) - t_i;
    const double hi = t_hi - t_i;
    std::int64_t n_offspring = std::min(rng.poisson(lambda), ledger.total());
    for (std::int64_t c = 0; c < n_offspring; ++c) {
      const double time = t_i + kernels.gi.sample_truncated(lo, hi, rng);
      if (!sample_offspring_ages(a_i, ledger, cfg, probs)) break;
      const int age = rng.categorical(probs);
      if (!ledger.deplete(age)) break;
      sample.events.push_back({time, static_cast<std::int32_t>(age), idx});
      sample.counts_by_age[static_cast<std::size_t>(age)]++;
    }
  };

  const auto live_mass = [&](double t_i) {
    if (t_lo - t_i > stale_cutoff) return 0.0;
    return kernels.gi.interval_mass(std::max(t_i, t_lo) - t_i, t_hi - t_i);
  };

  // Sources: seeds, then the last eta subintervals, in stored order.
  std::int64_t source_index = 0;
  for (std::size_t s = 0; s < seeds.events.size(); ++s) {
    const auto& e = seeds.events[s];
    const double mass = cache ? cache->seed_gi_mass[static_cast<std::size_t>(n - 1)][s]
                              : live_mass(e.time);
    spawn_from(e.time, e.age, source_index, mass);
    ++source_index;
  }
  const int first_hist = std::max(1, n - cfg.eta);
  for (const auto& hist : history) {
    if (hist->interval < first_hist || hist->interval >= n) {
      source_index += static_cast<std::int64_t>(hist->events.size());
      continue;
    }
    const int fwd = n - hist->interval - 1;
    const bool cached = fwd < static_cast<int>(hist->gi_mass_fwd.size());
    for (std::size_t e = 0; e < hist->events.size(); ++e) {
      const auto& ev = hist->events[e];
      const double mass = cached ? hist->gi_mass_fwd[static_cast<std::size_t>(fwd)][e]
                                 : live_mass(ev.time);
      spawn_from(ev.time, ev.age, source_index, mass);
      ++source_index;
    }
  }

  // New events, FIFO. The vector itself is the queue; push_back may
  // reallocate, so copy the parent fields out first.
  for (std::size_t qi = 0; qi < sample.events.size(); ++qi) {
    const double t_i = sample.events[qi].time;
    const int a_i = sample.events[qi].age;
    spawn_from(t_i, a_i, base_index + static_cast<std::int64_t>(qi),
               kernels.gi.interval_mass(0.0, t_hi - t_i));
  }

  if (fill == SampleFill::kFull) {
    detail::fill_mu_contrib(sample, cfg, kernels.report);
    detail::fill_gi_mass_fwd(sample, cfg, kernels.gi);
  } else {
    detail::fill_mu_contrib_row0(sample, cfg, kernels.report);
  }
  return sample;
}

struct SyntheticRun {
  std::vector<std::shared_ptr<const IntervalSample>> intervals;
  ObsMeans mu;
  ObservedSeries observed;
  std::vector<std::int64_t> final_susceptibles;
};

// Full synthetic generation: iterates the branching simulator over the grid
// and draws reported counts from the NB observation model with the exact
// expected-case sums over the whole latent history.
inline SyntheticRun generate_synthetic(const EpidemicConfig& cfg,
                                       const std::vector<std::vector<double>>& gammas_truth,
                                       const SeedHistory& seeds, double v, std::uint64_t seed) {
  cfg.validate();
  seeds.validate(cfg.grid.t0(), cfg.n_ages());
  if (gammas_truth.size() != static_cast<std::size_t>(cfg.k())) {
    throw std::invalid_argument("generate_synthetic: gammas_truth rows != k");
  }
  for (const auto& row : gammas_truth) {
    if (row.size() != static_cast<std::size_t>(cfg.n_ages())) {
      throw std::invalid_argument("generate_synthetic: gammas_truth row size mismatch");
    }
    for (double g : row) {
      if (!(g > 0.0)) throw std::invalid_argument("generate_synthetic: gammas must be > 0");
    }
  }
  if (!(v > 0.0)) throw std::invalid_argument("generate_synthetic: v must be > 0");

  const KernelPair kernels(cfg);
  const SimCache cache = build_sim_cache(cfg, kernels, seeds);
  SyntheticRun run;
  SusceptibleLedger ledger(cfg.initial_susceptibles);
  std::int64_t base = static_cast<std::int64_t>(seeds.events.size());
  for (int n = 1; n <= cfg.k(); ++n) {
    RngStream rng(derive_seed(seed, stream::kSynthSim, 0, static_cast<std::uint64_t>(n)));
    auto sample = std::make_shared<IntervalSample>(
        simulate_interval(cfg, kernels, seeds, run.intervals, gammas_truth[static_cast<std::size_t>(n - 1)],
                          ledger, n, rng, base, SampleFill::kFull, &cache));
    base += static_cast<std::int64_t>(sample->events.size());
    run.intervals.push_back(std::move(sample));
  }

  run.mu = ObsMeans(cfg.k(), cfg.n_ages());
  run.observed = ObservedSeries(cfg.k(), cfg.n_ages());
  for (int n = 1; n <= cfg.k(); ++n) {
    std::vector<std::span<const MarkedEvent>> sets;
    sets.push_back(seeds.events);
    for (int vi = 1; vi <= n; ++vi) sets.push_back(run.intervals[static_cast<std::size_t>(vi - 1)]->events);
    RngStream rng(derive_seed(seed, stream::kSynthObs, 0, static_cast<std::uint64_t>(n)));
    for (int a = 0; a < cfg.n_ages(); ++a) {
      const double mu = expected_observed(cfg, kernels.report, sets, n, a);
      run.mu.at(n, a) = mu;
      run.observed.at(n, a) = rng.negative_binomial(mu, v);
    }
  }
  run.final_susceptibles = ledger.counts();
  return run;
}

}  // namespace epihawkes

#endif  // EPIHAWKES_SIM_HPP_
