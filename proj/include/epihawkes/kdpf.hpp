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

#ifndef EPIHAWKES_KDPF_HPP_
#define EPIHAWKES_KDPF_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epihawkes/core.hpp"
#include "epihawkes/obs.hpp"
#include "epihawkes/parallel.hpp"
#include "epihawkes/rng.hpp"
#include "epihawkes/sim.hpp"
#include "epihawkes/stats.hpp"

namespace epihawkes {

class FilterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateInitializationError : public FilterError {
 public:
  explicit DegenerateInitializationError(double best_log_likelihood)
      : FilterError("particle initialization degenerate; best log-likelihood " +
                    std::to_string(best_log_likelihood)),
        best_log_likelihood(best_log_likelihood) {}
  double best_log_likelihood;
};

class ParticleCollapseError : public FilterError {
 public:
  ParticleCollapseError(int interval, double best_log_likelihood)
      : FilterError("particle collapse at interval " + std::to_string(interval) +
                    "; best log-likelihood " + std::to_string(best_log_likelihood)),
        interval(interval),
        best_log_likelihood(best_log_likelihood) {}
  int interval;
  double best_log_likelihood;
};

struct FilterConfig {
  int n_particles = 1000;
  // Liu-West discount; a = (3*delta - 1) / (2*delta) and h^2 = 1 - a^2.
  double shrinkage_discount = 0.99;
  std::optional<double> shrinkage_a_override;
  double ess_fraction = 0.8;
  int smoothing_lag = 4;
  std::uint64_t seed = 1;
  int n_threads = 0;  // 0 -> hardware concurrency
  bool rescue = false;
  int max_rescue_doublings = 3;
  // Daily intensity quantiles are computed from a posterior subsample of
  // this many particles (per-interval deterministic draw).
  int intensity_particles = 512;
  // Aggregate R weighting: latent incidence of the current subinterval
  // (default) or the active-infector prevalence over the eta lookback.
  bool r_weight_by_prevalence = false;

  double shrinkage_a() const {
    if (shrinkage_a_override) return *shrinkage_a_override;
    return (3.0 * shrinkage_discount - 1.0) / (2.0 * shrinkage_discount);
  }
  double bandwidth_h() const {
    const double a = shrinkage_a();
    return std::sqrt(std::max(0.0, 1.0 - a * a));
  }

  void validate() const {
    if (n_particles < 1) throw std::invalid_argument("FilterConfig: n_particles >= 1");
    const double a = shrinkage_a();
    if (!(a > 0.0 && a <= 1.0)) throw std::invalid_argument("FilterConfig: shrinkage a outside (0,1]");
    if (!(ess_fraction > 0.0 && ess_fraction <= 1.0)) {
      throw std::invalid_argument("FilterConfig: ess_fraction outside (0,1]");
    }
    if (smoothing_lag < 1) throw std::invalid_argument("FilterConfig: smoothing_lag >= 1");
    if (intensity_particles < 1) throw std::invalid_argument("FilterConfig: intensity_particles >= 1");
  }
};

struct Particle {
  std::vector<std::vector<double>> gammas;  // per interval, each n_ages long
  std::vector<std::shared_ptr<const IntervalSample>> latent;
  std::vector<std::int64_t> susceptibles;  // counts after the last interval
  double log_d = 0.0;
  double log_v = 0.0;
  double w = 0.0;  // normalized importance weight
  double g = 0.0;  // normalized auxiliary weight
  std::int64_t next_event_index = 0;  // seeds + events so far

  double d() const { return std::exp(log_d); }
  double v() const { return std::exp(log_v); }
};

// Geometric random walk step: multiplies by mean-one Gamma(d, d) noise, so
// E[new] = prev and SD[new] = prev / sqrt(d).
inline double rw_propagate(double gamma_prev, double d, RngStream& rng) {
  if (gamma_prev < 0.0) throw std::invalid_argument("rw_propagate: gamma_prev must be >= 0");
  if (!(d > 0.0)) throw std::invalid_argument("rw_propagate: d must be > 0");
  if (gamma_prev == 0.0) return 0.0;
  return gamma_prev * rng.gamma_rate(d, d);
}

// Liu-West shrunk locations m_j = a * x_j + (1 - a) * weighted mean.
inline std::vector<double> shrink_means(std::span<const double> values,
                                        std::span<const double> weights, double a) {
  const double mean = weighted_mean(values, weights);
  std::vector<double> out(values.size());
  for (std::size_t j = 0; j < values.size(); ++j) out[j] = a * values[j] + (1.0 - a) * mean;
  return out;
}

inline double ess(std::span<const double> weights) {
  std::vector<double> sq(weights.size());
  for (std::size_t j = 0; j < weights.size(); ++j) sq[j] = weights[j] * weights[j];
  const double denom = pairwise_sum(sq);
  if (!(denom > 0.0)) throw std::invalid_argument("ess: weights are all zero");
  return 1.0 / denom;
}

// n_draws iid categorical indices proportional to `weights`.
inline std::vector<int> resample_multinomial(std::span<const double> weights, int n_draws,
                                             RngStream& rng) {
  std::vector<double> cum(weights.size());
  double total = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    total += weights[j];
    cum[j] = total;
  }
  if (!(total > 0.0)) throw std::invalid_argument("resample_multinomial: zero total weight");
  std::vector<int> idx(static_cast<std::size_t>(n_draws));
  for (int i = 0; i < n_draws; ++i) {
    const double u = rng.uniform() * total;
    idx[static_cast<std::size_t>(i)] =
        static_cast<int>(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
  }
  return idx;
}

// Auxiliary weight update g ~ g_prev * w_prev * exp(lookahead log-lik),
// normalized. Throws on total collapse.
inline std::vector<double> lookahead_weight_update(std::span<const double> g_prev,
                                                   std::span<const double> w_prev,
                                                   std::span<const double> lookahead_loglik,
                                                   int interval) {
  std::vector<double> log_g(g_prev.size());
  for (std::size_t j = 0; j < g_prev.size(); ++j) {
    log_g[j] = std::log(g_prev[j]) + std::log(w_prev[j]) + lookahead_loglik[j];
  }
  std::vector<double> out(g_prev.size());
  double best = -std::numeric_limits<double>::infinity();
  for (double ll : lookahead_loglik) best = std::max(best, ll);
  if (!std::isfinite(normalize_log_weights(log_g, out))) {
    throw ParticleCollapseError(interval, best);
  }
  return out;
}

// Importance weight update w ~ exp(new log-lik - ancestor lookahead log-lik),
// normalized. A dead lookahead ancestor keeps its offspring dead.
inline std::vector<double> propagate_weight_update(std::span<const double> new_loglik,
                                                   std::span<const double> lookahead_loglik,
                                                   std::span<const int> ancestors, int interval,
                                                   std::vector<double>* log_w_out = nullptr) {
  std::vector<double> log_w(new_loglik.size());
  for (std::size_t j = 0; j < new_loglik.size(); ++j) {
    const double denom = lookahead_loglik[static_cast<std::size_t>(ancestors[j])];
    log_w[j] = std::isinf(denom) ? -std::numeric_limits<double>::infinity()
                                 : new_loglik[j] - denom;
  }
  std::vector<double> out(new_loglik.size());
  double best = -std::numeric_limits<double>::infinity();
  for (double ll : new_loglik) best = std::max(best, ll);
  if (!std::isfinite(normalize_log_weights(log_w, out))) {
    throw ParticleCollapseError(interval, best);
  }
  if (log_w_out) *log_w_out = std::move(log_w);
  return out;
}

struct QuantileTriple {
  double lo = 0.0;      // 0.5%
  double median = 0.0;  // 50%
  double hi = 0.0;      // 99.5%
};

struct PosteriorSummary {
  std::vector<std::string> age_labels;
  int k = 0;
  int n_ages = 0;
  int n_particles = 0;
  std::uint64_t seed = 0;

  // Indexed [interval][age].
  std::vector<std::vector<QuantileTriple>> gamma;
  std::vector<std::vector<double>> gamma_mean;
  std::vector<std::vector<double>> gamma_var;
  std::vector<std::vector<QuantileTriple>> latent_weekly;
  std::vector<std::vector<double>> latent_weekly_var;
  std::vector<QuantileTriple> latent_weekly_total;

  // Daily sub-grid (unit steps from T_0).
  std::vector<double> day_times;
  std::vector<int> day_interval;
  std::vector<std::vector<QuantileTriple>> latent_daily;  // [day][age]
  std::vector<QuantileTriple> latent_daily_total;
  std::vector<std::vector<QuantileTriple>> intensity_daily;  // [day][age]
  std::vector<QuantileTriple> intensity_daily_total;

  std::vector<std::vector<QuantileTriple>> r_age;  // [interval][age]
  std::vector<std::optional<QuantileTriple>> r;    // aggregate R(t); missing if no infections

  QuantileTriple d_ci;
  QuantileTriple v_ci;
};

struct RescueEvent {
  int interval = 0;
  int n_particles_after = 0;
};

struct FilterResult {
  PosteriorSummary summary;
  std::vector<Particle> particles;
  std::vector<double> posterior_weights;  // final-state resampling weights
  std::vector<std::vector<int>> ancestry;  // ancestor indices per state 2..k
  std::vector<RescueEvent> rescues;
};

class FilterObserver {
 public:
  virtual ~FilterObserver() = default;
  virtual void on_state(int n, const std::vector<Particle>& particles,
                        const std::vector<double>& posterior_weights) = 0;
};

namespace detail {

// Reporting-delay mass (unscaled by beta) the seeds place into each
// subinterval 1..k+1, by age.
inline std::vector<std::vector<double>> seed_mu_contrib(const EpidemicConfig& cfg,
                                                        const GammaKernel& report,
                                                        const SeedHistory& seeds) {
  std::vector<std::vector<double>> table(
      static_cast<std::size_t>(cfg.k()) + 1,
      std::vector<double>(static_cast<std::size_t>(cfg.n_ages()), 0.0));
  for (const auto& e : seeds.events) {
    for (int n = 1; n <= cfg.k() + 1; ++n) {
      const double lo = std::max(e.time, cfg.grid.boundary(n - 1)) - e.time;
      const double hi = cfg.grid.boundary(n) - e.time;
      table[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(e.age)] +=
          report.interval_mass(lo, hi);
    }
  }
  return table;
}

// Expected reported cases for subinterval n from the eta-window of latent
// samples plus the seed table, via the cached per-sample contributions.
inline std::vector<double> windowed_mu(const EpidemicConfig& cfg,
                                       const std::vector<std::vector<double>>& seed_contrib,
                                       std::span<const std::shared_ptr<const IntervalSample>> history,
                                       const IntervalSample* fresh, int n) {
  std::vector<double> mu(seed_contrib[static_cast<std::size_t>(n - 1)]);
  const int first = std::max(1, n - cfg.eta);
  for (int v = first; v <= n; ++v) {
    const IntervalSample* sample = nullptr;
    if (v <= static_cast<int>(history.size())) sample = history[static_cast<std::size_t>(v - 1)].get();
    else if (fresh && fresh->interval == v) sample = fresh;
    if (!sample) continue;
    const auto& row = sample->mu_contrib[static_cast<std::size_t>(n - v)];
    for (int a = 0; a < cfg.n_ages(); ++a) mu[static_cast<std::size_t>(a)] += row[static_cast<std::size_t>(a)];
  }
  for (auto& m : mu) m *= cfg.beta;
  return mu;
}

inline double draw_bounded_normal(double mean, double sd, double lo, double hi, RngStream& rng) {
  if (sd == 0.0) return mean;
  for (int tries = 0; tries < 100; ++tries) {
    const double x = rng.normal(mean, sd);
    if (x >= lo && x <= hi) return x;
  }
  return std::clamp(mean, lo, hi);
}

}  // namespace detail

// The filter engine. One instance per run; owns the particle population and
// the incremental fixed-lag summaries.
class KernelDensityParticleFilter {
 public:
  KernelDensityParticleFilter(const EpidemicConfig& cfg, const FilterConfig& fcfg,
                              const SeedHistory& seeds, const ObservedSeries& observed,
                              FilterObserver* observer = nullptr)
      : cfg_(cfg),
        fcfg_(fcfg),
        seeds_(seeds),
        observed_(observed),
        observer_(observer),
        kernels_(cfg) {
    cfg_.validate();
    fcfg_.validate();
    observed_.validate();
    seeds_.validate(cfg_.grid.t0(), cfg_.n_ages());
    if (observed_.k != cfg_.k() || observed_.n_ages != cfg_.n_ages()) {
      throw std::invalid_argument("run_filter: observed series does not match config grid/ages");
    }
    seed_contrib_ = detail::seed_mu_contrib(cfg_, kernels_.report, seeds_);
    seed_counts_ = seeds_.counts_by_age(cfg_.n_ages());
    sim_cache_ = build_sim_cache(cfg_, kernels_, seeds_);
    init_summary_storage();
  }

  FilterResult run() {
    initialize();
    for (int n = 1; n < cfg_.k(); ++n) {
      int doublings = 0;
      for (;;) {
        try {
          advance(n, attempts_[static_cast<std::size_t>(n)]);
          break;
        } catch (const ParticleCollapseError&) {
          if (!fcfg_.rescue || doublings >= fcfg_.max_rescue_doublings) throw;
          ++doublings;
          ++attempts_[static_cast<std::size_t>(n)];
          duplicate_population(n);
        }
      }
    }
    finalize_tail();
    finalize_fixed_params();
    FilterResult result;
    result.summary = std::move(summary_);
    result.particles = std::move(particles_);
    result.posterior_weights = std::move(posterior_weights_);
    result.ancestry = std::move(ancestry_);
    result.rescues = std::move(rescues_);
    return result;
  }

 private:
  void init_summary_storage() {
    const int k = cfg_.k();
    const int na = cfg_.n_ages();
    summary_.age_labels = cfg_.ages.labels;
    summary_.k = k;
    summary_.n_ages = na;
    summary_.n_particles = fcfg_.n_particles;
    summary_.seed = fcfg_.seed;
    summary_.gamma.assign(static_cast<std::size_t>(k), std::vector<QuantileTriple>(static_cast<std::size_t>(na)));
    summary_.gamma_mean.assign(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(na), 0.0));
    summary_.gamma_var.assign(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(na), 0.0));
    summary_.latent_weekly.assign(static_cast<std::size_t>(k), std::vector<QuantileTriple>(static_cast<std::size_t>(na)));
    summary_.latent_weekly_var.assign(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(na), 0.0));
    summary_.latent_weekly_total.assign(static_cast<std::size_t>(k), QuantileTriple{});
    summary_.r_age.assign(static_cast<std::size_t>(k), std::vector<QuantileTriple>(static_cast<std::size_t>(na)));
    summary_.r.assign(static_cast<std::size_t>(k), std::nullopt);

    const double t0 = cfg_.grid.t0();
    const double t_end = cfg_.grid.t_end();
    for (double t = t0; t < t_end - 1e-9; t += 1.0) {
      summary_.day_times.push_back(t);
      summary_.day_interval.push_back(interval_index(t, cfg_.grid));
    }
    const std::size_t days = summary_.day_times.size();
    summary_.latent_daily.assign(days, std::vector<QuantileTriple>(static_cast<std::size_t>(na)));
    summary_.latent_daily_total.assign(days, QuantileTriple{});
    summary_.intensity_daily.assign(days, std::vector<QuantileTriple>(static_cast<std::size_t>(na)));
    summary_.intensity_daily_total.assign(days, QuantileTriple{});

    attempts_.assign(static_cast<std::size_t>(k) + 1, 0);
  }

  void initialize() {
    const int n_ages = cfg_.n_ages();
    const int big_n = fcfg_.n_particles;
    const double ld_lo = std::log(cfg_.d_bounds.min), ld_hi = std::log(cfg_.d_bounds.max);
    const double lv_lo = std::log(cfg_.v_bounds.min), lv_hi = std::log(cfg_.v_bounds.max);
    const double mu_d = 0.5 * (ld_lo + ld_hi), sd_d = (ld_hi - ld_lo) / 8.0;
    const double mu_v = 0.5 * (lv_lo + lv_hi), sd_v = (lv_hi - lv_lo) / 8.0;

    particles_.assign(static_cast<std::size_t>(big_n), Particle{});
    std::vector<double> loglik(static_cast<std::size_t>(big_n));
    parallel_for(static_cast<std::size_t>(big_n), fcfg_.n_threads, [&](std::size_t j) {
      Particle& p = particles_[j];
      RngStream params(derive_seed(fcfg_.seed, stream::kInitParams, 0, 1, j));
      p.log_d = detail::draw_bounded_normal(mu_d, sd_d, ld_lo, ld_hi, params);
      p.log_v = detail::draw_bounded_normal(mu_v, sd_v, lv_lo, lv_hi, params);
      RngStream gam(derive_seed(fcfg_.seed, stream::kInitGamma, 0, 1, j));
      std::vector<double> g0(static_cast<std::size_t>(n_ages));
      for (auto& g : g0) g = gam.uniform(cfg_.gamma_prior.min, cfg_.gamma_prior.max);
      RngStream sim(derive_seed(fcfg_.seed, stream::kInitSim, 0, 1, j));
      SusceptibleLedger ledger(cfg_.initial_susceptibles);
      auto sample = std::make_shared<IntervalSample>(
          simulate_interval(cfg_, kernels_, seeds_, {}, g0, ledger, 1, sim,
                            static_cast<std::int64_t>(seeds_.events.size()),
                            SampleFill::kFull, &sim_cache_));
      const auto mu = detail::windowed_mu(cfg_, seed_contrib_, {}, sample.get(), 1);
      loglik[j] = interval_log_likelihood(observed_.row(1), mu, p.v());
      p.gammas.push_back(std::move(g0));
      p.next_event_index =
          static_cast<std::int64_t>(seeds_.events.size() + sample->events.size());
      p.latent.push_back(std::move(sample));
      p.susceptibles = ledger.counts();
    });

    std::vector<double> w(static_cast<std::size_t>(big_n));
    if (!std::isfinite(normalize_log_weights(loglik, w))) {
      double best = -std::numeric_limits<double>::infinity();
      for (double ll : loglik) best = std::max(best, ll);
      throw DegenerateInitializationError(best);
    }
    for (std::size_t j = 0; j < particles_.size(); ++j) {
      particles_[j].w = w[j];
      particles_[j].g = 1.0 / big_n;
    }
    posterior_weights_ = w;
    state_ = 1;
    if (observer_) observer_->on_state(1, particles_, posterior_weights_);
    finalize_due();
  }

  // One KDPF update from state n to n+1.
  void advance(int n, int attempt) {
    const int next = n + 1;
    const std::size_t big_n = particles_.size();
    const int n_ages = cfg_.n_ages();
    const double a = fcfg_.shrinkage_a();
    const double h = fcfg_.bandwidth_h();

    std::vector<double> w(big_n), g_prev(big_n), log_d(big_n), log_v(big_n), d_nat(big_n), v_nat(big_n);
    for (std::size_t j = 0; j < big_n; ++j) {
      w[j] = particles_[j].w;
      g_prev[j] = particles_[j].g;
      log_d[j] = particles_[j].log_d;
      log_v[j] = particles_[j].log_v;
      d_nat[j] = particles_[j].d();
      v_nat[j] = particles_[j].v();
    }

    const auto m_log_d = shrink_means(log_d, w, a);
    const auto m_log_v = shrink_means(log_v, w, a);
    const auto m_d = shrink_means(d_nat, w, a);
    const auto m_v = shrink_means(v_nat, w, a);
    const double var_log_d = weighted_variance(log_d, w);
    const double var_log_v = weighted_variance(log_v, w);

    // Lookahead pass.
    std::vector<std::shared_ptr<const IntervalSample>> look_sample(big_n);
    std::vector<double> look_loglik(big_n);
    parallel_for(big_n, fcfg_.n_threads, [&](std::size_t j) {
      const Particle& p = particles_[j];
      RngStream gam(derive_seed(fcfg_.seed, stream::kLookaheadGamma,
                                static_cast<std::uint64_t>(attempt), static_cast<std::uint64_t>(next), j));
      std::vector<double> g_next_gamma(static_cast<std::size_t>(n_ages));
      for (int age = 0; age < n_ages; ++age) {
        g_next_gamma[static_cast<std::size_t>(age)] =
            rw_propagate(p.gammas.back()[static_cast<std::size_t>(age)], m_d[j], gam);
      }
      RngStream sim(derive_seed(fcfg_.seed, stream::kLookaheadSim,
                                static_cast<std::uint64_t>(attempt), static_cast<std::uint64_t>(next), j));
      SusceptibleLedger ledger(p.susceptibles);
      look_sample[j] = std::make_shared<IntervalSample>(
          simulate_interval(cfg_, kernels_, seeds_, p.latent, g_next_gamma, ledger, next, sim,
                            p.next_event_index, SampleFill::kLookaheadOnly, &sim_cache_));
      const auto mu = detail::windowed_mu(cfg_, seed_contrib_, p.latent, look_sample[j].get(), next);
      look_loglik[j] = interval_log_likelihood(observed_.row(next), mu, m_v[j]);
    });

    std::vector<double> g_next = lookahead_weight_update(g_prev, w, look_loglik, next);

    const bool resampled = ess(g_next) < fcfg_.ess_fraction * static_cast<double>(big_n);
    std::vector<int> ancestors(big_n);
    if (resampled) {
      RngStream res(derive_seed(fcfg_.seed, stream::kResample,
                                static_cast<std::uint64_t>(attempt), static_cast<std::uint64_t>(next)));
      ancestors = resample_multinomial(g_next, static_cast<int>(big_n), res);
      std::fill(g_next.begin(), g_next.end(), 1.0 / static_cast<double>(big_n));
    } else {
      for (std::size_t j = 0; j < big_n; ++j) ancestors[j] = static_cast<int>(j);
    }

    // Regenerate fixed parameters around the ancestors' shrunk locations.
    std::vector<double> new_log_d(big_n), new_log_v(big_n);
    parallel_for(big_n, fcfg_.n_threads, [&](std::size_t j) {
      RngStream regen(derive_seed(fcfg_.seed, stream::kRegenerate,
                                  static_cast<std::uint64_t>(attempt), static_cast<std::uint64_t>(next), j));
      const std::size_t anc = static_cast<std::size_t>(ancestors[j]);
      new_log_v[j] = regen.normal(m_log_v[anc], h * std::sqrt(var_log_v));
      new_log_d[j] = regen.normal(m_log_d[anc], h * std::sqrt(var_log_d));
    });

    // Propagate and weight.
    std::vector<Particle> next_particles(big_n);
    std::vector<double> new_loglik(big_n);
    parallel_for(big_n, fcfg_.n_threads, [&](std::size_t j) {
      const Particle& anc = particles_[static_cast<std::size_t>(ancestors[j])];
      Particle& out = next_particles[j];
      RngStream gam(derive_seed(fcfg_.seed, stream::kPropagateGamma,
                                static_cast<std::uint64_t>(attempt), static_cast<std::uint64_t>(next), j));
      std::vector<double> gamma_next(static_cast<std::size_t>(n_ages));
      const double d_new = std::exp(new_log_d[j]);
      for (int age = 0; age < n_ages; ++age) {
        gamma_next[static_cast<std::size_t>(age)] =
            rw_propagate(anc.gammas.back()[static_cast<std::size_t>(age)], d_new, gam);
      }
      RngStream sim(derive_seed(fcfg_.seed, stream::kPropagateSim,
                                static_cast<std::uint64_t>(attempt), static_cast<std::uint64_t>(next), j));
      SusceptibleLedger ledger(anc.susceptibles);
      auto sample = std::make_shared<IntervalSample>(
          simulate_interval(cfg_, kernels_, seeds_, anc.latent, gamma_next, ledger, next, sim,
                            anc.next_event_index, SampleFill::kFull, &sim_cache_));
      const auto mu = detail::windowed_mu(cfg_, seed_contrib_, anc.latent, sample.get(), next);
      new_loglik[j] = interval_log_likelihood(observed_.row(next), mu, std::exp(new_log_v[j]));

      out.gammas = anc.gammas;
      out.gammas.push_back(std::move(gamma_next));
      out.latent = anc.latent;
      out.next_event_index = anc.next_event_index + static_cast<std::int64_t>(sample->events.size());
      out.latent.push_back(std::move(sample));
      out.susceptibles = ledger.counts();
      out.log_d = new_log_d[j];
      out.log_v = new_log_v[j];
    });

    std::vector<double> log_w_tilde;
    std::vector<double> w_next =
        propagate_weight_update(new_loglik, look_loglik, ancestors, next, &log_w_tilde);

    // Final-step resampling weights: w when the ESS resample fired, else
    // w_tilde * g.
    std::vector<double> k_weights;
    if (resampled) {
      k_weights = w_next;
    } else {
      std::vector<double> log_k(big_n);
      for (std::size_t j = 0; j < big_n; ++j) log_k[j] = log_w_tilde[j] + std::log(g_next[j]);
      k_weights.assign(big_n, 0.0);
      if (!std::isfinite(normalize_log_weights(log_k, k_weights))) {
        k_weights = w_next;  // disjoint supports; fall back to the importance weights
      }
    }

    for (std::size_t j = 0; j < big_n; ++j) {
      next_particles[j].w = w_next[j];
      next_particles[j].g = g_next[j];
    }
    particles_ = std::move(next_particles);
    posterior_weights_ = std::move(k_weights);
    ancestry_.push_back(std::move(ancestors));
    state_ = next;
    if (observer_) observer_->on_state(next, particles_, posterior_weights_);
    finalize_due();
  }

  // Rescue path: replaces the population with 2N draws from the current
  // importance weights, all weights reset to uniform.
  void duplicate_population(int n) {
    const std::size_t big_n = particles_.size();
    std::vector<double> w(big_n);
    for (std::size_t j = 0; j < big_n; ++j) w[j] = particles_[j].w;
    RngStream res(derive_seed(fcfg_.seed, stream::kRescue,
                              static_cast<std::uint64_t>(attempts_[static_cast<std::size_t>(n)]),
                              static_cast<std::uint64_t>(n)));
    const int doubled = static_cast<int>(big_n) * 2;
    const auto idx = resample_multinomial(w, doubled, res);
    std::vector<Particle> next(static_cast<std::size_t>(doubled));
    for (int j = 0; j < doubled; ++j) {
      next[static_cast<std::size_t>(j)] = particles_[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
      next[static_cast<std::size_t>(j)].w = 1.0 / doubled;
      next[static_cast<std::size_t>(j)].g = 1.0 / doubled;
    }
    particles_ = std::move(next);
    posterior_weights_.assign(static_cast<std::size_t>(doubled), 1.0 / doubled);
    rescues_.push_back({n + 1, doubled});
  }

  void finalize_due() {
    const int m = state_ - fcfg_.smoothing_lag + 1;
    if (m >= 1) {
      for (int i = last_finalized_ + 1; i <= m; ++i) finalize_interval(i);
    }
  }

  void finalize_tail() {
    for (int m = last_finalized_ + 1; m <= cfg_.k(); ++m) finalize_interval(m);
  }

  void finalize_fixed_params() {
    const std::size_t big_n = particles_.size();
    std::vector<double> d(big_n), v(big_n);
    for (std::size_t j = 0; j < big_n; ++j) {
      d[j] = particles_[j].d();
      v[j] = particles_[j].v();
    }
    summary_.d_ci = quantiles_of(d, posterior_weights_);
    summary_.v_ci = quantiles_of(v, posterior_weights_);
  }

  QuantileTriple quantiles_of(std::span<const double> values, std::span<const double> weights) const {
    return QuantileTriple{weighted_quantile(values, weights, 0.005),
                          weighted_quantile(values, weights, 0.5),
                          weighted_quantile(values, weights, 0.995)};
  }

  void finalize_interval(int m) {
    last_finalized_ = m;
    const std::size_t big_n = particles_.size();
    const int n_ages = cfg_.n_ages();
    const auto& weights = posterior_weights_;
    const std::size_t mi = static_cast<std::size_t>(m - 1);

    std::vector<double> values(big_n);

    for (int a = 0; a < n_ages; ++a) {
      for (std::size_t j = 0; j < big_n; ++j) values[j] = particles_[j].gammas[mi][static_cast<std::size_t>(a)];
      summary_.gamma[mi][static_cast<std::size_t>(a)] = quantiles_of(values, weights);
      summary_.gamma_mean[mi][static_cast<std::size_t>(a)] = weighted_mean(values, weights);
      summary_.gamma_var[mi][static_cast<std::size_t>(a)] = weighted_variance(values, weights);
    }

    for (int a = 0; a < n_ages; ++a) {
      for (std::size_t j = 0; j < big_n; ++j) {
        values[j] = static_cast<double>(particles_[j].latent[mi]->counts_by_age[static_cast<std::size_t>(a)]);
      }
      summary_.latent_weekly[mi][static_cast<std::size_t>(a)] = quantiles_of(values, weights);
      summary_.latent_weekly_var[mi][static_cast<std::size_t>(a)] = weighted_variance(values, weights);
    }
    for (std::size_t j = 0; j < big_n; ++j) {
      double total = 0.0;
      for (std::int64_t c : particles_[j].latent[mi]->counts_by_age) total += static_cast<double>(c);
      values[j] = total;
    }
    summary_.latent_weekly_total[mi] = quantiles_of(values, weights);

    finalize_r(m);
    finalize_daily(m);
  }

  // R_{aa'} = (S_{a'}/N_{a'}) gamma_{a'} m_{a'a} with S at the subinterval
  // start; aggregate R weighted by per-particle infections.
  void finalize_r(int m) {
    const std::size_t big_n = particles_.size();
    const int n_ages = cfg_.n_ages();
    const std::size_t mi = static_cast<std::size_t>(m - 1);
    const auto& weights = posterior_weights_;

    std::vector<std::vector<double>> r_age_values(
        static_cast<std::size_t>(n_ages), std::vector<double>(big_n, 0.0));
    std::vector<double> r_values;
    std::vector<double> r_weights;
    r_values.reserve(big_n);
    r_weights.reserve(big_n);

    std::vector<std::int64_t> s_start(static_cast<std::size_t>(n_ages));
    std::vector<double> omega(static_cast<std::size_t>(n_ages));
    for (std::size_t j = 0; j < big_n; ++j) {
      const Particle& p = particles_[j];
      for (int a = 0; a < n_ages; ++a) {
        s_start[static_cast<std::size_t>(a)] = cfg_.initial_susceptibles[static_cast<std::size_t>(a)];
      }
      for (int v = 1; v < m; ++v) {
        for (int a = 0; a < n_ages; ++a) {
          s_start[static_cast<std::size_t>(a)] -=
              p.latent[static_cast<std::size_t>(v - 1)]->counts_by_age[static_cast<std::size_t>(a)];
        }
      }
      double omega_total = 0.0;
      for (int a = 0; a < n_ages; ++a) {
        double infected = 0.0;
        if (fcfg_.r_weight_by_prevalence) {
          const int first = std::max(1, m - cfg_.eta);
          for (int v = first; v <= m; ++v) {
            infected += static_cast<double>(
                p.latent[static_cast<std::size_t>(v - 1)]->counts_by_age[static_cast<std::size_t>(a)]);
          }
          if (m - cfg_.eta <= 0) infected += static_cast<double>(seed_counts_[static_cast<std::size_t>(a)]);
        } else {
          infected = static_cast<double>(p.latent[mi]->counts_by_age[static_cast<std::size_t>(a)]);
        }
        omega[static_cast<std::size_t>(a)] = infected;
        omega_total += infected;
      }
      double r_weighted = 0.0;
      for (int a = 0; a < n_ages; ++a) {
        double r_a = 0.0;
        for (int ap = 0; ap < n_ages; ++ap) {
          const double frac = static_cast<double>(s_start[static_cast<std::size_t>(ap)]) /
                              static_cast<double>(cfg_.ages.populations[static_cast<std::size_t>(ap)]);
          r_a += frac * p.gammas[mi][static_cast<std::size_t>(ap)] * cfg_.contacts.at(ap, a);
        }
        r_age_values[static_cast<std::size_t>(a)][j] = r_a;
        if (omega_total > 0.0) r_weighted += omega[static_cast<std::size_t>(a)] / omega_total * r_a;
      }
      if (omega_total > 0.0) {
        r_values.push_back(r_weighted);
        r_weights.push_back(weights[j]);
      }
    }

    for (int a = 0; a < n_ages; ++a) {
      summary_.r_age[mi][static_cast<std::size_t>(a)] = quantiles_of(r_age_values[static_cast<std::size_t>(a)], weights);
    }
    if (!r_values.empty()) {
      double total = 0.0;
      for (double w : r_weights) total += w;
      if (total > 0.0) summary_.r[mi] = quantiles_of(r_values, r_weights);
    }
  }

  // Per-sample day statistics, memoized because resampled particles share
  // their interval samples: for each day of the block, events per age within
  // the day, events per age strictly before the day start, and the kernel
  // excitation sum per source age at the day start.
  struct SampleDayStats {
    std::vector<std::vector<double>> in_day;      // [day][age]
    std::vector<std::vector<double>> before_day;  // [day][age]
    std::vector<std::vector<double>> excitation;  // [day][source age]
  };

  SampleDayStats day_stats_for(const IntervalSample& sample, std::span<const double> day_times) const {
    const int n_ages = cfg_.n_ages();
    const double cutoff = kernels_.gi.tail_cutoff();
    SampleDayStats stats;
    stats.in_day.assign(day_times.size(), std::vector<double>(static_cast<std::size_t>(n_ages), 0.0));
    stats.before_day = stats.in_day;
    stats.excitation = stats.in_day;
    for (std::size_t d = 0; d < day_times.size(); ++d) {
      const double t = day_times[d];
      for (const auto& e : sample.events) {
        if (e.time < t) {
          stats.before_day[d][static_cast<std::size_t>(e.age)] += 1.0;
          if (t - e.time <= cutoff) {
            stats.excitation[d][static_cast<std::size_t>(e.age)] += kernels_.gi.density(t - e.time);
          }
        } else if (e.time < t + 1.0) {
          stats.in_day[d][static_cast<std::size_t>(e.age)] += 1.0;
        }
      }
    }
    return stats;
  }

  void finalize_daily(int m) {
    const std::size_t big_n = particles_.size();
    const int n_ages = cfg_.n_ages();
    const std::size_t mi = static_cast<std::size_t>(m - 1);
    const auto& weights = posterior_weights_;

    std::vector<std::size_t> day_ids;
    std::vector<double> day_times;
    for (std::size_t d = 0; d < summary_.day_times.size(); ++d) {
      if (summary_.day_interval[d] == m) {
        day_ids.push_back(d);
        day_times.push_back(summary_.day_times[d]);
      }
    }
    if (day_ids.empty()) return;
    const std::size_t n_days = day_ids.size();

    // Seed excitation at each day start, shared by all particles.
    const double cutoff = kernels_.gi.tail_cutoff();
    std::vector<std::vector<double>> seed_excitation(n_days,
                                                     std::vector<double>(static_cast<std::size_t>(n_ages), 0.0));
    for (std::size_t d = 0; d < n_days; ++d) {
      const double t = day_times[d];
      for (const auto& e : seeds_.events) {
        if (e.time < t && t - e.time <= cutoff) {
          seed_excitation[d][static_cast<std::size_t>(e.age)] += kernels_.gi.density(t - e.time);
        }
      }
    }

    // Memoize per-sample stats over the samples reachable from the current
    // population within the excitation window.
    const int first_window = std::max(1, m - cfg_.eta);
    std::map<const IntervalSample*, SampleDayStats> memo;
    const auto stats_of = [&](const IntervalSample* s) -> const SampleDayStats& {
      auto it = memo.find(s);
      if (it == memo.end()) it = memo.emplace(s, day_stats_for(*s, day_times)).first;
      return it->second;
    };

    // Daily latent counts over the full population. Day bins are aligned
    // with subinterval m; the previous subinterval is included for grids
    // whose boundaries are not day-aligned.
    std::vector<double> values(big_n);
    std::vector<double> totals(big_n);
    for (std::size_t d = 0; d < n_days; ++d) {
      for (int a = 0; a < n_ages; ++a) {
        for (std::size_t j = 0; j < big_n; ++j) {
          double count = 0.0;
          for (int v = std::max(1, m - 1); v <= m; ++v) {
            count += stats_of(particles_[j].latent[static_cast<std::size_t>(v - 1)].get())
                         .in_day[d][static_cast<std::size_t>(a)];
          }
          values[j] = count;
          if (a == 0) totals[j] = count;
          else totals[j] += count;
        }
        summary_.latent_daily[day_ids[d]][static_cast<std::size_t>(a)] = quantiles_of(values, weights);
      }
      summary_.latent_daily_total[day_ids[d]] = quantiles_of(totals, weights);
    }

    // Daily intensity over a posterior subsample.
    const int sub_n = std::min<int>(fcfg_.intensity_particles, static_cast<int>(big_n));
    RngStream sub_rng(derive_seed(fcfg_.seed, stream::kIntensitySubsample, 0, static_cast<std::uint64_t>(m)));
    const auto sub_idx = resample_multinomial(weights, sub_n, sub_rng);
    std::vector<double> sub_values(static_cast<std::size_t>(sub_n));
    std::vector<double> sub_weights(static_cast<std::size_t>(sub_n), 1.0 / sub_n);

    std::vector<double> excite_by_source(static_cast<std::size_t>(n_ages));
    std::vector<double> s_t(static_cast<std::size_t>(n_ages));
    std::vector<std::vector<std::vector<double>>> lambda(
        n_days, std::vector<std::vector<double>>(static_cast<std::size_t>(n_ages),
                                                 std::vector<double>(static_cast<std::size_t>(sub_n), 0.0)));
    for (int si = 0; si < sub_n; ++si) {
      const Particle& p = particles_[static_cast<std::size_t>(sub_idx[static_cast<std::size_t>(si)])];
      // Depletion up to the window start, constant across the block's days.
      std::vector<double> s_base(static_cast<std::size_t>(n_ages));
      for (int a = 0; a < n_ages; ++a) {
        s_base[static_cast<std::size_t>(a)] =
            static_cast<double>(cfg_.initial_susceptibles[static_cast<std::size_t>(a)]);
      }
      for (int v = 1; v < first_window; ++v) {
        for (int a = 0; a < n_ages; ++a) {
          s_base[static_cast<std::size_t>(a)] -= static_cast<double>(
              p.latent[static_cast<std::size_t>(v - 1)]->counts_by_age[static_cast<std::size_t>(a)]);
        }
      }
      for (std::size_t d = 0; d < n_days; ++d) {
        excite_by_source = seed_excitation[d];
        s_t = s_base;
        for (int v = first_window; v <= m; ++v) {
          const auto& stats = stats_of(p.latent[static_cast<std::size_t>(v - 1)].get());
          for (int a = 0; a < n_ages; ++a) {
            excite_by_source[static_cast<std::size_t>(a)] += stats.excitation[d][static_cast<std::size_t>(a)];
            s_t[static_cast<std::size_t>(a)] -= stats.before_day[d][static_cast<std::size_t>(a)];
          }
        }
        for (int a = 0; a < n_ages; ++a) {
          double excite = 0.0;
          for (int ai = 0; ai < n_ages; ++ai) {
            excite += excite_by_source[static_cast<std::size_t>(ai)] * cfg_.contacts.at(a, ai);
          }
          const double frac = s_t[static_cast<std::size_t>(a)] /
                              static_cast<double>(cfg_.ages.populations[static_cast<std::size_t>(a)]);
          lambda[d][static_cast<std::size_t>(a)][static_cast<std::size_t>(si)] =
              frac * p.gammas[mi][static_cast<std::size_t>(a)] * excite;
        }
      }
    }

    for (std::size_t d = 0; d < n_days; ++d) {
      for (std::size_t si = 0; si < static_cast<std::size_t>(sub_n); ++si) {
        double total = 0.0;
        for (int a = 0; a < n_ages; ++a) total += lambda[d][static_cast<std::size_t>(a)][si];
        sub_values[si] = total;
      }
      summary_.intensity_daily_total[day_ids[d]] = quantiles_of(sub_values, sub_weights);
      for (int a = 0; a < n_ages; ++a) {
        summary_.intensity_daily[day_ids[d]][static_cast<std::size_t>(a)] =
            quantiles_of(lambda[d][static_cast<std::size_t>(a)], sub_weights);
      }
    }
  }

  EpidemicConfig cfg_;
  FilterConfig fcfg_;
  SeedHistory seeds_;
  ObservedSeries observed_;
  FilterObserver* observer_ = nullptr;
  KernelPair kernels_;
  std::vector<std::vector<double>> seed_contrib_;
  std::vector<std::int64_t> seed_counts_;
  SimCache sim_cache_;

  std::vector<Particle> particles_;
  std::vector<double> posterior_weights_;
  std::vector<std::vector<int>> ancestry_;
  std::vector<RescueEvent> rescues_;
  std::vector<int> attempts_;
  PosteriorSummary summary_;
  int state_ = 0;
  int last_finalized_ = 0;
};

inline FilterResult run_filter(const EpidemicConfig& cfg, const FilterConfig& fcfg,
                               const SeedHistory& seeds, const ObservedSeries& observed,
                               FilterObserver* observer = nullptr) {
  KernelDensityParticleFilter filter(cfg, fcfg, seeds, observed, observer);
  return filter.run();
}

struct ForecastStat {
  double mean = 0.0;
  double median = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
};

struct ForecastSummary {
  std::vector<ForecastStat> per_age;
  ForecastStat aggregate;
  double d_hat = 0.0;
  double v_hat = 0.0;
  int n_samples = 0;
};

namespace detail {

inline ForecastStat forecast_stat(std::vector<double>& samples) {
  std::vector<double> uniform_w(samples.size(), 1.0 / static_cast<double>(samples.size()));
  ForecastStat s;
  s.mean = weighted_mean(samples, uniform_w);
  s.median = weighted_quantile(samples, uniform_w, 0.5);
  s.lo95 = weighted_quantile(samples, uniform_w, 0.025);
  s.hi95 = weighted_quantile(samples, uniform_w, 0.975);
  return s;
}

}  // namespace detail

// One-interval-ahead forecast of reported cases: resamples the final
// population to equal weights, pins d and v at their particle means, then
// propagates each particle one subinterval and draws NB counts.
inline ForecastSummary forecast_next_interval(const EpidemicConfig& cfg,
                                              std::span<const Particle> particles,
                                              std::span<const double> weights,
                                              const SeedHistory& seeds, std::uint64_t seed,
                                              int n_threads = 0) {
  if (particles.empty() || particles.size() != weights.size()) {
    throw std::invalid_argument("forecast_next_interval: bad particle inputs");
  }
  const int k = cfg.k();
  const int next = k + 1;
  const int n_ages = cfg.n_ages();
  const KernelPair kernels(cfg);
  const auto seed_contrib = detail::seed_mu_contrib(cfg, kernels.report, seeds);
  const SimCache sim_cache = build_sim_cache(cfg, kernels, seeds);

  RngStream res(derive_seed(seed, stream::kForecastResample, 0, static_cast<std::uint64_t>(next)));
  const auto idx = resample_multinomial(weights, static_cast<int>(particles.size()), res);

  std::vector<double> d_vals(idx.size()), v_vals(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    d_vals[j] = particles[static_cast<std::size_t>(idx[j])].d();
    v_vals[j] = particles[static_cast<std::size_t>(idx[j])].v();
  }
  const double d_hat = pairwise_sum(d_vals) / static_cast<double>(idx.size());
  const double v_hat = pairwise_sum(v_vals) / static_cast<double>(idx.size());

  std::vector<std::vector<double>> samples(static_cast<std::size_t>(n_ages),
                                           std::vector<double>(idx.size(), 0.0));
  std::vector<double> aggregate(idx.size(), 0.0);
  parallel_for(idx.size(), n_threads, [&](std::size_t j) {
    const Particle& p = particles[static_cast<std::size_t>(idx[j])];
    RngStream gam(derive_seed(seed, stream::kForecastGamma, 0, static_cast<std::uint64_t>(next), j));
    std::vector<double> gamma_next(static_cast<std::size_t>(n_ages));
    for (int a = 0; a < n_ages; ++a) {
      gamma_next[static_cast<std::size_t>(a)] =
          rw_propagate(p.gammas.back()[static_cast<std::size_t>(a)], d_hat, gam);
    }
    RngStream sim(derive_seed(seed, stream::kForecastSim, 0, static_cast<std::uint64_t>(next), j));
    SusceptibleLedger ledger(p.susceptibles);
    const IntervalSample sample =
        simulate_interval(cfg, kernels, seeds, p.latent, gamma_next, ledger, next, sim,
                          p.next_event_index, SampleFill::kLookaheadOnly, &sim_cache);
    const auto mu = detail::windowed_mu(cfg, seed_contrib, p.latent, &sample, next);
    RngStream obs(derive_seed(seed, stream::kForecastObs, 0, static_cast<std::uint64_t>(next), j));
    double total = 0.0;
    for (int a = 0; a < n_ages; ++a) {
      const double y = static_cast<double>(obs.negative_binomial(mu[static_cast<std::size_t>(a)], v_hat));
      samples[static_cast<std::size_t>(a)][j] = y;
      total += y;
    }
    aggregate[j] = total;
  });

  ForecastSummary out;
  out.d_hat = d_hat;
  out.v_hat = v_hat;
  out.n_samples = static_cast<int>(idx.size());
  out.per_age.resize(static_cast<std::size_t>(n_ages));
  for (int a = 0; a < n_ages; ++a) {
    out.per_age[static_cast<std::size_t>(a)] = detail::forecast_stat(samples[static_cast<std::size_t>(a)]);
  }
  out.aggregate = detail::forecast_stat(aggregate);
  return out;
}

}  // namespace epihawkes

#endif  // EPIHAWKES_KDPF_HPP_
