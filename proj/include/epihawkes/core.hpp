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

#ifndef EPIHAWKES_CORE_HPP_
#define EPIHAWKES_CORE_HPP_

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epihawkes/kernels.hpp"

namespace epihawkes {

// Age bands and their population sizes. Band indices are dense integers
// 0..size()-1; labels are metadata only.
struct AgeStructure {
  std::vector<std::string> labels;
  std::vector<std::int64_t> populations;

  int size() const { return static_cast<int>(labels.size()); }

  void validate() const {
    if (labels.empty() || labels.size() != populations.size()) {
      throw std::invalid_argument("AgeStructure: need matching non-empty labels and populations");
    }
    for (std::int64_t n : populations) {
      if (n <= 0) throw std::invalid_argument("AgeStructure: populations must be > 0");
    }
  }
};

// Average contacts per unit time of a person in group `a` (row) with people
// in group `a_other` (column).
struct ContactMatrix {
  int n = 0;
  std::vector<double> entries;  // row-major n x n

  ContactMatrix() = default;
  ContactMatrix(int dim, std::vector<double> values) : n(dim), entries(std::move(values)) {}

  double at(int a, int a_other) const { return entries[static_cast<std::size_t>(a) * n + a_other]; }
  double& at(int a, int a_other) { return entries[static_cast<std::size_t>(a) * n + a_other]; }

  void validate() const {
    if (n <= 0 || entries.size() != static_cast<std::size_t>(n) * n) {
      throw std::invalid_argument("ContactMatrix: not square");
    }
    for (double m : entries) {
      if (!(m >= 0.0)) throw std::invalid_argument("ContactMatrix: entries must be >= 0");
    }
  }
};

// Horizon [T_0, T_k) broken into k half-open subintervals [T_{n-1}, T_n),
// 1-based. Boundary n = k+1 is extrapolated with the last width so the
// one-interval-ahead forecast has somewhere to live.
class IntervalGrid {
 public:
  IntervalGrid() = default;

  explicit IntervalGrid(std::vector<double> boundaries) : b_(std::move(boundaries)) {
    if (b_.size() < 2) throw std::invalid_argument("IntervalGrid: need at least one interval");
    for (std::size_t i = 1; i < b_.size(); ++i) {
      if (!(b_[i] > b_[i - 1])) {
        throw std::invalid_argument("IntervalGrid: boundaries must be strictly increasing");
      }
    }
  }

  static IntervalGrid uniform(double t0, double width, int k) {
    if (k < 1 || !(width > 0.0)) throw std::invalid_argument("IntervalGrid: k >= 1 and width > 0");
    std::vector<double> b(static_cast<std::size_t>(k) + 1);
    for (int i = 0; i <= k; ++i) b[static_cast<std::size_t>(i)] = t0 + width * i;
    return IntervalGrid(std::move(b));
  }

  int k() const { return static_cast<int>(b_.size()) - 1; }
  double t0() const { return b_.front(); }
  double t_end() const { return b_.back(); }
  const std::vector<double>& boundaries() const { return b_; }

  double lower(int n) const { return boundary(n - 1); }
  double upper(int n) const { return boundary(n); }
  double width(int n) const { return upper(n) - lower(n); }

  // Boundary index 0..k, extrapolating past k with the final width.
  double boundary(int i) const {
    const int kk = k();
    if (i < 0) throw std::out_of_range("IntervalGrid: negative boundary index");
    if (i <= kk) return b_[static_cast<std::size_t>(i)];
    const double w = b_[static_cast<std::size_t>(kk)] - b_[static_cast<std::size_t>(kk) - 1];
    return b_.back() + w * (i - kk);
  }

 private:
  std::vector<double> b_;
};

// 1-based index of the subinterval containing t; half-open on the right.
inline int interval_index(double t, const IntervalGrid& grid) {
  const auto& b = grid.boundaries();
  if (t < b.front() || t >= b.back()) {
    throw std::out_of_range("interval_index: t outside [T_0, T_k)");
  }
  const auto it = std::upper_bound(b.begin(), b.end(), t);
  return static_cast<int>(it - b.begin());
}

// One latent infection. Seeds carry parent = kNoParent; all other events
// reference the flat index of their parent within the owning event log
// (seeds first, then events in interval order).
struct MarkedEvent {
  static constexpr std::int64_t kNoParent = -1;

  double time = 0.0;
  std::int32_t age = 0;
  std::int64_t parent = kNoParent;
};

// Infections that trigger the process; all times precede the horizon start.
struct SeedHistory {
  std::vector<MarkedEvent> events;

  std::vector<std::int64_t> counts_by_age(int n_ages) const {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(n_ages), 0);
    for (const auto& e : events) counts[static_cast<std::size_t>(e.age)]++;
    return counts;
  }

  void validate(double t0, int n_ages) const {
    for (const auto& e : events) {
      if (!(e.time < t0)) throw std::invalid_argument("SeedHistory: seed times must precede T_0");
      if (e.age < 0 || e.age >= n_ages) throw std::invalid_argument("SeedHistory: age out of range");
      if (e.parent != MarkedEvent::kNoParent) {
        throw std::invalid_argument("SeedHistory: seeds cannot have parents");
      }
    }
  }
};

struct GammaPrior {
  double min = 0.0;  // alpha
  double max = 0.5;  // b
};

struct ParamBounds {
  double min = 0.0;
  double max = 0.0;
};

struct EpidemicConfig {
  AgeStructure ages;
  ContactMatrix contacts;
  IntervalGrid grid;
  double beta = 1.0;  // reporting rate
  KernelSpec gi_kernel;
  KernelSpec obs_kernel;
  int eta = 3;  // lookback subintervals feeding offspring generation
  std::vector<std::int64_t> initial_susceptibles;
  GammaPrior gamma_prior;
  ParamBounds d_bounds;
  ParamBounds v_bounds;

  int n_ages() const { return ages.size(); }
  int k() const { return grid.k(); }

  void validate() const {
    ages.validate();
    contacts.validate();
    if (contacts.n != ages.size()) {
      throw std::invalid_argument("EpidemicConfig: contact matrix dimension != age bands");
    }
    // beta = 0 is tolerated (silent epidemic); ops that divide by beta check locally.
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("EpidemicConfig: beta outside [0,1]");
    gi_kernel.validate();
    obs_kernel.validate();
    if (eta < 1) throw std::invalid_argument("EpidemicConfig: eta must be >= 1");
    if (initial_susceptibles.size() != static_cast<std::size_t>(ages.size())) {
      throw std::invalid_argument("EpidemicConfig: initial_susceptibles size mismatch");
    }
    for (int a = 0; a < ages.size(); ++a) {
      const std::int64_t s = initial_susceptibles[static_cast<std::size_t>(a)];
      if (s < 0 || s > ages.populations[static_cast<std::size_t>(a)]) {
        throw std::invalid_argument("EpidemicConfig: susceptibles outside [0, N_a]");
      }
    }
    if (!(gamma_prior.min >= 0.0 && gamma_prior.min < gamma_prior.max)) {
      throw std::invalid_argument("EpidemicConfig: gamma prior needs 0 <= min < max");
    }
    // Equal bounds are allowed: they pin the parameter exactly.
    if (!(d_bounds.min > 0.0 && d_bounds.min <= d_bounds.max)) {
      throw std::invalid_argument("EpidemicConfig: d bounds need 0 < min <= max");
    }
    if (!(v_bounds.min > 0.0 && v_bounds.min <= v_bounds.max)) {
      throw std::invalid_argument("EpidemicConfig: v bounds need 0 < min <= max");
    }
  }
};

// Prepared kernels for hot loops; construct once per run.
struct KernelPair {
  GammaKernel gi;
  GammaKernel report;

  explicit KernelPair(const EpidemicConfig& cfg) : gi(cfg.gi_kernel), report(cfg.obs_kernel) {}
};

// Running susceptible counts per age group with an event-ordered depletion
// log. Confined to a single simulation replicate; never shared.
class SusceptibleLedger {
 public:
  SusceptibleLedger() = default;

  explicit SusceptibleLedger(std::vector<std::int64_t> initial)
      : initial_(initial), counts_(std::move(initial)) {
    total_ = 0;
    for (std::int64_t c : counts_) {
      if (c < 0) throw std::invalid_argument("SusceptibleLedger: negative initial count");
      total_ += c;
    }
  }

  int n_ages() const { return static_cast<int>(counts_.size()); }
  std::int64_t count(int age) const { return counts_[static_cast<std::size_t>(age)]; }
  std::int64_t total() const { return total_; }
  const std::vector<std::int64_t>& counts() const { return counts_; }
  const std::vector<std::int64_t>& initial() const { return initial_; }
  const std::vector<std::int32_t>& depletion_log() const { return log_; }

  bool deplete(int age) {
    auto& c = counts_[static_cast<std::size_t>(age)];
    if (c <= 0) return false;
    --c;
    --total_;
    log_.push_back(static_cast<std::int32_t>(age));
    return true;
  }

  // Re-applies the depletion log to the initial counts.
  std::vector<std::int64_t> replay() const {
    std::vector<std::int64_t> c = initial_;
    for (std::int32_t age : log_) --c[static_cast<std::size_t>(age)];
    return c;
  }

 private:
  std::vector<std::int64_t> initial_;
  std::vector<std::int64_t> counts_;
  std::vector<std::int32_t> log_;
  std::int64_t total_ = 0;
};

// Population-weighted average over merged contactor rows, summed over merged
// contactee columns. Preserves per-capita total contact rates.
inline ContactMatrix coarsen_contact_matrix(const ContactMatrix& fine,
                                            std::span<const double> fine_pops,
                                            const std::vector<std::vector<int>>& grouping) {
  fine.validate();
  if (fine_pops.size() != static_cast<std::size_t>(fine.n)) {
    throw std::invalid_argument("coarsen_contact_matrix: populations size mismatch");
  }
  std::vector<bool> seen(static_cast<std::size_t>(fine.n), false);
  for (const auto& group : grouping) {
    if (group.empty()) throw std::invalid_argument("coarsen_contact_matrix: empty coarse group");
    for (int a : group) {
      if (a < 0 || a >= fine.n || seen[static_cast<std::size_t>(a)]) {
        throw std::invalid_argument("coarsen_contact_matrix: grouping is not a partition");
      }
      seen[static_cast<std::size_t>(a)] = true;
    }
  }
  for (bool s : seen) {
    if (!s) throw std::invalid_argument("coarsen_contact_matrix: grouping is not a partition");
  }

  const int nc = static_cast<int>(grouping.size());
  ContactMatrix coarse(nc, std::vector<double>(static_cast<std::size_t>(nc) * nc, 0.0));
  for (int gi_row = 0; gi_row < nc; ++gi_row) {
    double pop_row = 0.0;
    for (int a : grouping[static_cast<std::size_t>(gi_row)]) pop_row += fine_pops[static_cast<std::size_t>(a)];
    if (!(pop_row > 0.0)) throw std::invalid_argument("coarsen_contact_matrix: zero group population");
    for (int gi_col = 0; gi_col < nc; ++gi_col) {
      double value = 0.0;
      for (int a : grouping[static_cast<std::size_t>(gi_row)]) {
        double row_sum = 0.0;
        for (int b : grouping[static_cast<std::size_t>(gi_col)]) row_sum += fine.at(a, b);
        value += fine_pops[static_cast<std::size_t>(a)] / pop_row * row_sum;
      }
      coarse.at(gi_row, gi_col) = value;
    }
  }
  return coarse;
}

}  // namespace epihawkes

#endif  // EPIHAWKES_CORE_HPP_
