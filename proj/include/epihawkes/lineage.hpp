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

#ifndef EPIHAWKES_LINEAGE_HPP_
#define EPIHAWKES_LINEAGE_HPP_

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "epihawkes/core.hpp"
#include "epihawkes/rng.hpp"

namespace epihawkes {

// Directed infection links between age groups: entry (i, j) counts
// infections in group j caused by an infector in group i.
struct LinkCountMatrix {
  int n = 0;
  std::vector<std::int64_t> counts;

  explicit LinkCountMatrix(int n_ages = 0)
      : n(n_ages), counts(static_cast<std::size_t>(n_ages) * n_ages, 0) {}

  std::int64_t& at(int from, int to) { return counts[static_cast<std::size_t>(from) * n + to]; }
  std::int64_t at(int from, int to) const { return counts[static_cast<std::size_t>(from) * n + to]; }

  std::int64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }
};

// Method A: tally the saved parent of every non-seed event. `log` holds
// seeds first, then events; parent fields index into it.
inline LinkCountMatrix links_method_a(std::span<const MarkedEvent> log, int n_ages) {
  LinkCountMatrix links(n_ages);
  for (const auto& e : log) {
    if (e.parent == MarkedEvent::kNoParent) continue;
    if (e.parent < 0 || e.parent >= static_cast<std::int64_t>(log.size())) {
      throw std::invalid_argument("links_method_a: dangling parent reference");
    }
    links.at(log[static_cast<std::size_t>(e.parent)].age, e.age)++;
  }
  return links;
}

// Parent attribution probabilities for one event over its candidate set:
// proportional to the generation-interval density at the lag times the
// contact rate from the candidate's group. Returns an empty vector when no
// candidate carries positive weight (orphan event).
inline std::vector<double> parent_probabilities(const MarkedEvent& child,
                                                std::span<const MarkedEvent> log,
                                                std::span<const std::size_t> candidates,
                                                const EpidemicConfig& cfg,
                                                const GammaKernel& gi) {
  std::vector<double> pi(candidates.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& cand = log[candidates[i]];
    if (!(cand.time < child.time)) continue;
    pi[i] = gi.density(child.time - cand.time) * cfg.contacts.at(child.age, cand.age);
    total += pi[i];
  }
  if (!(total > 0.0)) return {};
  for (auto& p : pi) p /= total;
  return pi;
}

inline std::vector<double> parent_probabilities(const MarkedEvent& child,
                                                std::span<const MarkedEvent> log,
                                                std::span<const std::size_t> candidates,
                                                const EpidemicConfig& cfg) {
  return parent_probabilities(child, log, candidates, cfg, GammaKernel(cfg.gi_kernel));
}

namespace detail {

// Candidate parents of an event in subinterval w: seeds plus events in the
// eta preceding subintervals and w itself, strictly earlier in time.
inline std::vector<std::size_t> candidate_window(std::span<const MarkedEvent> log,
                                                 std::size_t child_idx,
                                                 const EpidemicConfig& cfg) {
  const double t_child = log[child_idx].time;
  const int w = interval_index(t_child, cfg.grid);
  const double window_start = cfg.grid.boundary(std::max(0, w - 1 - cfg.eta));
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (i == child_idx) continue;
    const auto& cand = log[i];
    if (!(cand.time < t_child)) continue;
    if (cand.time < cfg.grid.t0()) {
      out.push_back(i);  // seeds are always eligible
    } else if (cand.time >= window_start) {
      out.push_back(i);
    }
  }
  return out;
}

}  // namespace detail

struct MethodBResult {
  std::vector<LinkCountMatrix> draws;
  std::int64_t orphan_events = 0;
};

// Method B: repeatedly sample every non-seed event's parent from its
// multinomial attribution distribution and tally the links.
inline MethodBResult links_method_b(std::span<const MarkedEvent> log, const EpidemicConfig& cfg,
                                    int n_draws, RngStream& rng) {
  if (n_draws < 1) throw std::invalid_argument("links_method_b: n_draws >= 1");
  const GammaKernel gi(cfg.gi_kernel);

  // Sort child processing by time; candidates and probabilities are fixed,
  // so this just makes orphan accounting deterministic.
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (log[i].time >= cfg.grid.t0()) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return log[a].time < log[b].time; });

  struct ChildAttribution {
    std::size_t child;
    std::vector<std::size_t> candidates;
    std::vector<double> pi;
  };
  std::vector<ChildAttribution> attributions;
  std::int64_t orphans = 0;
  for (std::size_t i : order) {
    auto candidates = detail::candidate_window(log, i, cfg);
    auto pi = parent_probabilities(log[i], log, candidates, cfg, gi);
    if (pi.empty()) {
      ++orphans;
      continue;
    }
    attributions.push_back({i, std::move(candidates), std::move(pi)});
  }

  MethodBResult result;
  result.orphan_events = orphans;
  result.draws.reserve(static_cast<std::size_t>(n_draws));
  for (int d = 0; d < n_draws; ++d) {
    LinkCountMatrix links(cfg.n_ages());
    for (const auto& attr : attributions) {
      const int pick = rng.categorical(attr.pi);
      const auto& parent = log[attr.candidates[static_cast<std::size_t>(pick)]];
      links.at(parent.age, log[attr.child].age)++;
    }
    result.draws.push_back(std::move(links));
  }
  return result;
}

}  // namespace epihawkes

#endif  // EPIHAWKES_LINEAGE_HPP_
