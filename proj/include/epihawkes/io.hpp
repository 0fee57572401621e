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

#ifndef EPIHAWKES_IO_HPP_
#define EPIHAWKES_IO_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "epihawkes/core.hpp"
#include "epihawkes/kdpf.hpp"
#include "epihawkes/obs.hpp"
#include "epihawkes/version.hpp"

namespace epihawkes {

using json = nlohmann::json;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad flag combinations and missing inputs; the CLI maps this to exit 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Small formatting / parsing helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double x, const char* fmt) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, x);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    throw IoError(context + ": cannot parse number '" + s + "'");
  }
}

inline std::int64_t parse_int(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    throw IoError(context + ": cannot parse integer '" + s + "'");
  }
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline void expect_header(const std::vector<std::string>& lines, const std::string& header,
                          const std::string& path) {
  if (lines.empty() || trim(lines.front()) != header) {
    throw IoError(path + ": expected header '" + header + "'");
  }
}

}  // namespace detail

// Serial day number of a proleptic Gregorian date (days since 1970-01-01).
inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline std::int64_t parse_iso_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') {
    throw IoError("bad ISO-8601 date '" + s + "'");
  }
  const int y = static_cast<int>(detail::parse_int(s.substr(0, 4), "date"));
  const int m = static_cast<int>(detail::parse_int(s.substr(5, 2), "date"));
  const int d = static_cast<int>(detail::parse_int(s.substr(8, 2), "date"));
  if (m < 1 || m > 12 || d < 1 || d > 31) throw IoError("bad ISO-8601 date '" + s + "'");
  return days_from_civil(y, m, d);
}

inline std::string civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp + (mp < 10 ? 3 : -9);
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02u", static_cast<long long>(y + (m <= 2)), m, d);
  return buf;
}

// ---------------------------------------------------------------------------
// Configuration file
// ---------------------------------------------------------------------------

inline EpidemicConfig config_from_json(const json& j) {
  EpidemicConfig cfg;
  try {
    cfg.ages.labels = j.at("age_bands").get<std::vector<std::string>>();
    cfg.ages.populations = j.at("populations").get<std::vector<std::int64_t>>();
    const auto flat = j.at("contact_matrix").get<std::vector<double>>();
    cfg.contacts = ContactMatrix(static_cast<int>(cfg.ages.labels.size()), flat);
    cfg.beta = j.at("beta").get<double>();
    cfg.gi_kernel = {j.at("gi_kernel").at("mean").get<double>(), j.at("gi_kernel").at("sd").get<double>()};
    cfg.obs_kernel = {j.at("obs_kernel").at("mean").get<double>(), j.at("obs_kernel").at("sd").get<double>()};
    const auto& grid = j.at("grid");
    cfg.grid = IntervalGrid::uniform(grid.at("t0").get<double>(), grid.at("width").get<double>(),
                                     grid.at("k").get<int>());
    cfg.gamma_prior = {j.at("gamma_prior").at("min").get<double>(), j.at("gamma_prior").at("max").get<double>()};
    cfg.d_bounds = {j.at("d_bounds").at(0).get<double>(), j.at("d_bounds").at(1).get<double>()};
    cfg.v_bounds = {j.at("v_bounds").at(0).get<double>(), j.at("v_bounds").at(1).get<double>()};
    cfg.eta = j.at("eta").get<int>();
    cfg.initial_susceptibles = j.at("initial_susceptibles").get<std::vector<std::int64_t>>();
  } catch (const json::exception& e) {
    throw IoError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

inline json config_to_json(const EpidemicConfig& cfg) {
  json j;
  j["age_bands"] = cfg.ages.labels;
  j["populations"] = cfg.ages.populations;
  j["contact_matrix"] = cfg.contacts.entries;
  j["beta"] = cfg.beta;
  j["gi_kernel"] = {{"mean", cfg.gi_kernel.mean}, {"sd", cfg.gi_kernel.sd}};
  j["obs_kernel"] = {{"mean", cfg.obs_kernel.mean}, {"sd", cfg.obs_kernel.sd}};
  j["grid"] = {{"t0", cfg.grid.t0()},
               {"width", cfg.grid.width(1)},
               {"k", cfg.grid.k()}};
  j["gamma_prior"] = {{"min", cfg.gamma_prior.min}, {"max", cfg.gamma_prior.max}};
  j["d_bounds"] = {cfg.d_bounds.min, cfg.d_bounds.max};
  j["v_bounds"] = {cfg.v_bounds.min, cfg.v_bounds.max};
  j["eta"] = cfg.eta;
  j["initial_susceptibles"] = cfg.initial_susceptibles;
  return j;
}

inline EpidemicConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// CSV schemas
// ---------------------------------------------------------------------------

// observed.csv: interval,age,count (interval 1-based, age 0-based index)
inline ObservedSeries read_observed_csv(const std::string& path, int k, int n_ages) {
  const auto lines = detail::read_lines(path);
  detail::expect_header(lines, "interval,age,count", path);
  ObservedSeries out(k, n_ages);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    const auto f = detail::split_csv_line(lines[i]);
    if (f.size() != 3) throw IoError(path + ": row " + std::to_string(i + 1) + " needs 3 fields");
    const auto n = detail::parse_int(f[0], path);
    const auto a = detail::parse_int(f[1], path);
    const auto c = detail::parse_int(f[2], path);
    if (n < 1 || n > k) throw IoError(path + ": interval " + std::to_string(n) + " outside 1.." + std::to_string(k));
    if (a < 0 || a >= n_ages) throw IoError(path + ": age index " + std::to_string(a) + " out of range");
    if (c < 0) throw IoError(path + ": negative count");
    out.at(static_cast<int>(n), static_cast<int>(a)) += c;
  }
  return out;
}

inline void write_observed_csv(const std::string& path, const ObservedSeries& obs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "interval,age,count\n";
  for (int n = 1; n <= obs.k; ++n) {
    for (int a = 0; a < obs.n_ages; ++a) {
      out << n << ',' << a << ',' << obs.at(n, a) << '\n';
    }
  }
}

// seeds.csv: time,age
inline SeedHistory read_seeds_csv(const std::string& path) {
  const auto lines = detail::read_lines(path);
  detail::expect_header(lines, "time,age", path);
  SeedHistory seeds;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    const auto f = detail::split_csv_line(lines[i]);
    if (f.size() != 2) throw IoError(path + ": row " + std::to_string(i + 1) + " needs 2 fields");
    MarkedEvent e;
    e.time = detail::parse_double(f[0], path);
    e.age = static_cast<std::int32_t>(detail::parse_int(f[1], path));
    seeds.events.push_back(e);
  }
  return seeds;
}

inline void write_seeds_csv(const std::string& path, const SeedHistory& seeds) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "time,age\n";
  for (const auto& e : seeds.events) {
    out << detail::format_double(e.time, "%.17g") << ',' << e.age << '\n';
  }
}

// latent_events.csv: time,age,parent_id. Seeds appear first with parent -1;
// parent_id indexes rows of the same file.
inline void write_events_csv(const std::string& path, std::span<const MarkedEvent> log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "time,age,parent_id\n";
  for (const auto& e : log) {
    out << detail::format_double(e.time, "%.17g") << ',' << e.age << ',' << e.parent << '\n';
  }
}

inline std::vector<MarkedEvent> read_events_csv(const std::string& path) {
  const auto lines = detail::read_lines(path);
  detail::expect_header(lines, "time,age,parent_id", path);
  std::vector<MarkedEvent> log;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    const auto f = detail::split_csv_line(lines[i]);
    if (f.size() != 3) throw IoError(path + ": row " + std::to_string(i + 1) + " needs 3 fields");
    MarkedEvent e;
    e.time = detail::parse_double(f[0], path);
    e.age = static_cast<std::int32_t>(detail::parse_int(f[1], path));
    e.parent = detail::parse_int(f[2], path);
    log.push_back(e);
  }
  return log;
}

// truth gammas csv: interval,age,gamma (k rows per age)
inline std::vector<std::vector<double>> read_gammas_csv(const std::string& path, int k, int n_ages) {
  const auto lines = detail::read_lines(path);
  detail::expect_header(lines, "interval,age,gamma", path);
  std::vector<std::vector<double>> g(static_cast<std::size_t>(k),
                                     std::vector<double>(static_cast<std::size_t>(n_ages), -1.0));
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    const auto f = detail::split_csv_line(lines[i]);
    if (f.size() != 3) throw IoError(path + ": row " + std::to_string(i + 1) + " needs 3 fields");
    const auto n = detail::parse_int(f[0], path);
    const auto a = detail::parse_int(f[1], path);
    if (n < 1 || n > k || a < 0 || a >= n_ages) throw IoError(path + ": index out of range");
    g[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(a)] = detail::parse_double(f[2], path);
  }
  for (int n = 1; n <= k; ++n) {
    for (int a = 0; a < n_ages; ++a) {
      if (g[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(a)] < 0.0) {
        throw IoError(path + ": missing gamma for interval " + std::to_string(n) + ", age " + std::to_string(a));
      }
    }
  }
  return g;
}

inline void write_gammas_csv(const std::string& path, const std::vector<std::vector<double>>& gammas) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "interval,age,gamma\n";
  for (std::size_t n = 0; n < gammas.size(); ++n) {
    for (std::size_t a = 0; a < gammas[n].size(); ++a) {
      out << (n + 1) << ',' << a << ',' << detail::format_double(gammas[n][a], "%.17g") << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Case ingestion (date,age_band,count) and initialization heuristics
// ---------------------------------------------------------------------------

// Daily counts per model age group on integer days relative to the horizon
// start: day offset i covers model time [t0 + i, t0 + i + 1).
struct DailySeries {
  std::int64_t first_offset = 0;
  int n_ages = 0;
  std::vector<std::vector<double>> counts;  // [day][age]

  bool has(std::int64_t offset) const {
    return offset >= first_offset &&
           offset < first_offset + static_cast<std::int64_t>(counts.size());
  }
  double count(std::int64_t offset, int age) const {
    return counts[static_cast<std::size_t>(offset - first_offset)][static_cast<std::size_t>(age)];
  }
};

struct IngestResult {
  ObservedSeries observed;
  DailySeries daily;
};

// Aggregates a daily case table to the interval grid and keeps the daily
// series for seeding. `anchor_date` is the calendar date whose day starts at
// model time t0; `band_map` maps CSV band labels to model group indices.
inline IngestResult ingest_cases(const std::string& path,
                                 const std::map<std::string, int>& band_map,
                                 const IntervalGrid& grid, int n_ages,
                                 const std::string& anchor_date) {
  const auto lines = detail::read_lines(path);
  detail::expect_header(lines, "date,age_band,count", path);
  const std::int64_t anchor = parse_iso_date(anchor_date);

  std::map<std::int64_t, std::vector<double>> by_day;
  std::vector<std::string> unknown_bands;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    const auto f = detail::split_csv_line(lines[i]);
    if (f.size() != 3) throw IoError(path + ": row " + std::to_string(i + 1) + " needs 3 fields");
    const std::int64_t day = parse_iso_date(f[0]) - anchor;
    const auto band = band_map.find(f[1]);
    if (band == band_map.end()) {
      if (std::find(unknown_bands.begin(), unknown_bands.end(), f[1]) == unknown_bands.end()) {
        unknown_bands.push_back(f[1]);
      }
      continue;
    }
    const auto c = detail::parse_int(f[2], path);
    if (c < 0) throw IoError(path + ": negative count on row " + std::to_string(i + 1));
    auto& row = by_day[day];
    if (row.empty()) row.assign(static_cast<std::size_t>(n_ages), 0.0);
    row[static_cast<std::size_t>(band->second)] += static_cast<double>(c);
  }
  if (!unknown_bands.empty()) {
    std::string msg = path + ": unknown age bands:";
    for (const auto& b : unknown_bands) msg += " '" + b + "'";
    throw IoError(msg);
  }
  if (by_day.empty()) {
    IngestResult out;
    out.observed = ObservedSeries(grid.k(), n_ages);
    out.daily.n_ages = n_ages;
    return out;
  }

  // Contiguity over the file's span.
  std::vector<std::string> gaps;
  for (std::int64_t d = by_day.begin()->first; d <= by_day.rbegin()->first; ++d) {
    if (!by_day.count(d) && gaps.size() < 10) gaps.push_back(civil_from_days(d + anchor));
  }
  if (!gaps.empty()) {
    std::string msg = path + ": missing dates:";
    for (const auto& g : gaps) msg += " " + g;
    throw IoError(msg);
  }

  IngestResult out;
  out.daily.first_offset = by_day.begin()->first;
  out.daily.n_ages = n_ages;
  for (std::int64_t d = by_day.begin()->first; d <= by_day.rbegin()->first; ++d) {
    out.daily.counts.push_back(by_day[d]);
  }
  out.observed = ObservedSeries(grid.k(), n_ages);
  for (std::int64_t d = out.daily.first_offset;
       d < out.daily.first_offset + static_cast<std::int64_t>(out.daily.counts.size()); ++d) {
    const double t = grid.t0() + static_cast<double>(d);
    if (t < grid.t0() || t >= grid.t_end()) continue;
    const int n = interval_index(t, grid);
    for (int a = 0; a < n_ages; ++a) {
      out.observed.at(n, a) += static_cast<std::int64_t>(std::llround(out.daily.count(d, a)));
    }
  }
  return out;
}

namespace detail {

inline void place_evenly(SeedHistory& seeds, std::int64_t count, double lo, double hi, int age,
                         bool jitter, RngStream* rng) {
  for (std::int64_t j = 0; j < count; ++j) {
    const double frac = jitter ? rng->uniform()
                               : (static_cast<double>(j) + 0.5) / static_cast<double>(count);
    seeds.events.push_back({lo + frac * (hi - lo), static_cast<std::int32_t>(age),
                            MarkedEvent::kNoParent});
  }
}

inline std::int64_t scaled_count(double observed, double beta) {
  // Round-half-to-even, so beta = 0.5 doubling is exact.
  return static_cast<std::int64_t>(std::llrint(observed / beta));
}

}  // namespace detail

// Daily seeding heuristic: an infection is most likely reported seven days
// after it happened, so day -i of the seed window receives the day (-i + 7)
// cases scaled by 1/beta, spread evenly within the day. Needs daily counts
// on offsets -14..6 around the horizon start.
inline SeedHistory init_seed_history(const DailySeries& daily, double beta,
                                     const IntervalGrid& grid, bool jitter = false,
                                     std::uint64_t jitter_seed = 0) {
  if (!(beta > 0.0)) throw std::invalid_argument("init_seed_history: beta must be > 0");
  std::vector<std::string> missing;
  for (int i = 1; i <= 21; ++i) {
    if (!daily.has(-i + 7)) missing.push_back(std::to_string(-i + 7));
  }
  if (!missing.empty()) {
    std::string msg = "init_seed_history: missing daily counts for day offsets:";
    for (const auto& m : missing) msg += " " + m;
    throw IoError(msg);
  }
  RngStream rng(derive_seed(jitter_seed, stream::kSynthSim, 1));
  SeedHistory seeds;
  const double t0 = grid.t0();
  for (int i = 21; i >= 1; --i) {
    for (int a = 0; a < daily.n_ages; ++a) {
      const std::int64_t c = detail::scaled_count(daily.count(-i + 7, a), beta);
      detail::place_evenly(seeds, c, t0 - i, t0 - i + 1, a, jitter, &rng);
    }
  }
  return seeds;
}

// Weekly variant for data without daily resolution: each of the three seed
// weeks receives the following week's observed counts scaled by 1/beta,
// spread evenly over the week. `pre_weeks` holds the two pre-horizon weekly
// rows (earliest first); the third seed week uses the first observed row.
inline SeedHistory init_seed_history_weekly(const std::vector<std::vector<std::int64_t>>& pre_weeks,
                                            std::span<const std::int64_t> first_interval,
                                            double beta, const IntervalGrid& grid,
                                            bool jitter = false, std::uint64_t jitter_seed = 0) {
  if (!(beta > 0.0)) throw std::invalid_argument("init_seed_history_weekly: beta must be > 0");
  if (pre_weeks.size() != 2) {
    throw std::invalid_argument("init_seed_history_weekly: need exactly 2 pre-horizon weekly rows");
  }
  const int n_ages = static_cast<int>(first_interval.size());
  const double w = grid.width(1);
  const double t0 = grid.t0();
  RngStream rng(derive_seed(jitter_seed, stream::kSynthSim, 2));
  SeedHistory seeds;
  for (int s = 0; s < 3; ++s) {
    const double lo = t0 - (3 - s) * w;
    for (int a = 0; a < n_ages; ++a) {
      double source;
      if (s < 2) {
        if (pre_weeks[static_cast<std::size_t>(s)].size() != static_cast<std::size_t>(n_ages)) {
          throw std::invalid_argument("init_seed_history_weekly: pre-week row size mismatch");
        }
        source = static_cast<double>(pre_weeks[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]);
      } else {
        source = static_cast<double>(first_interval[static_cast<std::size_t>(a)]);
      }
      detail::place_evenly(seeds, detail::scaled_count(source, beta), lo, lo + w, a, jitter, &rng);
    }
  }
  return seeds;
}

// Susceptibles at the horizon start from antibody prevalence p_a with an
// immunity-escape discount z: S = round((1 - p_a + z) N_a), clamped to
// [0, N_a]. With `reported_totals` given, enforces the consistency rule that
// each group keeps at least twice its reported cases.
inline std::vector<std::int64_t> init_susceptibles(std::span<const std::int64_t> populations,
                                                   std::span<const double> antibody_fractions,
                                                   double z,
                                                   std::span<const std::int64_t> reported_totals = {}) {
  if (populations.size() != antibody_fractions.size()) {
    throw std::invalid_argument("init_susceptibles: size mismatch");
  }
  double min_p = 1.0;
  for (double p : antibody_fractions) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("init_susceptibles: p outside [0,1]");
    min_p = std::min(min_p, p);
  }
  if (!(z >= 0.0 && z <= min_p)) {
    throw std::invalid_argument("init_susceptibles: z outside [0, min_a p_a]");
  }
  std::vector<std::int64_t> s(populations.size());
  for (std::size_t a = 0; a < populations.size(); ++a) {
    const double raw = (1.0 - antibody_fractions[a] + z) * static_cast<double>(populations[a]);
    s[a] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::llrint(raw)), 0, populations[a]);
  }
  if (!reported_totals.empty()) {
    if (reported_totals.size() != populations.size()) {
      throw std::invalid_argument("init_susceptibles: reported totals size mismatch");
    }
    std::string bad;
    for (std::size_t a = 0; a < populations.size(); ++a) {
      if (s[a] < 2 * reported_totals[a]) bad += " " + std::to_string(a);
    }
    if (!bad.empty()) {
      throw IoError("init_susceptibles: susceptibles below twice the reported cases for groups" + bad);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Result writers
// ---------------------------------------------------------------------------

namespace detail {

inline json triple_json(const QuantileTriple& q) {
  return json{{"median", q.median}, {"lo99", q.lo}, {"hi99", q.hi}};
}

inline json triple_grid(const std::vector<std::vector<QuantileTriple>>& grid) {
  json rows = json::array();
  for (const auto& row : grid) {
    json cells = json::array();
    for (const auto& q : row) cells.push_back(triple_json(q));
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline json triple_list(const std::vector<QuantileTriple>& list) {
  json out = json::array();
  for (const auto& q : list) out.push_back(triple_json(q));
  return out;
}

}  // namespace detail

inline json summary_to_json(const PosteriorSummary& s) {
  json j;
  j["version"] = kVersion;
  j["n_particles"] = s.n_particles;
  j["seed"] = s.seed;
  j["ages"] = s.age_labels;
  json intervals = json::array();
  for (int n = 1; n <= s.k; ++n) intervals.push_back(n);
  j["intervals"] = intervals;
  j["gamma"] = detail::triple_grid(s.gamma);
  j["gamma_mean"] = s.gamma_mean;
  j["gamma_var"] = s.gamma_var;
  j["latent_weekly"] = {{"per_age", detail::triple_grid(s.latent_weekly)},
                        {"total", detail::triple_list(s.latent_weekly_total)},
                        {"per_age_var", s.latent_weekly_var}};
  j["latent_daily"] = {{"days", s.day_times},
                       {"per_age", detail::triple_grid(s.latent_daily)},
                       {"total", detail::triple_list(s.latent_daily_total)}};
  j["R_age"] = detail::triple_grid(s.r_age);
  json r = json::array();
  for (const auto& q : s.r) {
    if (q) r.push_back(detail::triple_json(*q));
    else r.push_back(nullptr);
  }
  j["R"] = r;
  j["d_ci"] = {s.d_ci.lo, s.d_ci.hi};
  j["v_ci"] = {s.v_ci.lo, s.v_ci.hi};
  j["d_median"] = s.d_ci.median;
  j["v_median"] = s.v_ci.median;
  return j;
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(std::string(path) + ": " + e.what());
  }
  return j;
}

// intensity.csv: plot data, 6 significant digits. Age column holds the group
// index or "total".
inline void write_intensity_csv(const std::string& path, const PosteriorSummary& s) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "day,age,median,lo99,hi99\n";
  for (std::size_t d = 0; d < s.day_times.size(); ++d) {
    for (int a = 0; a < s.n_ages; ++a) {
      const auto& q = s.intensity_daily[d][static_cast<std::size_t>(a)];
      out << detail::format_double(s.day_times[d], "%.6g") << ',' << a << ','
          << detail::format_double(q.median, "%.6g") << ','
          << detail::format_double(q.lo, "%.6g") << ','
          << detail::format_double(q.hi, "%.6g") << '\n';
    }
    const auto& q = s.intensity_daily_total[d];
    out << detail::format_double(s.day_times[d], "%.6g") << ",total,"
        << detail::format_double(q.median, "%.6g") << ','
        << detail::format_double(q.lo, "%.6g") << ','
        << detail::format_double(q.hi, "%.6g") << '\n';
  }
}

inline json forecast_to_json(const ForecastSummary& f, const std::vector<std::string>& ages) {
  json j;
  j["n_samples"] = f.n_samples;
  j["d_hat"] = f.d_hat;
  j["v_hat"] = f.v_hat;
  json per_age = json::array();
  for (std::size_t a = 0; a < f.per_age.size(); ++a) {
    per_age.push_back({{"age", ages[a]},
                       {"mean", f.per_age[a].mean},
                       {"median", f.per_age[a].median},
                       {"lo95", f.per_age[a].lo95},
                       {"hi95", f.per_age[a].hi95}});
  }
  j["per_age"] = per_age;
  j["aggregate"] = {{"mean", f.aggregate.mean},
                    {"median", f.aggregate.median},
                    {"lo95", f.aggregate.lo95},
                    {"hi95", f.aggregate.hi95}};
  return j;
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline json make_manifest(const std::string& subcommand, const EpidemicConfig& cfg,
                          std::uint64_t seed, int n_particles, const json& inputs) {
  json j;
  j["subcommand"] = subcommand;
  j["config_hash"] = "fnv1a64:" + hex64(fnv1a64(config_to_json(cfg).dump()));
  j["seed"] = seed;
  j["particles"] = n_particles;
  j["versions"] = {{"epihawkes", kVersion}, {"archive_format", kArchiveFormatVersion}};
  j["inputs"] = inputs;
  return j;
}

// ---------------------------------------------------------------------------
// Particle archive (particles.bin)
// ---------------------------------------------------------------------------
//
// Little-endian binary container, forecast-sufficient rather than a full
// dump: per particle it keeps d, v, the full gamma trajectory, the current
// susceptible counts and the latent events of the last eta subintervals
// (earlier subintervals are materialized as empty placeholders on load).
// Layout:
//   bytes 0..3   magic "EHPA"
//   u32          format version
//   u64          length of the JSON meta block
//   bytes        meta: {config, seed, n_particles, k, n_ages, kept_from}
//   u64          number of seed events, then (f64 time, i32 age) each
//   per particle:
//     f64 posterior weight, f64 log_d, f64 log_v
//     k * n_ages f64 gammas (interval-major)
//     n_ages i64 susceptibles
//     i64 next_event_index
//     per kept subinterval (kept_from..k): u64 n_events, then
//       (f64 time, i32 age) each

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("particle archive truncated");
  return v;
}

}  // namespace detail

inline void write_particle_archive(const std::string& path, const EpidemicConfig& cfg,
                                   const SeedHistory& seeds,
                                   std::span<const Particle> particles,
                                   std::span<const double> weights, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  const int k = cfg.k();
  const int kept_from = std::max(1, k - cfg.eta + 1);
  json meta;
  meta["config"] = config_to_json(cfg);
  meta["seed"] = seed;
  meta["n_particles"] = particles.size();
  meta["k"] = k;
  meta["n_ages"] = cfg.n_ages();
  meta["kept_from"] = kept_from;
  const std::string meta_str = meta.dump();

  out.write("EHPA", 4);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(kArchiveFormatVersion));
  detail::write_pod<std::uint64_t>(out, meta_str.size());
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

  detail::write_pod<std::uint64_t>(out, seeds.events.size());
  for (const auto& e : seeds.events) {
    detail::write_pod<double>(out, e.time);
    detail::write_pod<std::int32_t>(out, e.age);
  }

  for (std::size_t j = 0; j < particles.size(); ++j) {
    const Particle& p = particles[j];
    detail::write_pod<double>(out, weights[j]);
    detail::write_pod<double>(out, p.log_d);
    detail::write_pod<double>(out, p.log_v);
    for (int n = 0; n < k; ++n) {
      for (int a = 0; a < cfg.n_ages(); ++a) {
        detail::write_pod<double>(out, p.gammas[static_cast<std::size_t>(n)][static_cast<std::size_t>(a)]);
      }
    }
    for (int a = 0; a < cfg.n_ages(); ++a) {
      detail::write_pod<std::int64_t>(out, p.susceptibles[static_cast<std::size_t>(a)]);
    }
    detail::write_pod<std::int64_t>(out, p.next_event_index);
    for (int n = kept_from; n <= k; ++n) {
      const auto& sample = *p.latent[static_cast<std::size_t>(n - 1)];
      detail::write_pod<std::uint64_t>(out, sample.events.size());
      for (const auto& e : sample.events) {
        detail::write_pod<double>(out, e.time);
        detail::write_pod<std::int32_t>(out, e.age);
      }
    }
  }
}

struct ParticleArchive {
  EpidemicConfig cfg;
  SeedHistory seeds;
  std::vector<Particle> particles;
  std::vector<double> weights;
  std::uint64_t seed = 0;
};

inline ParticleArchive read_particle_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "EHPA") throw IoError(path + ": not a particle archive");
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != static_cast<std::uint32_t>(kArchiveFormatVersion)) {
    throw IoError(path + ": unsupported archive version " + std::to_string(version));
  }
  const auto meta_len = detail::read_pod<std::uint64_t>(in);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw IoError(path + ": truncated meta block");
  json meta;
  try {
    meta = json::parse(meta_str);
  } catch (const json::exception& e) {
    throw IoError(path + ": bad meta block: " + e.what());
  }

  ParticleArchive archive;
  archive.cfg = config_from_json(meta.at("config"));
  archive.seed = meta.at("seed").get<std::uint64_t>();
  const auto n_particles = meta.at("n_particles").get<std::size_t>();
  const int k = meta.at("k").get<int>();
  const int n_ages = meta.at("n_ages").get<int>();
  const int kept_from = meta.at("kept_from").get<int>();

  const auto n_seeds = detail::read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n_seeds; ++i) {
    MarkedEvent e;
    e.time = detail::read_pod<double>(in);
    e.age = detail::read_pod<std::int32_t>(in);
    archive.seeds.events.push_back(e);
  }

  const KernelPair kernels(archive.cfg);
  archive.particles.resize(n_particles);
  archive.weights.resize(n_particles);
  for (std::size_t j = 0; j < n_particles; ++j) {
    Particle& p = archive.particles[j];
    archive.weights[j] = detail::read_pod<double>(in);
    p.w = archive.weights[j];
    p.log_d = detail::read_pod<double>(in);
    p.log_v = detail::read_pod<double>(in);
    p.gammas.assign(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(n_ages)));
    for (int n = 0; n < k; ++n) {
      for (int a = 0; a < n_ages; ++a) {
        p.gammas[static_cast<std::size_t>(n)][static_cast<std::size_t>(a)] = detail::read_pod<double>(in);
      }
    }
    p.susceptibles.resize(static_cast<std::size_t>(n_ages));
    for (int a = 0; a < n_ages; ++a) p.susceptibles[static_cast<std::size_t>(a)] = detail::read_pod<std::int64_t>(in);
    p.next_event_index = detail::read_pod<std::int64_t>(in);
    for (int n = 1; n < kept_from; ++n) {
      auto placeholder = std::make_shared<IntervalSample>();
      placeholder->interval = n;
      placeholder->counts_by_age.assign(static_cast<std::size_t>(n_ages), 0);
      placeholder->mu_contrib.assign(static_cast<std::size_t>(archive.cfg.eta) + 1,
                                     std::vector<double>(static_cast<std::size_t>(n_ages), 0.0));
      p.latent.push_back(std::move(placeholder));
    }
    for (int n = kept_from; n <= k; ++n) {
      auto sample = std::make_shared<IntervalSample>();
      sample->interval = n;
      sample->counts_by_age.assign(static_cast<std::size_t>(n_ages), 0);
      const auto n_events = detail::read_pod<std::uint64_t>(in);
      sample->events.reserve(n_events);
      for (std::uint64_t i = 0; i < n_events; ++i) {
        MarkedEvent e;
        e.time = detail::read_pod<double>(in);
        e.age = detail::read_pod<std::int32_t>(in);
        sample->events.push_back(e);
        sample->counts_by_age[static_cast<std::size_t>(e.age)]++;
      }
      detail::fill_mu_contrib(*sample, archive.cfg, kernels.report);
      p.latent.push_back(std::move(sample));
    }
  }
  return archive;
}

}  // namespace epihawkes

#endif  // EPIHAWKES_IO_HPP_
