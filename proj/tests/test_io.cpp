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

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "epihawkes/io.hpp"
#include "epihawkes/sim.hpp"

namespace epihawkes {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("epihawkes_test_" + std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
  static inline int counter_ = 0;
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

const char* kConfigJson = R"({
  "age_bands": ["0-59", "60+"],
  "populations": [206969, 42104],
  "contact_matrix": [6.81, 0.66, 2.14, 1.27],
  "beta": 0.5,
  "gi_kernel": {"mean": 6.7, "sd": 1.8},
  "obs_kernel": {"mean": 8.8, "sd": 4.1},
  "grid": {"t0": 42.0, "width": 7.0, "k": 16},
  "gamma_prior": {"min": 0.0, "max": 0.5},
  "d_bounds": [10.0, 20.0],
  "v_bounds": [0.0001, 0.5],
  "eta": 3,
  "initial_susceptibles": [201995, 40434]
})";

TEST(Config, LoadValidateRoundTrip) {
  TempDir dir;
  write_file(dir.file("config.json"), kConfigJson);
  const auto cfg = load_config(dir.file("config.json"));
  EXPECT_EQ(cfg.n_ages(), 2);
  EXPECT_EQ(cfg.k(), 16);
  EXPECT_DOUBLE_EQ(cfg.grid.t0(), 42.0);
  EXPECT_DOUBLE_EQ(cfg.contacts.at(1, 0), 2.14);
  const auto j = config_to_json(cfg);
  const auto cfg2 = config_from_json(j);
  EXPECT_EQ(config_to_json(cfg2).dump(), j.dump());
}

TEST(Config, ReportsBadFields) {
  TempDir dir;
  write_file(dir.file("bad.json"), R"({"age_bands": ["a"]})");
  EXPECT_THROW(load_config(dir.file("bad.json")), IoError);
  write_file(dir.file("nojson.json"), "not json");
  EXPECT_THROW(load_config(dir.file("nojson.json")), IoError);
  EXPECT_THROW(load_config(dir.file("missing.json")), IoError);
}

TEST(CsvRoundTrips, ObservedSeedsEventsGammas) {
  TempDir dir;
  ObservedSeries obs(3, 2);
  obs.at(1, 0) = 4;
  obs.at(2, 1) = 9;
  write_observed_csv(dir.file("obs.csv"), obs);
  const auto obs2 = read_observed_csv(dir.file("obs.csv"), 3, 2);
  EXPECT_EQ(obs.counts, obs2.counts);

  SeedHistory seeds;
  seeds.events.push_back({1.2345678901234567, 0, MarkedEvent::kNoParent});
  seeds.events.push_back({20.99999999999, 1, MarkedEvent::kNoParent});
  write_seeds_csv(dir.file("seeds.csv"), seeds);
  const auto seeds2 = read_seeds_csv(dir.file("seeds.csv"));
  ASSERT_EQ(seeds2.events.size(), 2u);
  EXPECT_EQ(seeds2.events[0].time, seeds.events[0].time);  // exact round trip
  EXPECT_EQ(seeds2.events[1].time, seeds.events[1].time);

  const std::vector<MarkedEvent> log{{1.0, 0, -1}, {5.5, 1, 0}};
  write_events_csv(dir.file("events.csv"), log);
  const auto log2 = read_events_csv(dir.file("events.csv"));
  ASSERT_EQ(log2.size(), 2u);
  EXPECT_EQ(log2[1].parent, 0);
  EXPECT_EQ(log2[1].time, 5.5);

  const std::vector<std::vector<double>> gammas{{0.2, 0.17}, {0.21, 0.18}};
  write_gammas_csv(dir.file("g.csv"), gammas);
  const auto gammas2 = read_gammas_csv(dir.file("g.csv"), 2, 2);
  EXPECT_EQ(gammas, gammas2);
}

TEST(CsvReaders, RejectMalformedInput) {
  TempDir dir;
  write_file(dir.file("bad.csv"), "wrong,header\n1,2\n");
  EXPECT_THROW(read_observed_csv(dir.file("bad.csv"), 2, 1), IoError);
  write_file(dir.file("bad2.csv"), "interval,age,count\n1,0,-3\n");
  EXPECT_THROW(read_observed_csv(dir.file("bad2.csv"), 2, 1), IoError);
  write_file(dir.file("bad3.csv"), "interval,age,count\n5,0,3\n");
  EXPECT_THROW(read_observed_csv(dir.file("bad3.csv"), 2, 1), IoError);
  write_file(dir.file("bad4.csv"), "interval,age,gamma\n1,0,0.2\n");
  EXPECT_THROW(read_gammas_csv(dir.file("bad4.csv"), 2, 1), IoError);  // missing rows
}

TEST(Dates, CivilConversionRoundTrip) {
  EXPECT_EQ(days_from_civil(1970, 1, 1), 0);
  EXPECT_EQ(days_from_civil(2021, 12, 11) - days_from_civil(2021, 12, 4), 7);
  EXPECT_EQ(civil_from_days(parse_iso_date("2021-12-11")), "2021-12-11");
  EXPECT_EQ(civil_from_days(parse_iso_date("2020-02-29")), "2020-02-29");
  EXPECT_THROW(parse_iso_date("2021/12/11"), IoError);
  EXPECT_THROW(parse_iso_date("2021-13-01"), IoError);
}

IntervalGrid weekly_grid() { return IntervalGrid::uniform(0.0, 7.0, 2); }

TEST(IngestCases, EmptyFileGivesZeroSeries) {
  TempDir dir;
  write_file(dir.file("cases.csv"), "date,age_band,count\n");
  const std::map<std::string, int> band_map{{"0-59", 0}};
  const auto result = ingest_cases(dir.file("cases.csv"), band_map, weekly_grid(), 1, "2021-09-04");
  for (auto y : result.observed.counts) EXPECT_EQ(y, 0);
  EXPECT_TRUE(result.daily.counts.empty());
}

TEST(IngestCases, SingleRowAggregatesToFirstInterval) {
  TempDir dir;
  write_file(dir.file("cases.csv"), "date,age_band,count\n2021-09-05,0-59,5\n");
  const std::map<std::string, int> band_map{{"0-59", 0}};
  const auto result = ingest_cases(dir.file("cases.csv"), band_map, weekly_grid(), 1, "2021-09-04");
  EXPECT_EQ(result.observed.at(1, 0), 5);
  EXPECT_TRUE(result.daily.has(1));
  EXPECT_DOUBLE_EQ(result.daily.count(1, 0), 5.0);
}

TEST(IngestCases, TwoBandsMappedToOneGroupSum) {
  TempDir dir;
  write_file(dir.file("cases.csv"),
             "date,age_band,count\n2021-09-04,00-29,3\n2021-09-04,30-59,4\n");
  const std::map<std::string, int> band_map{{"00-29", 0}, {"30-59", 0}};
  const auto result = ingest_cases(dir.file("cases.csv"), band_map, weekly_grid(), 1, "2021-09-04");
  EXPECT_EQ(result.observed.at(1, 0), 7);
}

TEST(IngestCases, UnknownBandListed) {
  TempDir dir;
  write_file(dir.file("cases.csv"), "date,age_band,count\n2021-09-04,mystery,3\n");
  const std::map<std::string, int> band_map{{"0-59", 0}};
  try {
    ingest_cases(dir.file("cases.csv"), band_map, weekly_grid(), 1, "2021-09-04");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("mystery"), std::string::npos);
  }
}

TEST(IngestCases, GapErrorNamesMissingDates) {
  TempDir dir;
  write_file(dir.file("cases.csv"),
             "date,age_band,count\n2021-09-04,0-59,1\n2021-09-06,0-59,1\n");
  const std::map<std::string, int> band_map{{"0-59", 0}};
  try {
    ingest_cases(dir.file("cases.csv"), band_map, weekly_grid(), 1, "2021-09-04");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("2021-09-05"), std::string::npos);
  }
}

DailySeries flat_daily(double value, int n_ages = 1, std::int64_t first = -14, int days = 21) {
  DailySeries d;
  d.first_offset = first;
  d.n_ages = n_ages;
  d.counts.assign(static_cast<std::size_t>(days),
                  std::vector<double>(static_cast<std::size_t>(n_ages), value));
  return d;
}

TEST(InitSeedHistory, AllZeroCountsGiveEmptyHistory) {
  const auto seeds = init_seed_history(flat_daily(0.0), 0.5, weekly_grid());
  EXPECT_TRUE(seeds.events.empty());
}

TEST(InitSeedHistory, ScalesByInverseBetaSevenDaysEarlier) {
  // 10 cases on day d map to 20 latent infections on day d - 7.
  DailySeries daily = flat_daily(0.0);
  daily.counts[static_cast<std::size_t>(3 - daily.first_offset)][0] = 10.0;  // day offset 3
  const auto seeds = init_seed_history(daily, 0.5, weekly_grid());
  ASSERT_EQ(seeds.events.size(), 20u);
  for (const auto& e : seeds.events) {
    EXPECT_GE(e.time, -4.0);
    EXPECT_LT(e.time, -3.0);
  }
}

TEST(InitSeedHistory, CountsMatchScaledSum) {
  const double beta = 0.5;
  DailySeries daily = flat_daily(0.0);
  std::int64_t expected = 0;
  for (std::int64_t off = -14; off <= 6; ++off) {
    const double c = static_cast<double>((off + 20) % 7);
    daily.counts[static_cast<std::size_t>(off - daily.first_offset)][0] = c;
  }
  for (int i = 1; i <= 21; ++i) {
    expected += static_cast<std::int64_t>(std::llrint(daily.count(-i + 7, 0) / beta));
  }
  const auto seeds = init_seed_history(daily, beta, weekly_grid());
  EXPECT_EQ(static_cast<std::int64_t>(seeds.events.size()), expected);
  for (const auto& e : seeds.events) EXPECT_LT(e.time, 0.0);
}

TEST(InitSeedHistory, MissingDaysNamed) {
  DailySeries daily = flat_daily(1.0, 1, -10, 17);  // starts at -10, missing -14..-11
  try {
    init_seed_history(daily, 0.5, weekly_grid());
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("-14"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("-11"), std::string::npos);
  }
  EXPECT_THROW(init_seed_history(flat_daily(1.0), 0.0, weekly_grid()), std::invalid_argument);
}

// Weekly heuristic: seed week s receives the following week's counts / beta,
// matching the uniform spread over [(i+2)*7+21, (i+3)*7+21) on the
// inference grid starting at day 42.
TEST(InitSeedHistoryWeekly, PlacementWindowsAndCounts) {
  const auto grid = IntervalGrid::uniform(42.0, 7.0, 16);
  const std::vector<std::vector<std::int64_t>> pre{{6}, {8}};  // weeks [28,35), [35,42)
  const std::vector<std::int64_t> y1{10};                      // week [42,49)
  const auto seeds = init_seed_history_weekly(pre, y1, 0.5, grid);
  ASSERT_EQ(seeds.events.size(), static_cast<std::size_t>(2 * (6 + 8 + 10)));
  int in_w1 = 0, in_w2 = 0, in_w3 = 0;
  for (const auto& e : seeds.events) {
    if (e.time >= 21.0 && e.time < 28.0) ++in_w1;
    else if (e.time >= 28.0 && e.time < 35.0) ++in_w2;
    else if (e.time >= 35.0 && e.time < 42.0) ++in_w3;
    else FAIL() << "seed outside the three-week window: " << e.time;
  }
  EXPECT_EQ(in_w1, 12);  // obs week [28,35): 6 / 0.5
  EXPECT_EQ(in_w2, 16);
  EXPECT_EQ(in_w3, 20);
}

TEST(InitSusceptibles, KnownCases) {
  const std::vector<std::int64_t> pops{1000, 500};
  const std::vector<double> none{0.0, 0.0};
  EXPECT_EQ(init_susceptibles(pops, none, 0.0), (std::vector<std::int64_t>{1000, 500}));
  const std::vector<double> all{1.0, 1.0};
  EXPECT_EQ(init_susceptibles(pops, all, 0.0), (std::vector<std::int64_t>{0, 0}));
  // Discounted antibody protection: (1 - p + 0.2) N.
  const std::vector<double> p{0.9, 0.8};
  const auto s = init_susceptibles(pops, p, 0.2);
  EXPECT_EQ(s[0], 300);
  EXPECT_EQ(s[1], 200);
  EXPECT_THROW(init_susceptibles(pops, p, 0.9), std::invalid_argument);
}

TEST(InitSusceptibles, TwiceReportedRule) {
  const std::vector<std::int64_t> pops{1000};
  const std::vector<double> p{0.9};
  const std::vector<std::int64_t> reported_ok{40};
  EXPECT_NO_THROW(init_susceptibles(pops, p, 0.0, reported_ok));
  const std::vector<std::int64_t> reported_bad{60};
  EXPECT_THROW(init_susceptibles(pops, p, 0.0, reported_bad), IoError);
}

TEST(Archive, RoundTripPreservesForecastInputs) {
  EpidemicConfig cfg;
  cfg.ages = {{"all"}, {50000}};
  cfg.contacts = ContactMatrix(1, {2.0});
  cfg.grid = IntervalGrid::uniform(21.0, 7.0, 5);
  cfg.beta = 0.5;
  cfg.gi_kernel = {6.7, 1.8};
  cfg.obs_kernel = {8.8, 4.1};
  cfg.initial_susceptibles = {50000};
  cfg.gamma_prior = {0.0, 0.5};
  cfg.d_bounds = {10.0, 20.0};
  cfg.v_bounds = {1e-4, 0.5};
  SeedHistory seeds;
  for (int i = 0; i < 60; ++i) seeds.events.push_back({21.0 * (i + 0.5) / 60.0, 0, -1});
  const std::vector<std::vector<double>> gammas(5, {0.3});
  const auto synth = generate_synthetic(cfg, gammas, seeds, 0.01, 4);
  FilterConfig fcfg;
  fcfg.n_particles = 60;
  fcfg.seed = 10;
  const auto result = run_filter(cfg, fcfg, seeds, synth.observed);

  TempDir dir;
  write_particle_archive(dir.file("particles.bin"), cfg, seeds, result.particles,
                         result.posterior_weights, fcfg.seed);
  const auto archive = read_particle_archive(dir.file("particles.bin"));
  ASSERT_EQ(archive.particles.size(), result.particles.size());
  EXPECT_EQ(archive.seeds.events.size(), seeds.events.size());
  for (std::size_t j = 0; j < archive.particles.size(); ++j) {
    EXPECT_DOUBLE_EQ(archive.particles[j].log_d, result.particles[j].log_d);
    EXPECT_DOUBLE_EQ(archive.particles[j].log_v, result.particles[j].log_v);
    EXPECT_EQ(archive.particles[j].susceptibles, result.particles[j].susceptibles);
    EXPECT_EQ(archive.particles[j].gammas, result.particles[j].gammas);
    EXPECT_DOUBLE_EQ(archive.weights[j], result.posterior_weights[j]);
  }

  // The archived view must forecast identically to the live particles.
  const auto live = forecast_next_interval(cfg, result.particles, result.posterior_weights,
                                           seeds, 77);
  const auto loaded = forecast_next_interval(archive.cfg, archive.particles, archive.weights,
                                             archive.seeds, 77);
  EXPECT_DOUBLE_EQ(live.aggregate.mean, loaded.aggregate.mean);
  EXPECT_DOUBLE_EQ(live.aggregate.lo95, loaded.aggregate.lo95);
  EXPECT_DOUBLE_EQ(live.aggregate.hi95, loaded.aggregate.hi95);
  EXPECT_DOUBLE_EQ(live.per_age[0].median, loaded.per_age[0].median);
}

TEST(Archive, RejectsForeignFiles) {
  TempDir dir;
  write_file(dir.file("junk.bin"), "this is not an archive");
  EXPECT_THROW(read_particle_archive(dir.file("junk.bin")), IoError);
}

TEST(Manifest, HashStableAndSeedRecorded) {
  TempDir dir;
  write_file(dir.file("config.json"), kConfigJson);
  const auto cfg = load_config(dir.file("config.json"));
  const auto m1 = make_manifest("fit", cfg, 42, 1000, {{"observed", "obs.csv"}});
  const auto m2 = make_manifest("fit", cfg, 42, 1000, {{"observed", "obs.csv"}});
  EXPECT_EQ(m1.dump(), m2.dump());
  EXPECT_EQ(m1.at("seed").get<int>(), 42);
  EXPECT_EQ(m1.at("config_hash"), m2.at("config_hash"));
  const auto prefix = m1.at("config_hash").get<std::string>().substr(0, 8);
  EXPECT_EQ(prefix, "fnv1a64:");
}

}  // namespace
}  // namespace epihawkes
