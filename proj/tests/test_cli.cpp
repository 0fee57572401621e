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

// End-to-end command line checks against the built binary.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "epihawkes/io.hpp"

namespace epihawkes {
namespace {

namespace fs = std::filesystem;

#ifndef EPIHAWKES_CLI_PATH
#error "EPIHAWKES_CLI_PATH must point at the built binary"
#endif

struct CommandResult {
  int exit_code = -1;
  std::string stderr_text;
};

CommandResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path err_file = scratch / "stderr.txt";
  const std::string cmd = std::string(EPIHAWKES_CLI_PATH) + " " + args + " 2>" + err_file.string() +
                          " >/dev/null";
  const int raw = std::system(cmd.c_str());
  CommandResult result;
  result.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream err(err_file);
  std::stringstream ss;
  ss << err.rdbuf();
  result.stderr_text = ss.str();
  return result;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("epihawkes_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
    write_config();
    write_inputs();
  }
  void TearDown() override { fs::remove_all(dir_); }

  void write_config() {
    std::ofstream out(file("config.json"));
    out << R"({
      "age_bands": ["0-59", "60+"],
      "populations": [40000, 10000],
      "contact_matrix": [6.81, 0.66, 2.14, 1.27],
      "beta": 0.5,
      "gi_kernel": {"mean": 6.7, "sd": 1.8},
      "obs_kernel": {"mean": 8.8, "sd": 4.1},
      "grid": {"t0": 21.0, "width": 7.0, "k": 5},
      "gamma_prior": {"min": 0.0, "max": 0.5},
      "d_bounds": [10.0, 20.0],
      "v_bounds": [0.0001, 0.5],
      "eta": 3,
      "initial_susceptibles": [28000, 7000]
    })";
  }

  void write_inputs() {
    SeedHistory seeds;
    for (int i = 0; i < 120; ++i) {
      seeds.events.push_back({21.0 * (i + 0.5) / 120.0, i % 5 == 0 ? 1 : 0, MarkedEvent::kNoParent});
    }
    write_seeds_csv(file("seeds.csv"), seeds);
    std::vector<std::vector<double>> gammas(5, std::vector<double>{0.3, 0.25});
    write_gammas_csv(file("gammas.csv"), gammas);
  }

  std::string file(const std::string& name) const { return (dir_ / name).string(); }
  std::string quoted(const std::string& name) const { return "\"" + file(name) + "\""; }

  fs::path dir_;
};

TEST_F(CliTest, SimulateFitForecastPipeline) {
  auto sim = run_cli("simulate --config " + quoted("config.json") + " --truth-gammas " +
                         quoted("gammas.csv") + " --seeds " + quoted("seeds.csv") + " --out " +
                         quoted("sim") + " --seed 5",
                     dir_);
  ASSERT_EQ(sim.exit_code, 0) << sim.stderr_text;
  EXPECT_TRUE(fs::exists(dir_ / "sim" / "latent_events.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "sim" / "observed.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "sim" / "run_manifest.json"));

  auto fit = run_cli("fit --config " + quoted("config.json") + " --observed " +
                         quoted("sim/observed.csv") + " --seeds " + quoted("seeds.csv") +
                         " --particles 80 --seed 7 --lag 4 --out " + quoted("fit") +
                         " --dump-events 2",
                     dir_);
  ASSERT_EQ(fit.exit_code, 0) << fit.stderr_text;
  EXPECT_TRUE(fs::exists(dir_ / "fit" / "summary.json"));
  EXPECT_TRUE(fs::exists(dir_ / "fit" / "intensity.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "fit" / "particles.bin"));
  EXPECT_TRUE(fs::exists(dir_ / "fit" / "run_manifest.json"));
  EXPECT_TRUE(fs::exists(dir_ / "fit" / "events_p000.csv"));

  const auto summary = load_json(file("fit/summary.json"));
  EXPECT_EQ(summary.at("n_particles").get<int>(), 80);
  EXPECT_EQ(summary.at("gamma").size(), 5u);

  auto forecast = run_cli("forecast --archive " + quoted("fit/particles.bin") + " --out " +
                              quoted("fc") + " --seed 3",
                          dir_);
  ASSERT_EQ(forecast.exit_code, 0) << forecast.stderr_text;
  const auto fc = load_json(file("fc/forecast.json"));
  EXPECT_EQ(fc.at("per_age").size(), 2u);
  EXPECT_GE(fc.at("aggregate").at("hi95").get<double>(), fc.at("aggregate").at("lo95").get<double>());

  auto lineage_a = run_cli("lineage --events " + quoted("sim/latent_events.csv") +
                               " --method a --out " + quoted("links_a.json"),
                           dir_);
  ASSERT_EQ(lineage_a.exit_code, 0) << lineage_a.stderr_text;
  const auto links_a = load_json(file("links_a.json"));
  EXPECT_EQ(links_a.at("method"), "a");
  EXPECT_EQ(links_a.at("counts").size(), 2u);

  auto lineage_b = run_cli("lineage --events " + quoted("sim/latent_events.csv") +
                               " --method b --draws 5 --config " + quoted("config.json") +
                               " --out " + quoted("links_b.json") + " --seed 2",
                           dir_);
  ASSERT_EQ(lineage_b.exit_code, 0) << lineage_b.stderr_text;
  const auto links_b = load_json(file("links_b.json"));
  EXPECT_EQ(links_b.at("draws").get<int>(), 5);
  EXPECT_EQ(links_b.at("median").size(), 2u);

  auto metrics = run_cli("metrics --summary-a " + quoted("fit/summary.json") + " --summary-u " +
                             quoted("fit/summary.json") + " --out " + quoted("pae.json"),
                         dir_);
  ASSERT_EQ(metrics.exit_code, 0) << metrics.stderr_text;
  const auto pae_json = load_json(file("pae.json"));
  EXPECT_DOUBLE_EQ(pae_json.at("latent_weekly_total").get<double>(), 0.0);

  auto mcse = run_cli("metrics --mcse --summary " + quoted("fit/summary.json") + " --summary " +
                          quoted("fit/summary.json") + " --out " + quoted("mcse.json"),
                      dir_);
  ASSERT_EQ(mcse.exit_code, 0) << mcse.stderr_text;
  const auto mcse_json = load_json(file("mcse.json"));
  ASSERT_EQ(mcse_json.size(), 2u);
  EXPECT_GT(mcse_json.at(0).at("mcse_gamma").at(0).get<double>(), 0.0);
}

// Daily-case ingestion: observed series, seed heuristic and antibody-based
// susceptibles all derived from files.
TEST_F(CliTest, FitFromDailyCases) {
  // Horizon start 2021-12-11; daily data must span 14 days before through
  // the 5-week horizon.
  {
    std::ofstream out(file("daily.csv"));
    out << "date,age_band,count\n";
    const std::int64_t anchor = parse_iso_date("2021-12-11");
    for (std::int64_t day = anchor - 14; day < anchor + 35; ++day) {
      out << civil_from_days(day) << ",young,4\n";
      out << civil_from_days(day) << ",old,2\n";
    }
  }
  {
    std::ofstream out(file("bands.json"));
    out << R"({"young": "0-59", "old": "60+"})";
  }
  {
    std::ofstream out(file("antibody.csv"));
    out << "age,fraction\n0,0.4\n1,0.5\n";
  }
  auto fit = run_cli("fit --config " + quoted("config.json") + " --cases " + quoted("daily.csv") +
                         " --anchor-date 2021-12-11 --band-map " + quoted("bands.json") +
                         " --antibody " + quoted("antibody.csv") +
                         " --antibody-discount 0.1 --enforce-2x --particles 40 --seed 4 --out " +
                         quoted("fit_daily"),
                     dir_);
  ASSERT_EQ(fit.exit_code, 0) << fit.stderr_text;
  const auto summary = load_json(file("fit_daily/summary.json"));
  EXPECT_EQ(summary.at("ages").size(), 2u);
  const auto manifest = load_json(file("fit_daily/run_manifest.json"));
  EXPECT_EQ(manifest.at("inputs").at("cases").get<std::string>(), file("daily.csv"));

  // Conflicting input modes are usage errors.
  auto conflict = run_cli("fit --config " + quoted("config.json") + " --cases " +
                              quoted("daily.csv") + " --anchor-date 2021-12-11 --observed " +
                              quoted("daily.csv") + " --out " + quoted("x"),
                          dir_);
  EXPECT_EQ(conflict.exit_code, 2);
}

// Weekly pre-horizon counts drive the fallback seed heuristic.
TEST_F(CliTest, FitFromWeeklyPreObserved) {
  auto sim = run_cli("simulate --config " + quoted("config.json") + " --truth-gammas " +
                         quoted("gammas.csv") + " --seeds " + quoted("seeds.csv") + " --out " +
                         quoted("sim") + " --seed 5",
                     dir_);
  ASSERT_EQ(sim.exit_code, 0) << sim.stderr_text;
  {
    std::ofstream out(file("pre.csv"));
    out << "week,age,count\n-1,0,30\n-1,1,6\n0,0,35\n0,1,8\n";
  }
  auto fit = run_cli("fit --config " + quoted("config.json") + " --observed " +
                         quoted("sim/observed.csv") + " --pre-observed " + quoted("pre.csv") +
                         " --particles 40 --seed 6 --out " + quoted("fit_pre"),
                     dir_);
  ASSERT_EQ(fit.exit_code, 0) << fit.stderr_text;
  EXPECT_TRUE(fs::exists(dir_ / "fit_pre" / "summary.json"));
}

TEST_F(CliTest, UsageErrorsExitTwoWithSingleLine) {
  auto missing = run_cli("fit --config " + quoted("config.json") + " --out " + quoted("fit"), dir_);
  EXPECT_EQ(missing.exit_code, 2);
  EXPECT_EQ(missing.stderr_text.rfind("error: ", 0), 0u);
  EXPECT_EQ(std::count(missing.stderr_text.begin(), missing.stderr_text.end(), '\n'), 1);

  auto unknown = run_cli("fit --config " + quoted("config.json") + " --nonsense 3", dir_);
  EXPECT_EQ(unknown.exit_code, 2);

  auto bad_method = run_cli("lineage --events x.csv --method q --out y.json", dir_);
  EXPECT_EQ(bad_method.exit_code, 2);

  auto method_b_needs_config =
      run_cli("lineage --events " + quoted("seeds.csv") + " --method b --out y.json", dir_);
  EXPECT_EQ(method_b_needs_config.exit_code, 2);
}

TEST_F(CliTest, RuntimeErrorsExitOne) {
  auto missing_file = run_cli("fit --config " + quoted("config.json") + " --observed " +
                                  quoted("nope.csv") + " --seeds " + quoted("seeds.csv") +
                                  " --particles 10 --out " + quoted("fit"),
                              dir_);
  EXPECT_EQ(missing_file.exit_code, 1);
  EXPECT_EQ(missing_file.stderr_text.rfind("error: ", 0), 0u);
}

// Re-running fit with the manifest's seed reproduces summary.json bytes.
TEST_F(CliTest, ManifestReplayIsByteIdentical) {
  auto sim = run_cli("simulate --config " + quoted("config.json") + " --truth-gammas " +
                         quoted("gammas.csv") + " --seeds " + quoted("seeds.csv") + " --out " +
                         quoted("sim") + " --seed 5",
                     dir_);
  ASSERT_EQ(sim.exit_code, 0) << sim.stderr_text;
  const std::string fit_args = "fit --config " + quoted("config.json") + " --observed " +
                               quoted("sim/observed.csv") + " --seeds " + quoted("seeds.csv") +
                               " --particles 50 --lag 4 ";
  auto fit1 = run_cli(fit_args + "--seed 11 --threads 2 --out " + quoted("fit1"), dir_);
  ASSERT_EQ(fit1.exit_code, 0) << fit1.stderr_text;
  const auto manifest = load_json(file("fit1/run_manifest.json"));
  const auto seed = manifest.at("seed").get<std::uint64_t>();
  auto fit2 = run_cli(fit_args + "--seed " + std::to_string(seed) + " --threads 1 --out " +
                          quoted("fit2"),
                      dir_);
  ASSERT_EQ(fit2.exit_code, 0) << fit2.stderr_text;

  std::ifstream a(file("fit1/summary.json")), b(file("fit2/summary.json"));
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  ASSERT_GT(sa.str().size(), 100u);
  EXPECT_EQ(sa.str(), sb.str());
}

}  // namespace
}  // namespace epihawkes
