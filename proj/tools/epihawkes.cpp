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

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epihawkes/epihawkes.hpp"

namespace fs = std::filesystem;
using epihawkes::json;

namespace {

struct SimulateArgs {
  std::string config, truth_gammas, seeds, out;
  std::uint64_t seed = 1;
  double dispersion = 0.004;
};

struct FitArgs {
  std::string config, observed, out;
  std::string seeds_csv, cases_csv, pre_observed_csv, band_map_json, anchor_date;
  std::string antibody_csv;
  double antibody_discount = 0.0;
  bool enforce_2x = false;
  int particles = 1000;
  std::uint64_t seed = 1;
  int lag = 4;
  int threads = 0;
  bool rescue = false;
  bool jitter_seeds = false;
  bool r_prevalence = false;
  int dump_events = 0;
};

struct ForecastArgs {
  std::string archive, out;
  std::uint64_t seed = 1;
  int threads = 0;
};

struct LineageArgs {
  std::string events, method, config, out;
  int draws = 30;
  std::uint64_t seed = 1;
};

struct MetricsArgs {
  std::string summary_a, summary_u, out;
  std::vector<std::string> mcse_summaries;
  bool mcse = false;
};

void write_manifest_file(const fs::path& path, const json& manifest) {
  epihawkes::write_json(path.string(), manifest);
}

std::vector<epihawkes::MarkedEvent> full_event_log(const epihawkes::SeedHistory& seeds,
                                                   const epihawkes::Particle& p) {
  std::vector<epihawkes::MarkedEvent> log = seeds.events;
  for (const auto& sample : p.latent) {
    log.insert(log.end(), sample->events.begin(), sample->events.end());
  }
  return log;
}

int run_simulate(const SimulateArgs& args) {
  const auto cfg = epihawkes::load_config(args.config);
  const auto gammas = epihawkes::read_gammas_csv(args.truth_gammas, cfg.k(), cfg.n_ages());
  const auto seeds = epihawkes::read_seeds_csv(args.seeds);
  const auto run = epihawkes::generate_synthetic(cfg, gammas, seeds, args.dispersion, args.seed);

  fs::create_directories(args.out);
  std::vector<epihawkes::MarkedEvent> log = seeds.events;
  for (const auto& sample : run.intervals) {
    log.insert(log.end(), sample->events.begin(), sample->events.end());
  }
  epihawkes::write_events_csv((fs::path(args.out) / "latent_events.csv").string(), log);
  epihawkes::write_observed_csv((fs::path(args.out) / "observed.csv").string(), run.observed);

  json inputs = {{"config", args.config}, {"truth_gammas", args.truth_gammas},
                 {"seeds", args.seeds}, {"dispersion", args.dispersion}};
  write_manifest_file(fs::path(args.out) / "run_manifest.json",
                      epihawkes::make_manifest("simulate", cfg, args.seed, 0, inputs));
  return 0;
}

epihawkes::SeedHistory resolve_seeds(const FitArgs& args, const epihawkes::EpidemicConfig& cfg,
                                     const epihawkes::ObservedSeries& observed,
                                     const std::optional<epihawkes::DailySeries>& daily) {
  if (!args.seeds_csv.empty()) {
    return epihawkes::read_seeds_csv(args.seeds_csv);
  }
  if (daily) {
    return epihawkes::init_seed_history(*daily, cfg.beta, cfg.grid, args.jitter_seeds, args.seed);
  }
  if (!args.pre_observed_csv.empty()) {
    const auto lines = epihawkes::detail::read_lines(args.pre_observed_csv);
    epihawkes::detail::expect_header(lines, "week,age,count", args.pre_observed_csv);
    std::vector<std::vector<std::int64_t>> pre(2, std::vector<std::int64_t>(cfg.n_ages(), 0));
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (epihawkes::detail::trim(lines[i]).empty()) continue;
      const auto f = epihawkes::detail::split_csv_line(lines[i]);
      if (f.size() != 3) throw epihawkes::IoError(args.pre_observed_csv + ": rows need 3 fields");
      const auto week = epihawkes::detail::parse_int(f[0], args.pre_observed_csv);
      const auto age = epihawkes::detail::parse_int(f[1], args.pre_observed_csv);
      if (week < -1 || week > 0 || age < 0 || age >= cfg.n_ages()) {
        throw epihawkes::IoError(args.pre_observed_csv + ": week must be -1 or 0, age in range");
      }
      pre[static_cast<std::size_t>(week + 1)][static_cast<std::size_t>(age)] +=
          epihawkes::detail::parse_int(f[2], args.pre_observed_csv);
    }
    return epihawkes::init_seed_history_weekly(pre, observed.row(1), cfg.beta, cfg.grid,
                                               args.jitter_seeds, args.seed);
  }
  throw epihawkes::UsageError("fit: need one of --seeds, --cases or --pre-observed to build the seed history");
}

int run_fit(const FitArgs& args) {
  auto cfg = epihawkes::load_config(args.config);

  std::optional<epihawkes::DailySeries> daily;
  epihawkes::ObservedSeries observed;
  if (!args.cases_csv.empty()) {
    if (!args.observed.empty()) {
      throw epihawkes::UsageError("fit: --cases derives the observed series; do not also pass --observed");
    }
    if (args.anchor_date.empty()) {
      throw epihawkes::UsageError("fit: --cases requires --anchor-date (date of the horizon start)");
    }
    std::map<std::string, int> band_map;
    if (!args.band_map_json.empty()) {
      const auto j = epihawkes::load_json(args.band_map_json);
      for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string target = it.value().get<std::string>();
        const auto pos = std::find(cfg.ages.labels.begin(), cfg.ages.labels.end(), target);
        if (pos == cfg.ages.labels.end()) {
          throw epihawkes::IoError("fit: band map target '" + target + "' is not a config age band");
        }
        band_map[it.key()] = static_cast<int>(pos - cfg.ages.labels.begin());
      }
    } else {
      for (int a = 0; a < cfg.n_ages(); ++a) band_map[cfg.ages.labels[static_cast<std::size_t>(a)]] = a;
    }
    auto ingest = epihawkes::ingest_cases(args.cases_csv, band_map, cfg.grid, cfg.n_ages(),
                                          args.anchor_date);
    observed = std::move(ingest.observed);
    daily = std::move(ingest.daily);
  } else {
    if (args.observed.empty()) throw epihawkes::UsageError("fit: missing --observed (or --cases)");
    observed = epihawkes::read_observed_csv(args.observed, cfg.k(), cfg.n_ages());
  }

  if (!args.antibody_csv.empty()) {
    const auto lines = epihawkes::detail::read_lines(args.antibody_csv);
    epihawkes::detail::expect_header(lines, "age,fraction", args.antibody_csv);
    std::vector<double> p(static_cast<std::size_t>(cfg.n_ages()), 0.0);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (epihawkes::detail::trim(lines[i]).empty()) continue;
      const auto f = epihawkes::detail::split_csv_line(lines[i]);
      if (f.size() != 2) throw epihawkes::IoError(args.antibody_csv + ": rows need 2 fields");
      const auto age = epihawkes::detail::parse_int(f[0], args.antibody_csv);
      if (age < 0 || age >= cfg.n_ages()) throw epihawkes::IoError(args.antibody_csv + ": age out of range");
      p[static_cast<std::size_t>(age)] = epihawkes::detail::parse_double(f[1], args.antibody_csv);
    }
    std::vector<std::int64_t> reported;
    if (args.enforce_2x) {
      reported.assign(static_cast<std::size_t>(cfg.n_ages()), 0);
      for (int n = 1; n <= observed.k; ++n) {
        for (int a = 0; a < cfg.n_ages(); ++a) reported[static_cast<std::size_t>(a)] += observed.at(n, a);
      }
    }
    cfg.initial_susceptibles = epihawkes::init_susceptibles(
        cfg.ages.populations, p, args.antibody_discount,
        args.enforce_2x ? std::span<const std::int64_t>(reported) : std::span<const std::int64_t>());
    cfg.validate();
  }

  const auto seeds = resolve_seeds(args, cfg, observed, daily);

  epihawkes::FilterConfig fcfg;
  fcfg.n_particles = args.particles;
  fcfg.seed = args.seed;
  fcfg.smoothing_lag = args.lag;
  fcfg.n_threads = args.threads;
  fcfg.rescue = args.rescue;
  fcfg.r_weight_by_prevalence = args.r_prevalence;

  auto result = epihawkes::run_filter(cfg, fcfg, seeds, observed);

  fs::create_directories(args.out);
  epihawkes::write_json((fs::path(args.out) / "summary.json").string(),
                        epihawkes::summary_to_json(result.summary));
  epihawkes::write_intensity_csv((fs::path(args.out) / "intensity.csv").string(), result.summary);
  epihawkes::write_particle_archive((fs::path(args.out) / "particles.bin").string(), cfg, seeds,
                                    result.particles, result.posterior_weights, args.seed);

  if (args.dump_events > 0) {
    epihawkes::RngStream rng(epihawkes::derive_seed(args.seed, epihawkes::stream::kLineageDraw, 0));
    const auto idx = epihawkes::resample_multinomial(result.posterior_weights, args.dump_events, rng);
    for (int i = 0; i < args.dump_events; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "events_p%03d.csv", i);
      const auto log = full_event_log(seeds, result.particles[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
      epihawkes::write_events_csv((fs::path(args.out) / name).string(), log);
    }
  }

  json inputs = {{"config", args.config}};
  if (!args.observed.empty()) inputs["observed"] = args.observed;
  if (!args.cases_csv.empty()) inputs["cases"] = args.cases_csv;
  if (!args.seeds_csv.empty()) inputs["seeds"] = args.seeds_csv;
  if (!args.pre_observed_csv.empty()) inputs["pre_observed"] = args.pre_observed_csv;
  inputs["lag"] = args.lag;
  json manifest = epihawkes::make_manifest("fit", cfg, args.seed, args.particles, inputs);
  if (!result.rescues.empty()) {
    json rescues = json::array();
    for (const auto& r : result.rescues) {
      rescues.push_back({{"interval", r.interval}, {"particles_after", r.n_particles_after}});
    }
    manifest["rescues"] = rescues;
  }
  write_manifest_file(fs::path(args.out) / "run_manifest.json", manifest);
  return 0;
}

int run_forecast(const ForecastArgs& args) {
  const auto archive = epihawkes::read_particle_archive(args.archive);
  const auto forecast = epihawkes::forecast_next_interval(
      archive.cfg, archive.particles, archive.weights, archive.seeds, args.seed, args.threads);
  fs::create_directories(args.out);
  epihawkes::write_json((fs::path(args.out) / "forecast.json").string(),
                        epihawkes::forecast_to_json(forecast, archive.cfg.ages.labels));
  json inputs = {{"archive", args.archive}};
  write_manifest_file(fs::path(args.out) / "run_manifest.json",
                      epihawkes::make_manifest("forecast", archive.cfg, args.seed,
                                               static_cast<int>(archive.particles.size()), inputs));
  return 0;
}

json matrix_json(const epihawkes::LinkCountMatrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.n; ++i) {
    json row = json::array();
    for (int j = 0; j < m.n; ++j) row.push_back(m.at(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

int run_lineage(const LineageArgs& args) {
  if (args.method == "b" && args.config.empty()) {
    throw epihawkes::UsageError("lineage: method b needs --config for the kernel and contact matrix");
  }
  const auto log = epihawkes::read_events_csv(args.events);
  json out;
  out["method"] = args.method;
  if (args.method == "a") {
    int n_ages = 0;
    for (const auto& e : log) n_ages = std::max(n_ages, e.age + 1);
    if (!args.config.empty()) {
      n_ages = epihawkes::load_config(args.config).n_ages();
    }
    const auto links = epihawkes::links_method_a(log, n_ages);
    out["counts"] = matrix_json(links);
    out["total_links"] = links.total();
  } else {
    const auto cfg = epihawkes::load_config(args.config);
    epihawkes::RngStream rng(epihawkes::derive_seed(args.seed, epihawkes::stream::kLineageDraw, 0));
    const auto result = epihawkes::links_method_b(log, cfg, args.draws, rng);
    out["draws"] = args.draws;
    out["orphan_events"] = result.orphan_events;
    const int n = cfg.n_ages();
    json median(json::array()), lo(json::array()), hi(json::array()), mean(json::array());
    std::vector<double> values(result.draws.size());
    std::vector<double> w(result.draws.size(), 1.0 / static_cast<double>(result.draws.size()));
    for (int i = 0; i < n; ++i) {
      json med_row(json::array()), lo_row(json::array()), hi_row(json::array()), mean_row(json::array());
      for (int j = 0; j < n; ++j) {
        for (std::size_t d = 0; d < result.draws.size(); ++d) {
          values[d] = static_cast<double>(result.draws[d].at(i, j));
        }
        med_row.push_back(epihawkes::weighted_quantile(values, w, 0.5));
        lo_row.push_back(epihawkes::weighted_quantile(values, w, 0.005));
        hi_row.push_back(epihawkes::weighted_quantile(values, w, 0.995));
        mean_row.push_back(epihawkes::weighted_mean(values, w));
      }
      median.push_back(std::move(med_row));
      lo.push_back(std::move(lo_row));
      hi.push_back(std::move(hi_row));
      mean.push_back(std::move(mean_row));
    }
    out["median"] = median;
    out["lo99"] = lo;
    out["hi99"] = hi;
    out["mean"] = mean;
  }
  epihawkes::write_json(args.out, out);
  return 0;
}

std::vector<double> median_series(const json& triples) {
  std::vector<double> out;
  for (const auto& t : triples) {
    if (t.is_null()) out.push_back(std::numeric_limits<double>::quiet_NaN());
    else out.push_back(t.at("median").get<double>());
  }
  return out;
}

double mean_ci_width(const json& triples) {
  double total = 0.0;
  int n = 0;
  for (const auto& t : triples) {
    if (t.is_null()) continue;
    total += t.at("hi99").get<double>() - t.at("lo99").get<double>();
    ++n;
  }
  return n > 0 ? total / n : 0.0;
}

double pae_skipping_nan(const std::vector<double>& a, const std::vector<double>& u) {
  std::vector<double> ra, ru;
  for (std::size_t i = 0; i < a.size() && i < u.size(); ++i) {
    if (std::isnan(a[i]) || std::isnan(u[i])) continue;
    ra.push_back(a[i]);
    ru.push_back(u[i]);
  }
  return epihawkes::pae(ra, ru);
}

int run_metrics(const MetricsArgs& args) {
  if (args.mcse) {
    if (args.mcse_summaries.empty()) {
      throw epihawkes::UsageError("metrics: --mcse needs at least one --summary");
    }
    json out = json::array();
    for (const auto& path : args.mcse_summaries) {
      const auto s = epihawkes::load_json(path);
      const int n_particles = s.at("n_particles").get<int>();
      const auto gamma_var = s.at("gamma_var").get<std::vector<std::vector<double>>>();
      const auto latent_var =
          s.at("latent_weekly").at("per_age_var").get<std::vector<std::vector<double>>>();
      const std::size_t n_ages = gamma_var.empty() ? 0 : gamma_var.front().size();
      json entry;
      entry["summary"] = path;
      entry["n_particles"] = n_particles;
      json mg = json::array(), ml = json::array();
      for (std::size_t a = 0; a < n_ages; ++a) {
        std::vector<double> gv, lv;
        for (std::size_t n = 0; n < gamma_var.size(); ++n) {
          gv.push_back(gamma_var[n][a]);
          lv.push_back(latent_var[n][a]);
        }
        mg.push_back(epihawkes::mcse(gv, n_particles));
        ml.push_back(epihawkes::mcse(lv, n_particles));
      }
      entry["mcse_gamma"] = mg;
      entry["mcse_latent_weekly"] = ml;
      out.push_back(std::move(entry));
    }
    epihawkes::write_json(args.out, out);
    return 0;
  }

  if (args.summary_a.empty() || args.summary_u.empty()) {
    throw epihawkes::UsageError("metrics: need --summary-a and --summary-u (or --mcse mode)");
  }
  const auto a = epihawkes::load_json(args.summary_a);
  const auto u = epihawkes::load_json(args.summary_u);
  json out;
  out["R"] = pae_skipping_nan(median_series(a.at("R")), median_series(u.at("R")));
  out["latent_weekly_total"] = pae_skipping_nan(median_series(a.at("latent_weekly").at("total")),
                                                median_series(u.at("latent_weekly").at("total")));
  out["latent_daily_total"] = pae_skipping_nan(median_series(a.at("latent_daily").at("total")),
                                               median_series(u.at("latent_daily").at("total")));
  out["mean_ci_width_latent_weekly_total"] = {
      {"a", mean_ci_width(a.at("latent_weekly").at("total"))},
      {"u", mean_ci_width(u.at("latent_weekly").at("total"))}};
  const auto ages_a = a.at("ages").get<std::vector<std::string>>();
  const auto ages_u = u.at("ages").get<std::vector<std::string>>();
  if (ages_a == ages_u) {
    json per_age;
    for (std::size_t i = 0; i < ages_a.size(); ++i) {
      std::vector<double> wa, wu;
      for (const auto& row : a.at("latent_weekly").at("per_age")) {
        wa.push_back(row.at(i).at("median").get<double>());
      }
      for (const auto& row : u.at("latent_weekly").at("per_age")) {
        wu.push_back(row.at(i).at("median").get<double>());
      }
      per_age[ages_a[i]] = {{"latent_weekly", pae_skipping_nan(wa, wu)}};
    }
    out["per_age"] = per_age;
  }
  epihawkes::write_json(args.out, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Age-stratified latent Hawkes epidemic toolkit"};
  app.require_subcommand(1);

  SimulateArgs sim_args;
  auto* sim = app.add_subcommand("simulate", "Generate synthetic latent and observed cases");
  sim->add_option("--config", sim_args.config, "Model config JSON")->required();
  sim->add_option("--truth-gammas", sim_args.truth_gammas, "CSV interval,age,gamma")->required();
  sim->add_option("--seeds", sim_args.seeds, "CSV time,age of triggering infections")->required();
  sim->add_option("--out", sim_args.out, "Output directory")->required();
  sim->add_option("--seed", sim_args.seed, "RNG seed");
  sim->add_option("--dispersion", sim_args.dispersion, "NB dispersion v for observation draws");

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit", "Run the kernel density particle filter");
  fit->add_option("--config", fit_args.config, "Model config JSON")->required();
  fit->add_option("--observed", fit_args.observed, "CSV interval,age,count");
  fit->add_option("--cases", fit_args.cases_csv, "Daily CSV date,age_band,count (implies ingestion)");
  fit->add_option("--anchor-date", fit_args.anchor_date, "Calendar date of the horizon start (with --cases)");
  fit->add_option("--band-map", fit_args.band_map_json, "JSON mapping CSV band labels to config bands");
  fit->add_option("--seeds", fit_args.seeds_csv, "CSV time,age seed history");
  fit->add_option("--pre-observed", fit_args.pre_observed_csv,
                  "CSV week,age,count for the two pre-horizon weeks (weekly seed heuristic)");
  fit->add_option("--antibody", fit_args.antibody_csv, "CSV age,fraction antibody prevalence");
  fit->add_option("--antibody-discount", fit_args.antibody_discount, "Immunity escape discount z");
  fit->add_flag("--enforce-2x", fit_args.enforce_2x, "Require susceptibles >= 2x reported cases");
  fit->add_option("--particles", fit_args.particles, "Particle count");
  fit->add_option("--seed", fit_args.seed, "RNG seed");
  fit->add_option("--lag", fit_args.lag, "Fixed smoothing lag");
  fit->add_option("--threads", fit_args.threads, "Worker threads (0 = hardware)");
  fit->add_flag("--rescue", fit_args.rescue, "Restart a collapsed interval with doubled particles");
  fit->add_flag("--jitter-seeds", fit_args.jitter_seeds, "Random instead of even seed placement");
  fit->add_flag("--r-prevalence", fit_args.r_prevalence,
                "Weight aggregate R by active prevalence instead of incidence");
  fit->add_option("--dump-events", fit_args.dump_events, "Write N resampled particle event logs");
  fit->add_option("--out", fit_args.out, "Output directory")->required();

  ForecastArgs fc_args;
  auto* fc = app.add_subcommand("forecast", "Forecast reported cases one subinterval ahead");
  fc->add_option("--archive", fc_args.archive, "particles.bin from fit")->required();
  fc->add_option("--out", fc_args.out, "Output directory")->required();
  fc->add_option("--seed", fc_args.seed, "RNG seed");
  fc->add_option("--threads", fc_args.threads, "Worker threads (0 = hardware)");

  LineageArgs lin_args;
  auto* lin = app.add_subcommand("lineage", "Who-infected-whom directed link counts");
  lin->add_option("--events", lin_args.events, "CSV time,age,parent_id")->required();
  lin->add_option("--method", lin_args.method, "a (saved parents) or b (multinomial)")
      ->required()
      ->check(CLI::IsMember({"a", "b"}));
  lin->add_option("--draws", lin_args.draws, "Monte Carlo draws for method b");
  lin->add_option("--config", lin_args.config, "Model config JSON (required for method b)");
  lin->add_option("--seed", lin_args.seed, "RNG seed");
  lin->add_option("--out", lin_args.out, "Output JSON file")->required();

  MetricsArgs met_args;
  auto* met = app.add_subcommand("metrics", "Model comparison metrics");
  met->add_option("--summary-a", met_args.summary_a, "Reference model summary.json");
  met->add_option("--summary-u", met_args.summary_u, "Candidate model summary.json");
  met->add_flag("--mcse", met_args.mcse, "Monte Carlo standard error mode");
  met->add_option("--summary", met_args.mcse_summaries, "summary.json inputs for --mcse (repeatable)");
  met->add_option("--out", met_args.out, "Output JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << std::endl;
    return 2;
  }

  try {
    if (app.got_subcommand(sim)) return run_simulate(sim_args);
    if (app.got_subcommand(fit)) return run_fit(fit_args);
    if (app.got_subcommand(fc)) return run_forecast(fc_args);
    if (app.got_subcommand(lin)) return run_lineage(lin_args);
    if (app.got_subcommand(met)) return run_metrics(met_args);
  } catch (const epihawkes::UsageError& e) {
    std::cerr << "error: usage: " << e.what() << std::endl;
    return 2;
  } catch (const epihawkes::ParticleCollapseError& e) {
    std::cerr << "error: collapse: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
