// Command-line front end: synthesize spectra, run scenarios and sweeps,
// cross-check the solver against the reference minimizer.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "csesr/csesr.hpp"

namespace {

struct CommonArgs {
  std::string preset;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
  std::string format = "csv";
};

void add_common(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--preset", args->preset,
                  "named preset: high-field, low-field, fig3, fig4, fig5");
  cmd->add_option("--config", args->config_path, "JSON configuration file");
  cmd->add_option("--seed", args->seed, "override the scenario seed");
  cmd->add_option("--threads", args->threads, "worker threads (0 = all cores)");
  cmd->add_option("-o,--out", args->out, "output file path");
  cmd->add_option("--format", args->format, "output format: csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
}

csesr::ScenarioConfig resolve_config(const CommonArgs& args) {
  csesr::ScenarioConfig cfg;
  if (!args.preset.empty() && !args.config_path.empty()) {
    throw std::invalid_argument("pass either --preset or --config, not both");
  }
  if (!args.preset.empty()) {
    cfg = csesr::scenario_preset(args.preset);
  } else if (!args.config_path.empty()) {
    cfg = csesr::load_config(args.config_path);
  }
  if (args.seed.has_value()) cfg.seed = *args.seed;
  if (args.threads.has_value()) cfg.threads = *args.threads;
  return cfg;
}

std::string default_out(const CommonArgs& args, const std::string& stem) {
  if (!args.out.empty()) return args.out;
  return stem + "." + args.format;
}

int cmd_simulate(const CommonArgs& args, int sample_index) {
  csesr::ScenarioConfig cfg = resolve_config(args);
  cfg.validate();
  csesr::NVConstants consts;
  consts.zero_field_splitting_mhz = cfg.zero_field_splitting_mhz;
  consts.gyromagnetic_mhz_per_gauss = cfg.gyromagnetic_mhz_per_gauss;
  const csesr::FrequencyWindow window = cfg.resolved_window();
  const std::vector<double> grid = csesr::make_grid(window, cfg.resolved_points());
  int rejected = 0;
  const csesr::ResonanceSet truth = csesr::detail::draw_truth(
      cfg, consts, window, csesr::derive_seed(cfg.seed, 0x54525554ull, sample_index), &rejected);
  const double sigma = csesr::noise_sigma_for_snr(truth, grid, cfg.snr);
  const double snr_eff = sigma > 0 ? cfg.snr : std::numeric_limits<double>::infinity();
  const csesr::SpectrumSample sample = csesr::synthesize_spectrum(
      truth, grid, cfg.reference_power, snr_eff,
      csesr::derive_seed(cfg.seed, 0x53494d55ull, sample_index));

  const std::string path = default_out(args, "spectrum");
  if (args.format == "csv") {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    out << "frequency_mhz,clean_counts,noisy_counts\n";
    for (std::size_t j = 0; j < sample.grid_mhz.size(); ++j) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", sample.grid_mhz[j],
                    sample.clean_counts[j], sample.noisy_counts[j]);
      out << buf;
    }
  } else {
    nlohmann::json j;
    j["config"] = cfg;
    j["truth"] = {{"centers_mhz", truth.centers_mhz},
                  {"widths_mhz", truth.widths_mhz},
                  {"amplitudes", truth.amplitudes}};
    j["grid_mhz"] = sample.grid_mhz;
    j["clean_counts"] = sample.clean_counts;
    j["noisy_counts"] = sample.noisy_counts;
    j["noise_sigma"] = sample.noise_sigma;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    out << j.dump(2) << '\n';
  }
  std::cerr << "wrote " << path << " (" << sample.grid_mhz.size() << " points, noise sigma "
            << sample.noise_sigma << ")\n";
  return 0;
}

int cmd_run(const CommonArgs& args) {
  const csesr::ScenarioConfig cfg = resolve_config(args);
  const csesr::RunResult result = csesr::run_scenario(cfg);
  const std::string path = default_out(args, "results");
  csesr::export_results(result.rows, path, args.format, &result.config);
  std::cerr << "wrote " << path << " (" << result.rows.size() << " rows, "
            << result.rejected_draws_total << " rejected field draws)\n";
  return 0;
}

int cmd_sweep(const CommonArgs& args) {
  const csesr::ScenarioConfig cfg = resolve_config(args);
  const csesr::SweepResult result = csesr::run_sweep(cfg);
  const std::string path = default_out(args, "sweep");
  csesr::export_results(result.rows, path, args.format, &result.config);
  int failures = 0;
  for (const auto& r : result.rows) {
    if (!r.error.empty()) ++failures;
  }
  std::cerr << "wrote " << path << " (" << result.rows.size() << " rows";
  if (failures > 0) std::cerr << ", " << failures << " failed points";
  std::cerr << ")\n";
  return failures == 0 ? 0 : 2;
}

int cmd_oracle(std::uint64_t seed, int instances) {
  // Random small instances; the iterative solver must land on the reference
  // objective within tolerance.
  double worst_gap = 0.0;
  for (int i = 0; i < instances; ++i) {
    csesr::SmallRng rng(csesr::derive_seed(seed, 0x4f52ull, i));
    const int n = 4 + static_cast<int>(rng.next_below(9));  // 4..12
    const int m = 2 + static_cast<int>(rng.next_below(7));  // 2..8
    csesr::TVProblem problem;
    problem.design.resize(m, n);
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < n; ++c) problem.design(r, c) = 0.05 + rng.next_unit();
    }
    Eigen::VectorXd truth = Eigen::VectorXd::Zero(n);
    const int spikes = 1 + static_cast<int>(rng.next_below(2));
    for (int s = 0; s < spikes; ++s) {
      truth[static_cast<Eigen::Index>(rng.next_below(static_cast<std::uint64_t>(n)))] =
          0.5 + rng.next_unit();
    }
    problem.dips = problem.design * truth;
    for (int r = 0; r < m; ++r) problem.dips[r] += 0.01 * rng.next_gaussian();
    problem.lambda = 0.05 + 0.2 * rng.next_unit();

    csesr::SolverOptions sopts;
    sopts.rel_tol = 1e-12;
    sopts.max_iterations = 20000;
    const csesr::SolverReport fast = csesr::reconstruct(problem, sopts);
    csesr::OracleOptions oopts;
    oopts.grid_resolution = 1e-5;
    const csesr::SolverReport slow = csesr::oracle_minimize(problem, oopts);
    const double gap = fast.objective - slow.objective;
    worst_gap = std::max(worst_gap, std::abs(gap));
    std::printf("instance %2d: n=%2d m=%d solver=%.9f oracle=%.9f gap=%+.3e\n", i, n, m,
                fast.objective, slow.objective, gap);
  }
  std::printf("worst |gap| over %d instances: %.3e\n", instances, worst_gap);
  if (worst_gap > 1e-6) {
    std::fprintf(stderr, "solver/oracle disagreement exceeds tolerance\n");
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compressed-sensing ESR spectroscopy toolkit"};
  app.require_subcommand(1);

  CommonArgs sim_args, run_args, sweep_args;
  int sim_sample = 0;
  CLI::App* sim = app.add_subcommand("simulate", "synthesize one spectrum and write it out");
  add_common(sim, &sim_args);
  sim->add_option("--sample", sim_sample, "sample index within the scenario");

  CLI::App* run = app.add_subcommand("run", "run a scenario and export per-count statistics");
  add_common(run, &run_args);

  CLI::App* sweep = app.add_subcommand("sweep", "run the sweep configured in the preset/config");
  add_common(sweep, &sweep_args);

  std::uint64_t oracle_seed = 7;
  int oracle_instances = 20;
  CLI::App* oracle = app.add_subcommand("oracle", "cross-check the solver on tiny instances");
  oracle->add_option("--seed", oracle_seed, "instance seed");
  oracle->add_option("--instances", oracle_instances, "number of instances");

  try {
    app.parse(argc, argv);
    if (sim->parsed()) return cmd_simulate(sim_args, sim_sample);
    if (run->parsed()) return cmd_run(run_args);
    if (sweep->parsed()) return cmd_sweep(sweep_args);
    if (oracle->parsed()) return cmd_oracle(oracle_seed, oracle_instances);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
