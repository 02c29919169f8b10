#pragma once

// Experiment harness: scenario configuration (JSON-backed, with named
// presets), batched trial execution over random bias-field directions, sweep
// drivers, and CSV/JSON export.  Running the same configuration twice — with
// any thread count — produces byte-identical output files.

#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "csesr/acquisition.hpp"
#include "csesr/dictionary.hpp"
#include "csesr/metrics.hpp"
#include "csesr/protocols.hpp"
#include "csesr/rng.hpp"
#include "csesr/spectrum.hpp"

namespace csesr {

struct SweepSpec {
  std::string axis;            // "n_points" | "snr" | "width" | "tones"
  std::vector<double> values;  // strictly monotone

  void validate() const {
    if (axis != "n_points" && axis != "snr" && axis != "width" && axis != "tones") {
      throw std::invalid_argument("SweepSpec: unknown axis '" + axis + "'");
    }
    if (values.empty()) throw std::invalid_argument("SweepSpec: no values");
    const bool increasing = values.size() < 2 || values[1] > values[0];
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
      const bool ok = increasing ? values[i + 1] > values[i] : values[i + 1] < values[i];
      if (!ok) throw std::invalid_argument("SweepSpec: values must be strictly monotone");
    }
  }
};

struct ScenarioConfig {
  std::string name = "custom";

  // Physics of the simulated sample.
  double field_gauss = 100.0;
  std::optional<Vec3> field_direction;  // fixed direction; absent = random per sample
  double linewidth_mhz = 15.0;
  double snr = 3.0;  // may be +inf for noiseless runs
  double reference_power = 1000.0;
  double contrast = 0.15;                 // isolated dip depth / reference power
  std::vector<double> amplitude_weights;  // optional: 8 per-line multipliers
  double zero_field_splitting_mhz = 2870.0;
  double gyromagnetic_mhz_per_gauss = 2.87;
  std::optional<FrequencyWindow> window;  // absent = derived from field strength
  int measurement_points = 0;             // 0 = one point per MHz of window
  double candidate_spacing_mhz = 1.0;

  // Protocol settings.
  std::string method = "both";  // "cs" | "raster" | "both"
  int tones = 3;
  int n_samples = 57;
  int n_initial = 10;
  int max_measurements = 650;
  std::vector<int> sub_sample_counts;  // raster sizes; empty = default ladder
  double convergence_tolerance_mhz = 2.0;
  int required_consecutive = 4;
  double width_tolerance_fraction = 0.5;
  double threshold_fraction = 0.1;
  bool extend_to_max = true;  // keep measuring past convergence for statistics
  double lambda_override = 0.0;
  double solver_rel_tol = 1e-6;
  int solver_max_iterations = 5000;
  double min_separation_linewidths = 2.0;  // reject truths with closer lines

  // Execution.
  std::uint64_t seed = 20250816;
  int threads = 0;  // 0 = hardware concurrency
  std::optional<SweepSpec> sweep;

  FrequencyWindow resolved_window() const {
    if (window.has_value()) return *window;
    const double span = gyromagnetic_mhz_per_gauss * field_gauss;
    const double half = span + std::max(3.0 * linewidth_mhz, 20.0);
    return {zero_field_splitting_mhz - half, zero_field_splitting_mhz + half};
  }

  int resolved_points() const {
    if (measurement_points > 0) return measurement_points;
    return static_cast<int>(std::lround(resolved_window().width_mhz()));
  }

  std::vector<int> resolved_sub_counts() const {
    const int m = resolved_points();
    std::vector<int> counts = sub_sample_counts;
    if (counts.empty()) {
      for (int c : {25, 50, 100, 150, 217, 325}) {
        if (c <= m) counts.push_back(c);
      }
      counts.push_back(m);
    }
    std::sort(counts.begin(), counts.end());
    counts.erase(std::unique(counts.begin(), counts.end()), counts.end());
    return counts;
  }

  void validate() const {
    if (!(field_gauss >= 0)) throw std::invalid_argument("config: field must be non-negative");
    if (!(linewidth_mhz > 0)) throw std::invalid_argument("config: linewidth must be positive");
    if (!(snr > 0)) throw std::invalid_argument("config: snr must be positive (inf allowed)");
    if (!(reference_power > 0)) {
      throw std::invalid_argument("config: reference power must be positive");
    }
    if (!(contrast > 0.0 && contrast < 1.0)) {
      throw std::invalid_argument("config: contrast must lie in (0, 1)");
    }
    if (!amplitude_weights.empty() && amplitude_weights.size() != 8) {
      throw std::invalid_argument("config: amplitude_weights needs exactly 8 entries");
    }
    for (double w : amplitude_weights) {
      if (!(w > 0)) throw std::invalid_argument("config: amplitude weights must be positive");
    }
    if (!(zero_field_splitting_mhz > 0) || !(gyromagnetic_mhz_per_gauss > 0)) {
      throw std::invalid_argument("config: invalid spin constants");
    }
    if (method != "cs" && method != "raster" && method != "both") {
      throw std::invalid_argument("config: method must be cs, raster or both");
    }
    if (tones < 1 || tones > 4) throw std::invalid_argument("config: tones must lie in 1..4");
    if (n_samples < 1) throw std::invalid_argument("config: need at least one sample");
    if (n_initial < 4) throw std::invalid_argument("config: n_initial must be at least 4");
    if (max_measurements < n_initial) {
      throw std::invalid_argument("config: max_measurements below n_initial");
    }
    if (!(candidate_spacing_mhz > 0)) {
      throw std::invalid_argument("config: candidate spacing must be positive");
    }
    if (!(threshold_fraction > 0 && threshold_fraction < 1)) {
      throw std::invalid_argument("config: threshold fraction must lie in (0, 1)");
    }
    if (!(convergence_tolerance_mhz > 0) || required_consecutive < 1) {
      throw std::invalid_argument("config: invalid convergence settings");
    }
    if (min_separation_linewidths < 0) {
      throw std::invalid_argument("config: negative separation rule");
    }
    if (threads < 0) throw std::invalid_argument("config: negative thread count");
    resolved_window().validate();
    const int m = resolved_points();
    if (m < 16) throw std::invalid_argument("config: measurement grid is too small");
    for (int c : resolved_sub_counts()) {
      if (c < 8 || c > m) {
        throw std::invalid_argument("config: sub-sample counts must lie in [8, grid size]");
      }
    }
    if (sweep.has_value()) sweep->validate();
  }
};

// --- JSON binding (missing keys keep defaults) ------------------------------

inline void from_json(const nlohmann::json& j, SweepSpec& s) {
  s.axis = j.at("axis").get<std::string>();
  s.values = j.at("values").get<std::vector<double>>();
}

inline void to_json(nlohmann::json& j, const SweepSpec& s) {
  j = nlohmann::json{{"axis", s.axis}, {"values", s.values}};
}

inline void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  c.name = j.value("name", c.name);
  c.field_gauss = j.value("field_gauss", c.field_gauss);
  if (j.contains("field_direction")) {
    const auto v = j.at("field_direction").get<std::vector<double>>();
    if (v.size() != 3) throw std::invalid_argument("config: field_direction needs 3 components");
    c.field_direction = Vec3{v[0], v[1], v[2]};
  }
  c.linewidth_mhz = j.value("linewidth_mhz", c.linewidth_mhz);
  if (j.contains("snr")) {
    const auto& v = j.at("snr");
    if (v.is_string()) {
      const std::string s = v.get<std::string>();
      if (s != "inf" && s != "infinite") {
        throw std::invalid_argument("config: snr string must be 'inf'");
      }
      c.snr = std::numeric_limits<double>::infinity();
    } else {
      c.snr = v.get<double>();
    }
  }
  c.reference_power = j.value("reference_power", c.reference_power);
  c.contrast = j.value("contrast", c.contrast);
  c.amplitude_weights = j.value("amplitude_weights", c.amplitude_weights);
  c.zero_field_splitting_mhz = j.value("zero_field_splitting_mhz", c.zero_field_splitting_mhz);
  c.gyromagnetic_mhz_per_gauss =
      j.value("gyromagnetic_mhz_per_gauss", c.gyromagnetic_mhz_per_gauss);
  if (j.contains("window")) {
    FrequencyWindow w;
    w.lo_mhz = j.at("window").at("lo_mhz").get<double>();
    w.hi_mhz = j.at("window").at("hi_mhz").get<double>();
    c.window = w;
  }
  c.measurement_points = j.value("measurement_points", c.measurement_points);
  c.candidate_spacing_mhz = j.value("candidate_spacing_mhz", c.candidate_spacing_mhz);
  c.method = j.value("method", c.method);
  c.tones = j.value("tones", c.tones);
  c.n_samples = j.value("n_samples", c.n_samples);
  c.n_initial = j.value("n_initial", c.n_initial);
  c.max_measurements = j.value("max_measurements", c.max_measurements);
  c.sub_sample_counts = j.value("sub_sample_counts", c.sub_sample_counts);
  c.convergence_tolerance_mhz = j.value("convergence_tolerance_mhz", c.convergence_tolerance_mhz);
  c.required_consecutive = j.value("required_consecutive", c.required_consecutive);
  c.width_tolerance_fraction = j.value("width_tolerance_fraction", c.width_tolerance_fraction);
  c.threshold_fraction = j.value("threshold_fraction", c.threshold_fraction);
  c.extend_to_max = j.value("extend_to_max", c.extend_to_max);
  c.lambda_override = j.value("lambda_override", c.lambda_override);
  c.solver_rel_tol = j.value("solver_rel_tol", c.solver_rel_tol);
  c.solver_max_iterations = j.value("solver_max_iterations", c.solver_max_iterations);
  c.min_separation_linewidths = j.value("min_separation_linewidths", c.min_separation_linewidths);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  if (j.contains("sweep")) c.sweep = j.at("sweep").get<SweepSpec>();
}

inline void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  j = nlohmann::json{
      {"name", c.name},
      {"field_gauss", c.field_gauss},
      {"linewidth_mhz", c.linewidth_mhz},
      {"reference_power", c.reference_power},
      {"contrast", c.contrast},
      {"zero_field_splitting_mhz", c.zero_field_splitting_mhz},
      {"gyromagnetic_mhz_per_gauss", c.gyromagnetic_mhz_per_gauss},
      {"measurement_points", c.measurement_points},
      {"candidate_spacing_mhz", c.candidate_spacing_mhz},
      {"method", c.method},
      {"tones", c.tones},
      {"n_samples", c.n_samples},
      {"n_initial", c.n_initial},
      {"max_measurements", c.max_measurements},
      {"sub_sample_counts", c.sub_sample_counts},
      {"convergence_tolerance_mhz", c.convergence_tolerance_mhz},
      {"required_consecutive", c.required_consecutive},
      {"width_tolerance_fraction", c.width_tolerance_fraction},
      {"threshold_fraction", c.threshold_fraction},
      {"extend_to_max", c.extend_to_max},
      {"lambda_override", c.lambda_override},
      {"solver_rel_tol", c.solver_rel_tol},
      {"solver_max_iterations", c.solver_max_iterations},
      {"min_separation_linewidths", c.min_separation_linewidths},
      {"seed", c.seed},
      {"threads", c.threads},
  };
  if (std::isinf(c.snr)) {
    j["snr"] = "inf";
  } else {
    j["snr"] = c.snr;
  }
  if (c.field_direction.has_value()) {
    j["field_direction"] = std::vector<double>{(*c.field_direction)[0], (*c.field_direction)[1],
                                               (*c.field_direction)[2]};
  }
  if (c.window.has_value()) {
    j["window"] = nlohmann::json{{"lo_mhz", c.window->lo_mhz}, {"hi_mhz", c.window->hi_mhz}};
  }
  if (!c.amplitude_weights.empty()) j["amplitude_weights"] = c.amplitude_weights;
  if (c.sweep.has_value()) j["sweep"] = *c.sweep;
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  nlohmann::json j;
  in >> j;
  return j.get<ScenarioConfig>();
}

// Named presets mirroring the standard experiments.
inline ScenarioConfig scenario_preset(const std::string& name) {
  ScenarioConfig c;
  c.name = name;
  if (name == "high-field") {
    c.field_gauss = 100.0;
    c.window = FrequencyWindow{2545.0, 3195.0};
    c.linewidth_mhz = 15.0;
    c.snr = 3.0;
    c.n_samples = 57;
    c.max_measurements = 650;
    c.sub_sample_counts = {25, 50, 100, 150, 217, 325, 650};
  } else if (name == "low-field") {
    c.field_gauss = 50.0;
    c.window = FrequencyWindow{2670.0, 3070.0};
    c.linewidth_mhz = 10.0;
    c.snr = 13.0;
    c.n_samples = 57;
    c.max_measurements = 400;
    c.sub_sample_counts = {25, 50, 100, 150, 200, 400};
  } else if (name == "fig3") {
    // Error vs noise level at a fixed measurement budget.
    c.field_gauss = 100.0;
    c.window = FrequencyWindow{2545.0, 3195.0};
    c.linewidth_mhz = 10.0;
    c.n_samples = 24;
    c.max_measurements = 217;
    c.sub_sample_counts = {217};
    c.sweep = SweepSpec{"snr", {1.0, 3.0, 5.0, 10.0, 20.0}};
  } else if (name == "fig4") {
    // Error vs resonance linewidth.
    c.field_gauss = 100.0;
    c.window = FrequencyWindow{2545.0, 3195.0};
    c.snr = 7.0;
    c.n_samples = 24;
    c.max_measurements = 217;
    c.sub_sample_counts = {217};
    c.sweep = SweepSpec{"width", {5.0, 10.0, 15.0, 20.0, 25.0}};
  } else if (name == "fig5") {
    // Error vs number of simultaneous tones.
    c.field_gauss = 100.0;
    c.window = FrequencyWindow{2545.0, 3195.0};
    c.linewidth_mhz = 10.0;
    c.snr = 7.0;
    c.n_samples = 57;
    c.max_measurements = 150;
    c.sub_sample_counts = {150};
    c.sweep = SweepSpec{"tones", {2.0, 3.0, 4.0}};
  } else {
    throw std::invalid_argument("unknown preset '" + name + "'");
  }
  return c;
}

// --- Execution ---------------------------------------------------------------

struct ResultRow {
  double axis_value = 0.0;  // sweep value, or the measurement count itself
  std::string method;       // "cs" | "raster"
  int n_points = 0;
  MetricsSummary summary;
  std::uint64_t seed = 0;
  std::string error;  // non-empty when this sweep point failed
};

struct SampleRecord {
  int sample_index = 0;
  ResonanceSet truth;
  int rejected_draws = 0;
  double noise_sigma = 0.0;
  // CS results (when run): final outcome plus the per-count history.
  std::optional<CsTrialResult> cs;
  // Raster outcomes aligned with the configured sub-sample counts.
  std::vector<TrialOutcome> raster;
};

struct RunResult {
  ScenarioConfig config;
  std::vector<SampleRecord> samples;
  std::vector<ResultRow> rows;
  int rejected_draws_total = 0;
};

namespace detail {

// Draw a bias-field truth for one sample: random direction (or the fixed
// one), rejecting draws whose lines collide or leave the scan window.
inline ResonanceSet draw_truth(const ScenarioConfig& cfg, const NVConstants& consts,
                               const FrequencyWindow& window, std::uint64_t truth_seed,
                               int* rejected) {
  const double amp_shared =
      cfg.contrast * cfg.reference_power * std::numbers::pi * cfg.linewidth_mhz / 2.0;
  std::vector<double> amps;
  if (cfg.amplitude_weights.empty()) {
    amps = {amp_shared};
  } else {
    for (double w : cfg.amplitude_weights) amps.push_back(amp_shared * w);
  }
  const std::vector<double> widths = {cfg.linewidth_mhz};

  SmallRng rng(truth_seed);
  const double min_gap = cfg.min_separation_linewidths * cfg.linewidth_mhz;
  for (int attempt = 0; attempt < 100000; ++attempt) {
    BiasField field;
    field.magnitude_gauss = cfg.field_gauss;
    field.direction = cfg.field_direction.has_value() ? *cfg.field_direction
                                                      : rng.next_unit_vector();
    try {
      ResonanceSet truth = compute_resonances(field, consts, window, widths, amps);
      if (truth.min_pairwise_gap_mhz() >= min_gap) return truth;
    } catch (const std::invalid_argument&) {
      // line fell outside the window: treat like a collision and redraw
    }
    if (cfg.field_direction.has_value()) {
      throw std::invalid_argument(
          "scenario: the fixed field direction produces colliding or out-of-window lines");
    }
    ++*rejected;
  }
  throw std::runtime_error("scenario: could not draw a well-separated spectrum");
}

inline SampleRecord run_sample(const ScenarioConfig& cfg, const NVConstants& consts,
                               const FrequencyWindow& window, const std::vector<double>& grid,
                               const Dictionary& dict, const std::vector<int>& sub_counts,
                               int sample_index) {
  SampleRecord rec;
  rec.sample_index = sample_index;
  const std::uint64_t truth_seed = derive_seed(cfg.seed, 0x54525554ull, sample_index);
  rec.truth = draw_truth(cfg, consts, window, truth_seed, &rec.rejected_draws);
  rec.noise_sigma = noise_sigma_for_snr(rec.truth, grid, cfg.snr);

  const bool run_cs = cfg.method == "cs" || cfg.method == "both";
  const bool run_raster = cfg.method == "raster" || cfg.method == "both";

  if (run_cs) {
    SimulatedBackend backend(rec.truth, window, cfg.reference_power, rec.noise_sigma,
                             derive_seed(cfg.seed, 0x43534243ull, sample_index));
    CsProtocolOptions opt;
    opt.n_initial = cfg.n_initial;
    opt.tones = cfg.tones;
    opt.max_measurements = cfg.max_measurements;
    opt.convergence_tolerance_mhz = cfg.convergence_tolerance_mhz;
    opt.required_consecutive = cfg.required_consecutive;
    opt.characteristic_width_mhz = cfg.linewidth_mhz;
    opt.width_tolerance_fraction = cfg.width_tolerance_fraction;
    opt.threshold_fraction = cfg.threshold_fraction;
    opt.extend_to_max = cfg.extend_to_max;
    opt.lambda_override = cfg.lambda_override;
    opt.solver_rel_tol = cfg.solver_rel_tol;
    opt.solver_max_iterations = cfg.solver_max_iterations;
    rec.cs = run_cs_trial(backend, dict, opt, derive_seed(cfg.seed, 0x43535047ull, sample_index),
                          &rec.truth);
  }
  if (run_raster) {
    SimulatedBackend backend(rec.truth, window, cfg.reference_power, rec.noise_sigma,
                             derive_seed(cfg.seed, 0x52415354ull, sample_index));
    // One full sweep in grid order; every sub-sampling re-analyzes the same
    // data, mirroring post-processing sub-sampling of a recorded scan.
    std::vector<double> counts;
    counts.reserve(grid.size());
    for (double nu : grid) {
      const double tone[1] = {nu};
      counts.push_back(backend.measure(tone));
    }
    LorentzianFitOptions fit_opt;
    fit_opt.n_peaks = 8;
    fit_opt.characteristic_width_mhz = cfg.linewidth_mhz;
    for (int n : sub_counts) {
      const std::vector<int> idx = raster_subset_indices(static_cast<int>(grid.size()), n);
      std::vector<double> sub_grid, sub_counts_v;
      sub_grid.reserve(idx.size());
      sub_counts_v.reserve(idx.size());
      for (int j : idx) {
        sub_grid.push_back(grid[static_cast<std::size_t>(j)]);
        sub_counts_v.push_back(counts[static_cast<std::size_t>(j)]);
      }
      TrialOutcome out = raster_outcome_from_counts(sub_grid, sub_counts_v, fit_opt, &rec.truth);
      out.measurements_used = n;
      rec.raster.push_back(std::move(out));
    }
  }
  return rec;
}

}  // namespace detail

// Run one scenario: n_samples independent random spectra, each measured by
// the configured method(s).  Sample workloads are distributed over threads;
// results are merged by sample index, so the output is independent of the
// thread count.
inline RunResult run_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  NVConstants consts;
  consts.zero_field_splitting_mhz = cfg.zero_field_splitting_mhz;
  consts.gyromagnetic_mhz_per_gauss = cfg.gyromagnetic_mhz_per_gauss;
  const FrequencyWindow window = cfg.resolved_window();
  const std::vector<double> grid = make_grid(window, cfg.resolved_points());
  const std::vector<int> sub_counts = cfg.resolved_sub_counts();
  const Dictionary dict =
      build_uniform_dictionary(grid, cfg.candidate_spacing_mhz, cfg.linewidth_mhz);

  RunResult result;
  result.config = cfg;
  result.samples.resize(static_cast<std::size_t>(cfg.n_samples));

  int n_threads = cfg.threads > 0 ? cfg.threads
                                  : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::max(1, std::min(n_threads, cfg.n_samples));

  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::vector<std::string> errors(static_cast<std::size_t>(cfg.n_samples));
  const auto worker = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= cfg.n_samples || failed.load()) break;
      try {
        result.samples[static_cast<std::size_t>(i)] =
            detail::run_sample(cfg, consts, window, grid, dict, sub_counts, i);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(i)] = e.what();
        failed.store(true);
        break;
      }
    }
  };
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failed.load()) {
    for (const auto& e : errors) {
      if (!e.empty()) throw std::runtime_error("scenario sample failed: " + e);
    }
  }
  for (const auto& s : result.samples) result.rejected_draws_total += s.rejected_draws;

  // CS rows: one per projection count, aggregated over samples.
  const bool did_cs = cfg.method == "cs" || cfg.method == "both";
  const bool did_raster = cfg.method == "raster" || cfg.method == "both";
  if (did_cs) {
    for (int m = cfg.n_initial; m <= cfg.max_measurements; ++m) {
      std::vector<TrialOutcome> at_count;
      at_count.reserve(result.samples.size());
      for (const auto& s : result.samples) {
        const auto& history = s.cs->per_count;
        const std::size_t k = static_cast<std::size_t>(m - cfg.n_initial);
        if (k >= history.size()) continue;  // trial stopped early (non-extended run)
        TrialOutcome t;
        t.success = history[k].success;
        t.delta_nu_mhz = history[k].delta_nu_mhz;
        t.measurements_used = history[k].measurements;
        at_count.push_back(t);
      }
      if (at_count.empty()) continue;
      ResultRow row;
      row.axis_value = m;
      row.method = "cs";
      row.n_points = m;
      row.summary = summarize(at_count, cfg.gyromagnetic_mhz_per_gauss);
      row.seed = cfg.seed;
      result.rows.push_back(std::move(row));
    }
  }
  if (did_raster) {
    for (std::size_t ci = 0; ci < sub_counts.size(); ++ci) {
      std::vector<TrialOutcome> at_count;
      at_count.reserve(result.samples.size());
      for (const auto& s : result.samples) at_count.push_back(s.raster[ci]);
      ResultRow row;
      row.axis_value = sub_counts[ci];
      row.method = "raster";
      row.n_points = sub_counts[ci];
      row.summary = summarize(at_count, cfg.gyromagnetic_mhz_per_gauss);
      row.seed = cfg.seed;
      result.rows.push_back(std::move(row));
    }
  }
  return result;
}

struct SweepResult {
  ScenarioConfig config;
  std::vector<ResultRow> rows;
};

// Run the configured sweep: one scenario per axis value, reporting each
// method at the point budget of that scenario.  A failing point yields an
// error row; remaining points still run.
inline SweepResult run_sweep(const ScenarioConfig& cfg) {
  if (!cfg.sweep.has_value()) throw std::invalid_argument("run_sweep: config carries no sweep");
  cfg.validate();
  SweepResult result;
  result.config = cfg;
  for (const double v : cfg.sweep->values) {
    ScenarioConfig sub = cfg;
    sub.sweep.reset();
    if (cfg.sweep->axis == "n_points") {
      sub.max_measurements = static_cast<int>(std::lround(v));
    } else if (cfg.sweep->axis == "snr") {
      sub.snr = v;
    } else if (cfg.sweep->axis == "width") {
      sub.linewidth_mhz = v;
    } else {
      sub.tones = static_cast<int>(std::lround(v));
    }
    const int report_points = sub.max_measurements;
    sub.sub_sample_counts = {report_points};
    try {
      const RunResult run = run_scenario(sub);
      for (const auto& row : run.rows) {
        if (row.n_points != report_points) continue;
        ResultRow out = row;
        out.axis_value = v;
        result.rows.push_back(std::move(out));
      }
    } catch (const std::exception& e) {
      ResultRow out;
      out.axis_value = v;
      out.method = sub.method;
      out.n_points = report_points;
      out.seed = sub.seed;
      out.error = e.what();
      result.rows.push_back(std::move(out));
    }
  }
  return result;
}

// --- Export ------------------------------------------------------------------

namespace detail {

// Full-precision, locale-independent double formatting (round-trip exact).
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string format_optional(const std::optional<double>& v) {
  return v.has_value() ? format_double(*v) : std::string();
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

}  // namespace detail

inline const char* results_csv_header() {
  return "axis_value,method,n_points,P,mean_delta_nu,std_delta_nu,normalized_error,"
         "n_trials,seed,error";
}

inline std::string results_to_csv(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("results_to_csv: no rows");
  std::string out = results_csv_header();
  out += '\n';
  for (const auto& r : rows) {
    out += detail::format_double(r.axis_value);
    out += ',';
    out += r.method;
    out += ',';
    out += std::to_string(r.n_points);
    out += ',';
    if (r.error.empty()) out += detail::format_double(r.summary.success_probability);
    out += ',';
    out += detail::format_optional(r.summary.mean_delta_nu_mhz);
    out += ',';
    out += detail::format_optional(r.summary.std_delta_nu_mhz);
    out += ',';
    out += detail::format_optional(r.summary.normalized_error_mhz);
    out += ',';
    out += r.error.empty() ? std::to_string(r.summary.n_trials) : std::string();
    out += ',';
    out += std::to_string(r.seed);
    out += ',';
    out += detail::csv_quote(r.error);
    out += '\n';
  }
  return out;
}

inline nlohmann::json results_to_json(const std::vector<ResultRow>& rows,
                                      const ScenarioConfig* config = nullptr) {
  if (rows.empty()) throw std::invalid_argument("results_to_json: no rows");
  nlohmann::json j;
  if (config != nullptr) j["config"] = *config;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row{
        {"axis_value", r.axis_value}, {"method", r.method},   {"n_points", r.n_points},
        {"n_trials", r.summary.n_trials},
        {"P", r.summary.success_probability},
        {"seed", r.seed},
    };
    const auto set = [&row](const char* key, const std::optional<double>& v) {
      if (v.has_value()) {
        row[key] = *v;
      } else {
        row[key] = nullptr;
      }
    };
    set("mean_delta_nu", r.summary.mean_delta_nu_mhz);
    set("std_delta_nu", r.summary.std_delta_nu_mhz);
    set("normalized_error", r.summary.normalized_error_mhz);
    set("sensitivity_eta", r.summary.sensitivity_eta);
    if (!r.error.empty()) row["error"] = r.error;
    j["rows"].push_back(std::move(row));
  }
  return j;
}

// Write rows to a file; format is "csv" or "json".
inline void export_results(const std::vector<ResultRow>& rows, const std::string& path,
                           const std::string& format, const ScenarioConfig* config = nullptr) {
  std::string payload;
  if (format == "csv") {
    payload = results_to_csv(rows);
  } else if (format == "json") {
    payload = results_to_json(rows, config).dump(2);
    payload += '\n';
  } else {
    throw std::invalid_argument("export_results: format must be csv or json");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  out << payload;
  if (!out) throw std::runtime_error("failed writing output file: " + path);
}

// Parse a CSV produced by results_to_csv (used for round-trip checks).
inline std::vector<ResultRow> parse_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open results file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty results file: " + path);
  if (line != results_csv_header()) throw std::runtime_error("unexpected results header");
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char ch = line[i];
      if (quoted) {
        if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (ch == '"') {
          quoted = false;
        } else {
          cur += ch;
        }
      } else if (ch == '"') {
        quoted = true;
      } else if (ch == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    fields.push_back(cur);
    if (fields.size() != 10) throw std::runtime_error("malformed results row");
    ResultRow r;
    r.axis_value = std::stod(fields[0]);
    r.method = fields[1];
    r.n_points = std::stoi(fields[2]);
    const auto opt = [](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      return std::stod(s);
    };
    if (!fields[3].empty()) r.summary.success_probability = std::stod(fields[3]);
    r.summary.mean_delta_nu_mhz = opt(fields[4]);
    r.summary.std_delta_nu_mhz = opt(fields[5]);
    r.summary.normalized_error_mhz = opt(fields[6]);
    if (!fields[7].empty()) r.summary.n_trials = std::stoi(fields[7]);
    r.seed = std::stoull(fields[8]);
    r.error = fields[9];
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace csesr
