#pragma once

// Acquisition protocols.
//
// run_cs_trial: adaptive multi-tone acquisition.  After a short calibration
// phase it alternates  measure -> append row -> TV solve -> detect peaks.
// Once the peak list is stable over several consecutive solves it refines
// the candidate grid around the located lines (once per trial) and keeps
// acquiring; convergence is declared when the list is stable again and the
// reconstruction fits eight clean Lorentzians of plausible width.  Reported
// centers come from that continuum fit whenever it validates (it is not
// quantized to the candidate grid), with the clustered detection as the
// fallback.
//
// run_raster_trial: the classic baseline that sweeps single tones over an
// evenly spaced grid and fits a sum of Lorentzians.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "csesr/acquisition.hpp"
#include "csesr/dictionary.hpp"
#include "csesr/peaks.hpp"
#include "csesr/rng.hpp"
#include "csesr/solver.hpp"
#include "csesr/spectrum.hpp"

namespace csesr {

// Largest center mismatch between two sorted peak lists of equal size.
inline double max_center_deviation(const PeakList& a, const PeakList& b) {
  if (a.found_count() != b.found_count()) {
    throw std::invalid_argument("max_center_deviation: peak counts differ");
  }
  double dev = 0.0;
  for (int i = 0; i < a.found_count(); ++i) {
    dev = std::max(dev, std::abs(a.centers_mhz[static_cast<std::size_t>(i)] -
                                 b.centers_mhz[static_cast<std::size_t>(i)]));
  }
  return dev;
}

// Cluster a recovered amplitude vector into peaks.  Entries below
// threshold_fraction of the maximum are zeroed; consecutive surviving
// candidates form clusters; clusters whose facing edges are closer than
// twice the coarse candidate spacing merge.  Each cluster reports its
// amplitude-weighted centroid and the weighted mean of its members'
// dictionary widths (the line-width estimate the candidates carry; cluster
// spread is deliberately not folded in, since a well-localized line should
// report the atom width, not the blob extent).
inline PeakList detect_peaks(const Eigen::VectorXd& amplitudes, const Dictionary& dict,
                             double threshold_fraction = 0.1) {
  if (amplitudes.size() != dict.cols()) {
    throw std::invalid_argument("detect_peaks: amplitude/dictionary size mismatch");
  }
  if (!(threshold_fraction > 0.0 && threshold_fraction < 1.0)) {
    throw std::invalid_argument("detect_peaks: threshold fraction must lie in (0, 1)");
  }
  PeakList out;
  const double peak = amplitudes.maxCoeff();
  if (!(peak > 0.0)) return out;
  const double threshold = threshold_fraction * peak;

  struct Cluster {
    int begin = 0, end = 0;  // candidate indices, [begin, end)
  };
  std::vector<Cluster> clusters;
  const int n = dict.cols();
  for (int k = 0; k < n;) {
    if (amplitudes[k] >= threshold) {
      int e = k + 1;
      while (e < n && amplitudes[e] >= threshold) ++e;
      clusters.push_back({k, e});
      k = e;
    } else {
      ++k;
    }
  }
  // Merge clusters separated by less than two coarse candidate spacings.
  const double merge_gap = 2.0 * dict.nominal_spacing_mhz;
  std::vector<Cluster> merged;
  for (const auto& c : clusters) {
    if (!merged.empty()) {
      const double gap = dict.candidate_grid_mhz[static_cast<std::size_t>(c.begin)] -
                         dict.candidate_grid_mhz[static_cast<std::size_t>(merged.back().end - 1)];
      if (gap < merge_gap) {
        merged.back().end = c.end;
        continue;
      }
    }
    merged.push_back(c);
  }

  for (const auto& c : merged) {
    double wsum = 0.0, csum = 0.0, widsum = 0.0;
    for (int k = c.begin; k < c.end; ++k) {
      const double w = std::max(amplitudes[k], 0.0);
      wsum += w;
      csum += w * dict.candidate_grid_mhz[static_cast<std::size_t>(k)];
      widsum += w * dict.widths_mhz[static_cast<std::size_t>(k)];
    }
    if (wsum <= 0.0) continue;  // all-masked cluster (possible after merging)
    out.centers_mhz.push_back(csum / wsum);
    out.widths_mhz.push_back(widsum / wsum);
  }
  return out;
}

// Streak counter for peak-list stability.  A solve scores a hit when its
// list has exactly eight peaks and deviates from the previous list by at
// most the tolerance; anything else resets the streak.
struct ConvergenceState {
  double tolerance_mhz = 2.0;
  int required_consecutive = 4;

  int consecutive_hits = 0;
  PeakList previous;
  bool has_previous = false;

  // Feed the latest peak list; returns true when the streak requirement is met.
  bool update(const PeakList& current) {
    const bool stable = current.found_count() == 8 && has_previous &&
                        previous.found_count() == 8 &&
                        max_center_deviation(current, previous) <= tolerance_mhz;
    consecutive_hits = stable ? consecutive_hits + 1 : 0;
    previous = current;
    has_previous = true;
    return consecutive_hits >= required_consecutive;
  }

  void reset() {
    consecutive_hits = 0;
    previous = {};
    has_previous = false;
  }
};

// Result of one acquisition run, shared by both protocols.
struct TrialOutcome {
  enum class Termination { converged, max_measurements };

  bool success = false;  // exactly eight peaks located
  PeakList estimated_peaks;
  int measurements_used = 0;
  // Present when ground truth was supplied and the trial succeeded.
  std::optional<std::array<double, 8>> per_peak_abs_error_mhz;
  std::optional<double> delta_nu_mhz;  // mean of the per-peak errors
  Termination terminated_by = Termination::max_measurements;
};

namespace detail {

// Sorted-order pairing of an eight-peak estimate against the truth.
inline std::array<double, 8> sorted_abs_errors(const PeakList& est, const ResonanceSet& truth) {
  std::array<double, 8> err{};
  for (int i = 0; i < 8; ++i) {
    err[static_cast<std::size_t>(i)] =
        std::abs(est.centers_mhz[static_cast<std::size_t>(i)] -
                 truth.centers_mhz[static_cast<std::size_t>(i)]);
  }
  return err;
}

inline void attach_errors(TrialOutcome& outcome, const ResonanceSet* truth) {
  if (!outcome.success || truth == nullptr) return;
  const auto err = sorted_abs_errors(outcome.estimated_peaks, *truth);
  double mean = 0.0;
  for (double e : err) mean += e;
  outcome.per_peak_abs_error_mhz = err;
  outcome.delta_nu_mhz = mean / 8.0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Multi-Lorentzian least-squares fitting: the raster baseline's analysis
// step, and the CS protocol's shape validation / answer extraction.
// ---------------------------------------------------------------------------

struct LorentzianFitOptions {
  int n_peaks = 8;
  double characteristic_width_mhz = 15.0;  // initial width and plausibility scale
  int max_iterations = 1500;
  double rel_tolerance = 1e-12;
  // Fitted centers closer than this are "unresolved"; 0 = quarter width.
  double min_center_separation_mhz = 0.0;

  double resolved_separation() const {
    return min_center_separation_mhz > 0 ? min_center_separation_mhz
                                         : 0.25 * characteristic_width_mhz;
  }
};

struct LorentzianFit {
  bool ok = false;
  PeakList peaks;                  // sorted when ok
  std::vector<double> amplitudes;  // dip areas, aligned with peaks
  double baseline = 0.0;
  double sse = std::numeric_limits<double>::infinity();
  int iterations = 0;
  std::string failure_reason;
};

namespace detail {

// Unit-area Lorentzian and partials w.r.t. center and log-width.
inline void lorentzian_partials(double nu, double c, double w, double& val, double& d_center,
                                double& d_logwidth) {
  const double z = 2.0 * (nu - c) / w;
  const double den = 1.0 + z * z;
  const double base = 2.0 / (std::numbers::pi * w);
  val = base / den;
  d_center = 8.0 * z / (std::numbers::pi * w * w * den * den);
  d_logwidth = base * (z * z - 1.0) / (den * den);
}

// Parameter layout: [baseline, (center, log_width, amplitude) per peak].
inline void lm_residuals(const std::vector<double>& grid, const std::vector<double>& counts,
                         const Eigen::VectorXd& theta, int p, Eigen::VectorXd& r,
                         Eigen::MatrixXd* jac) {
  const int n = static_cast<int>(grid.size());
  for (int j = 0; j < n; ++j) {
    double model = theta[0];
    if (jac != nullptr) (*jac)(j, 0) = 1.0;
    for (int q = 0; q < p; ++q) {
      const double c = theta[1 + 3 * q];
      const double w = std::exp(theta[2 + 3 * q]);
      const double amp = theta[3 + 3 * q];
      double val, d_c, d_lw;
      lorentzian_partials(grid[static_cast<std::size_t>(j)], c, w, val, d_c, d_lw);
      model -= amp * val;
      if (jac != nullptr) {
        (*jac)(j, 1 + 3 * q) = -amp * d_c;
        (*jac)(j, 2 + 3 * q) = -amp * d_lw;
        (*jac)(j, 3 + 3 * q) = -val;
      }
    }
    r[j] = model - counts[static_cast<std::size_t>(j)];
  }
}

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

// Initial dip guesses: smooth with a box about half a linewidth wide, then
// pick the deepest well-separated local minima.
inline std::vector<int> initial_dip_indices(const std::vector<double>& grid,
                                            const std::vector<double>& counts, int n_peaks,
                                            double char_width_mhz, double baseline) {
  const int n = static_cast<int>(counts.size());
  double spacing = (grid.back() - grid.front()) / std::max(n - 1, 1);
  spacing = std::max(spacing, 1e-9);
  const int h = std::max(1, static_cast<int>(std::lround(0.5 * char_width_mhz / spacing)));
  std::vector<double> smooth(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const int lo = std::max(0, j - h);
    const int hi = std::min(n - 1, j + h);
    double s = 0.0;
    for (int k = lo; k <= hi; ++k) s += counts[static_cast<std::size_t>(k)];
    smooth[static_cast<std::size_t>(j)] = s / (hi - lo + 1);
  }
  struct Dip {
    int index;
    double depth;
  };
  std::vector<Dip> dips;
  for (int j = 1; j + 1 < n; ++j) {
    if (smooth[static_cast<std::size_t>(j)] < smooth[static_cast<std::size_t>(j - 1)] &&
        smooth[static_cast<std::size_t>(j)] <= smooth[static_cast<std::size_t>(j + 1)]) {
      dips.push_back({j, baseline - smooth[static_cast<std::size_t>(j)]});
    }
  }
  std::sort(dips.begin(), dips.end(), [](const Dip& a, const Dip& b) { return a.depth > b.depth; });
  const double min_sep = std::max(spacing, 0.5 * char_width_mhz);
  std::vector<int> picked;
  for (const auto& d : dips) {
    bool clear = true;
    for (int i : picked) {
      if (std::abs(grid[static_cast<std::size_t>(d.index)] - grid[static_cast<std::size_t>(i)]) <
          min_sep) {
        clear = false;
        break;
      }
    }
    if (clear) picked.push_back(d.index);
    if (static_cast<int>(picked.size()) == n_peaks) break;
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

}  // namespace detail

// Fit counts(nu) = baseline - sum of n_peaks Lorentzian dips, by damped
// least squares with analytic derivatives.  initial_guess may carry centers
// and widths (one per peak); when empty, starting dips are located
// automatically.  Requires |grid| >= 3 * n_peaks.
inline LorentzianFit fit_lorentzians(const std::vector<double>& grid_mhz,
                                     const std::vector<double>& counts,
                                     const LorentzianFitOptions& opt,
                                     const PeakList& initial_guess = {}) {
  if (grid_mhz.size() != counts.size()) {
    throw std::invalid_argument("fit_lorentzians: grid/count length mismatch");
  }
  if (opt.n_peaks < 1) throw std::invalid_argument("fit_lorentzians: need at least one peak");
  if (static_cast<int>(grid_mhz.size()) < 3 * opt.n_peaks) {
    throw std::invalid_argument("fit_lorentzians: needs at least 3 grid points per peak");
  }

  LorentzianFit fit;
  const int p = opt.n_peaks;
  const int np = 1 + 3 * p;
  const int n = static_cast<int>(grid_mhz.size());
  const double baseline0 = detail::percentile(counts, 0.9);
  const double scale = std::max(std::abs(baseline0), 1e-12);

  Eigen::VectorXd theta(np);
  theta[0] = baseline0;
  if (initial_guess.found_count() > 0) {
    if (initial_guess.found_count() != p) {
      throw std::invalid_argument("fit_lorentzians: initial guess has wrong peak count");
    }
    for (int q = 0; q < p; ++q) {
      const double c = initial_guess.centers_mhz[static_cast<std::size_t>(q)];
      const double w = initial_guess.widths_mhz[static_cast<std::size_t>(q)];
      // Depth read from the nearest sample.
      const auto it = std::lower_bound(grid_mhz.begin(), grid_mhz.end(), c);
      const std::size_t j = std::min<std::size_t>(
          static_cast<std::size_t>(std::distance(grid_mhz.begin(), it)), grid_mhz.size() - 1);
      const double depth = std::max(baseline0 - counts[j], 1e-6 * scale);
      theta[1 + 3 * q] = c;
      theta[2 + 3 * q] = std::log(std::max(w, 1e-6));
      theta[3 + 3 * q] = depth * std::numbers::pi * w / 2.0;
    }
  } else {
    const std::vector<int> dips = detail::initial_dip_indices(grid_mhz, counts, p,
                                                              opt.characteristic_width_mhz,
                                                              baseline0);
    if (static_cast<int>(dips.size()) < p) {
      fit.failure_reason = "initial dip search located only " + std::to_string(dips.size()) +
                           " of " + std::to_string(p) + " dips";
      return fit;
    }
    for (int q = 0; q < p; ++q) {
      const std::size_t j = static_cast<std::size_t>(dips[static_cast<std::size_t>(q)]);
      const double depth = std::max(baseline0 - counts[j], 1e-6 * scale);
      theta[1 + 3 * q] = grid_mhz[j];
      theta[2 + 3 * q] = std::log(opt.characteristic_width_mhz);
      theta[3 + 3 * q] = depth * std::numbers::pi * opt.characteristic_width_mhz / 2.0;
    }
  }

  Eigen::VectorXd r(n), r_try(n);
  Eigen::MatrixXd jac(n, np);
  detail::lm_residuals(grid_mhz, counts, theta, p, r, &jac);
  double sse = r.squaredNorm();
  double mu = 1e-3;
  bool converged = false;
  int iter = 0;
  for (; iter < opt.max_iterations && !converged; ++iter) {
    const Eigen::MatrixXd h = jac.transpose() * jac;
    const Eigen::VectorXd g = jac.transpose() * r;
    const double diag_floor = 1e-12 * std::max(h.trace() / np, 1e-300);
    bool stepped = false;
    for (int damp = 0; damp < 60; ++damp) {
      Eigen::MatrixXd hd = h;
      for (int k = 0; k < np; ++k) hd(k, k) += mu * std::max(h(k, k), diag_floor);
      const Eigen::VectorXd delta = hd.ldlt().solve(-g);
      Eigen::VectorXd theta_try = theta + delta;
      // Keep log-widths in a sane range to avoid overflow mid-iteration.
      for (int q = 0; q < p; ++q) {
        theta_try[2 + 3 * q] = std::clamp(theta_try[2 + 3 * q], -20.0, 20.0);
      }
      detail::lm_residuals(grid_mhz, counts, theta_try, p, r_try, nullptr);
      const double sse_try = r_try.squaredNorm();
      if (sse_try < sse) {
        if (sse - sse_try <= opt.rel_tolerance * std::max(sse, 1e-300)) converged = true;
        theta = std::move(theta_try);
        sse = sse_try;
        mu = std::max(mu / 3.0, 1e-12);
        stepped = true;
        break;
      }
      mu *= 4.0;
      if (mu > 1e14) break;
    }
    if (!stepped) {
      // No damped step improves the fit: the iterate is numerically
      // stationary (on clean data the sse floor is reached long before the
      // relative-decrease test can fire), which is convergence, not failure.
      converged = true;
      break;
    }
    detail::lm_residuals(grid_mhz, counts, theta, p, r, &jac);
  }
  fit.iterations = iter;
  fit.sse = sse;
  fit.baseline = theta[0];

  if (!converged) {
    fit.failure_reason = "fit did not converge";
    return fit;
  }

  struct Line {
    double c, w, a;
  };
  std::vector<Line> lines;
  for (int q = 0; q < p; ++q) {
    lines.push_back({theta[1 + 3 * q], std::exp(theta[2 + 3 * q]), theta[3 + 3 * q]});
  }
  std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) { return a.c < b.c; });

  const double lo = grid_mhz.front(), hi = grid_mhz.back();
  for (const auto& ln : lines) {
    if (ln.c < lo || ln.c > hi) {
      fit.failure_reason = "fitted center escaped the scan window";
      return fit;
    }
    if (!(ln.a > 0)) {
      fit.failure_reason = "fitted amplitude is not positive";
      return fit;
    }
    if (ln.w > (hi - lo) || ln.w < 0.05 * opt.characteristic_width_mhz) {
      fit.failure_reason = "fitted width is implausible";
      return fit;
    }
  }
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
    if (lines[i + 1].c - lines[i].c < opt.resolved_separation()) {
      fit.failure_reason = "fitted centers are unresolved";
      return fit;
    }
  }

  for (const auto& ln : lines) {
    fit.peaks.centers_mhz.push_back(ln.c);
    fit.peaks.widths_mhz.push_back(ln.w);
    fit.amplitudes.push_back(ln.a);
  }
  fit.ok = true;
  return fit;
}

// ---------------------------------------------------------------------------
// Adaptive compressed-sensing protocol
// ---------------------------------------------------------------------------

namespace detail {

// TV-weight schedule for the adaptive loop.  The noise-scaled default is
// softened so that the row-poor early solves keep adjacent hyperfine lines
// separated instead of fusing them, then grown like sqrt(rows/onset) once
// the row count passes the onset so the data-rich late solves shrink away
// the low-level noise clumps a static weight lets through.
inline constexpr double kTvWeightScale = 0.7;
inline constexpr double kTvGrowthOnsetRows = 100.0;

// Fit eight Lorentzians to the dictionary reconstruction and accept only
// when every fitted width stays inside the plausibility band.  Used both to
// confirm convergence and to extract the reported centers: the continuum
// fit is not quantized to the candidate grid, so it beats the cluster
// centroids whenever the reconstruction is clean enough to fit.
inline bool fit_reconstruction(const Dictionary& dict, const Eigen::VectorXd& amplitudes,
                               double characteristic_width_mhz,
                               double width_tolerance_fraction, PeakList* out) {
  const Eigen::VectorXd recon = dict.matrix * amplitudes;
  const std::vector<double>& grid = dict.measurement_grid_mhz;
  // The reconstruction is a dip-depth profile; negate it into a counts-like
  // trace (flat baseline, downward dips) for the fitter.
  std::vector<double> trace(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) {
    trace[j] = -recon[static_cast<Eigen::Index>(j)];
  }
  LorentzianFitOptions fopt;
  fopt.n_peaks = 8;
  fopt.characteristic_width_mhz = characteristic_width_mhz;
  const LorentzianFit fit = fit_lorentzians(grid, trace, fopt);
  if (!fit.ok || fit.peaks.found_count() != 8) return false;
  for (double w : fit.peaks.widths_mhz) {
    if (std::abs(w - characteristic_width_mhz) >
        width_tolerance_fraction * characteristic_width_mhz) {
      return false;
    }
  }
  *out = fit.peaks;
  return true;
}

}  // namespace detail

struct CsProtocolOptions {
  int n_initial = 10;                     // calibration projections
  int tones = 3;                          // simultaneous tones per projection
  int max_measurements = 650;             // hard budget (projections incl. calibration)
  double convergence_tolerance_mhz = 2.0;
  int required_consecutive = 4;
  double characteristic_width_mhz = 15.0; // nominal linewidth for dictionaries/checks
  double width_tolerance_fraction = 0.5;  // accepted relative width deviation of fitted lines
  double threshold_fraction = 0.1;        // peak detection threshold
  bool extend_to_max = false;             // keep measuring after convergence (statistics mode)
  double lambda_override = 0.0;           // > 0 pins the TV weight; 0 = noise-scaled default
  double solver_rel_tol = 1e-6;
  int solver_max_iterations = 5000;

  void validate(int grid_points) const {
    if (n_initial < 4) throw std::invalid_argument("CsProtocolOptions: n_initial < 4");
    if (max_measurements < n_initial) {
      throw std::invalid_argument("CsProtocolOptions: budget below the calibration phase");
    }
    if (tones < 1 || tones > 4 || tones > grid_points) {
      throw std::invalid_argument("CsProtocolOptions: invalid tone count");
    }
    if (!(convergence_tolerance_mhz > 0)) {
      throw std::invalid_argument("CsProtocolOptions: tolerance must be positive");
    }
    if (required_consecutive < 1) {
      throw std::invalid_argument("CsProtocolOptions: required_consecutive < 1");
    }
    if (!(characteristic_width_mhz > 0)) {
      throw std::invalid_argument("CsProtocolOptions: characteristic width must be positive");
    }
  }
};

// Peak-list summary after each projection count (one entry per solve).
struct CountRecord {
  int measurements = 0;
  int peaks_found = 0;
  bool success = false;                 // exactly eight peaks at this count
  std::optional<double> delta_nu_mhz;   // mean |error| when successful and truth known
};

struct CsTrialResult {
  TrialOutcome outcome;
  std::vector<CountRecord> per_count;
  double reference_power_mean = 0.0;   // running mean over every reference draw
  double noise_sigma_estimate = 0.0;   // sample std of the reference draws
  int refinement_events = 0;
  std::vector<ProjectionRecord> records;
};

// One adaptive acquisition.  The backend supplies counts; randomness of the
// projection pattern comes from rng_seed only.  When `truth` is given,
// per-count and final errors are attached for statistics.
inline CsTrialResult run_cs_trial(MeasurementBackend& backend, const Dictionary& base_dict,
                                  const CsProtocolOptions& opt, std::uint64_t rng_seed,
                                  const ResonanceSet* truth = nullptr) {
  const std::vector<double>& grid = base_dict.measurement_grid_mhz;
  const int grid_points = base_dict.rows();
  opt.validate(grid_points);

  SmallRng rng(rng_seed);
  InitialPhaseResult init = run_initial_phase(backend, grid, opt.n_initial, opt.tones, rng);

  CsTrialResult result;
  result.records = std::move(init.records);

  // Reference statistics run over every projection acquired so far, not
  // just the calibration phase: the mean doubles as the dip baseline (see
  // solve_now) and the spread as the noise scale for the TV weight, and
  // both sharpen as rows accumulate.
  double ref_sum = 0.0;
  int ref_n = 0;
  for (const auto& rec : result.records) {
    ref_sum += *rec.reference_count;
    ++ref_n;
  }
  const auto ref_mean = [&]() { return ref_sum / static_cast<double>(ref_n); };
  const auto sigma_now = [&]() {
    const double mean = ref_mean();
    double ss = 0.0;
    for (const auto& rec : result.records) {
      const double d = *rec.reference_count - mean;
      ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(ref_n - 1));
  };

  const auto tv_weight = [&](int rows) {
    if (opt.lambda_override > 0.0) return opt.lambda_override;
    const double base = default_tv_weight(sigma_now(), rows, opt.characteristic_width_mhz,
                                          std::max(ref_mean(), 1.0));
    return detail::kTvWeightScale * base *
           std::max(1.0, std::sqrt(static_cast<double>(rows) / detail::kTvGrowthOnsetRows));
  };

  // Preallocated design matrix; rows are rebuilt from the stored tone sets
  // whenever the dictionary changes.
  const Dictionary* dict = &base_dict;
  Dictionary refined_storage;
  Eigen::MatrixXd design(opt.max_measurements, dict->cols());
  Eigen::VectorXd dips(opt.max_measurements);
  int m = 0;
  for (const auto& rec : result.records) {
    design.row(m) = design_row(*dict, rec.tone_indices);
    ++m;
  }

  Eigen::VectorXd warm;
  double step_hint = 0.0;
  const auto solve_now = [&]() {
    // Dips are measured against the running reference mean rather than each
    // row's own reference draw: per-row subtraction doubles the noise
    // variance of the data vector, while the accumulated mean is a far
    // quieter baseline that keeps the solver at the backend's nominal SNR.
    const double baseline = ref_mean();
    for (int i = 0; i < m; ++i) {
      dips[i] = baseline - result.records[static_cast<std::size_t>(i)].signal_count;
    }
    SolverOptions sopts;
    sopts.rel_tol = opt.solver_rel_tol;
    sopts.max_iterations = opt.solver_max_iterations;
    sopts.step_hint = step_hint;
    if (warm.size() == dict->cols()) sopts.warm_start = &warm;
    SolverReport rep = reconstruct(design.topRows(m), dips.head(m), tv_weight(m), sopts);
    warm = rep.a_hat;
    step_hint = rep.final_step;
    return rep;
  };

  bool converged = false;
  int convergence_count = 0;
  PeakList answer;

  const auto try_fit = [&](const Eigen::VectorXd& a_hat, PeakList* out) {
    return detail::fit_reconstruction(*dict, a_hat, opt.characteristic_width_mhz,
                                      opt.width_tolerance_fraction, out);
  };
  // The list reported for a projection count: after convergence the
  // best-known answer; before it, the Lorentzian fit of the current
  // reconstruction when it validates, the clustered detection otherwise.
  const auto reported_list = [&](const PeakList& detected, const Eigen::VectorXd& a_hat) {
    if (converged) return answer;
    PeakList fitted;
    if (try_fit(a_hat, &fitted)) return fitted;
    return detected;
  };
  const auto count_record = [&](const PeakList& pl) {
    CountRecord rec;
    rec.measurements = m;
    rec.peaks_found = pl.found_count();
    rec.success = pl.found_count() == 8;
    if (rec.success && truth != nullptr) {
      const auto err = detail::sorted_abs_errors(pl, *truth);
      double mean = 0.0;
      for (double e : err) mean += e;
      rec.delta_nu_mhz = mean / 8.0;
    }
    return rec;
  };

  ConvergenceState conv;
  conv.tolerance_mhz = opt.convergence_tolerance_mhz;
  conv.required_consecutive = opt.required_consecutive;

  SolverReport report = solve_now();
  PeakList peaks = detect_peaks(report.a_hat, *dict, opt.threshold_fraction);
  result.per_count.push_back(count_record(reported_list(peaks, report.a_hat)));
  conv.update(peaks);

  while (m < opt.max_measurements) {
    ProjectionRecord rec;
    rec.tone_indices = draw_projection(rng, grid_points, opt.tones);
    rec.tone_frequencies_mhz.reserve(rec.tone_indices.size());
    for (int j : rec.tone_indices) {
      rec.tone_frequencies_mhz.push_back(grid[static_cast<std::size_t>(j)]);
    }
    rec.signal_count = backend.measure(rec.tone_frequencies_mhz);
    rec.reference_count = backend.measure_reference();
    rec.sequence_index = m;
    design.row(m) = design_row(*dict, rec.tone_indices);
    ref_sum += *rec.reference_count;
    ++ref_n;
    result.records.push_back(std::move(rec));
    ++m;

    report = solve_now();
    peaks = detect_peaks(report.a_hat, *dict, opt.threshold_fraction);

    if (converged) {
      // Statistics mode (extend_to_max): keep folding new data into the
      // answer whenever the richer reconstruction still fits cleanly.
      PeakList fitted;
      if (try_fit(report.a_hat, &fitted)) answer = fitted;
    } else if (conv.update(peaks)) {
      if (result.refinement_events == 0) {
        // First stable peak list: densify the candidate grid around it and
        // keep acquiring on the refined dictionary.
        ++result.refinement_events;
        refined_storage = refine_dictionary(base_dict, peaks);
        dict = &refined_storage;
        design.resize(opt.max_measurements, dict->cols());
        for (int i = 0; i < m; ++i) {
          design.row(i) =
              design_row(*dict, result.records[static_cast<std::size_t>(i)].tone_indices);
        }
        warm.resize(0);  // dictionary changed; cold-start the refined solve
        step_hint = 0.0;
        report = solve_now();
        peaks = detect_peaks(report.a_hat, *dict, opt.threshold_fraction);
        // The stability streak carries across the refinement: when the
        // refined-grid list still matches the coarse one, convergence can
        // fire right here, gated on the reconstruction fitting cleanly.
        PeakList fitted;
        if (conv.update(peaks) && try_fit(report.a_hat, &fitted)) {
          converged = true;
          convergence_count = m;
          answer = fitted;
        }
      } else {
        // Stable again on the refined grid; accept once the reconstruction
        // fits eight clean Lorentzians of plausible width.  A streak whose
        // reconstruction will not fit keeps acquiring; every further stable
        // solve re-enters here and re-checks.
        PeakList fitted;
        if (try_fit(report.a_hat, &fitted)) {
          converged = true;
          convergence_count = m;
          answer = fitted;
        }
      }
    }

    result.per_count.push_back(count_record(reported_list(peaks, report.a_hat)));
    if (converged && !opt.extend_to_max) break;
  }

  if (!converged) {
    // Budget exhausted: report the fit when the final reconstruction
    // supports one, the detection otherwise.
    PeakList fitted;
    answer = try_fit(report.a_hat, &fitted) ? fitted : peaks;
    convergence_count = m;
  }
  result.reference_power_mean = ref_mean();
  result.noise_sigma_estimate = sigma_now();
  result.outcome.success = answer.found_count() == 8;
  result.outcome.estimated_peaks = answer;
  result.outcome.measurements_used = convergence_count;
  result.outcome.terminated_by = converged ? TrialOutcome::Termination::converged
                                           : TrialOutcome::Termination::max_measurements;
  detail::attach_errors(result.outcome, truth);
  return result;
}

// ---------------------------------------------------------------------------
// Raster baseline
// ---------------------------------------------------------------------------

// Indices of an n-point even sub-sampling of a full grid (endpoints kept).
inline std::vector<int> raster_subset_indices(int full_points, int n_points) {
  if (n_points < 2 || n_points > full_points) {
    throw std::invalid_argument("raster_subset_indices: invalid sub-sample size");
  }
  std::vector<int> idx(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    idx[static_cast<std::size_t>(i)] = static_cast<int>(
        std::lround(static_cast<double>(i) * (full_points - 1) / (n_points - 1)));
  }
  return idx;
}

// Fit a measured sweep (any grid) and package the outcome.
inline TrialOutcome raster_outcome_from_counts(const std::vector<double>& grid_mhz,
                                               const std::vector<double>& counts,
                                               const LorentzianFitOptions& fit_opt,
                                               const ResonanceSet* truth = nullptr) {
  TrialOutcome outcome;
  outcome.measurements_used = static_cast<int>(grid_mhz.size());
  if (static_cast<int>(grid_mhz.size()) < 3 * fit_opt.n_peaks) {
    return outcome;  // too few points to even attempt the fit
  }
  const LorentzianFit fit = fit_lorentzians(grid_mhz, counts, fit_opt);
  if (fit.ok) {
    outcome.success = true;
    outcome.estimated_peaks = fit.peaks;
    outcome.terminated_by = TrialOutcome::Termination::converged;
    detail::attach_errors(outcome, truth);
  }
  return outcome;
}

// Classic raster trial: measure n_points single tones evenly covering the
// full grid, then fit.  A diverged or implausible fit is a failed trial, not
// an error.
inline TrialOutcome run_raster_trial(MeasurementBackend& backend,
                                     const std::vector<double>& full_grid_mhz, int n_points,
                                     const LorentzianFitOptions& fit_opt,
                                     const ResonanceSet* truth = nullptr) {
  const int m = static_cast<int>(full_grid_mhz.size());
  if (n_points < 8 || n_points > m) {
    throw std::invalid_argument("run_raster_trial: n_points must lie in [8, grid size]");
  }
  const std::vector<int> idx = raster_subset_indices(m, n_points);
  std::vector<double> sub_grid, sub_counts;
  sub_grid.reserve(idx.size());
  sub_counts.reserve(idx.size());
  for (int j : idx) {
    const double nu = full_grid_mhz[static_cast<std::size_t>(j)];
    const double tone[1] = {nu};
    sub_grid.push_back(nu);
    sub_counts.push_back(backend.measure(tone));
  }
  return raster_outcome_from_counts(sub_grid, sub_counts, fit_opt, truth);
}

}  // namespace csesr
