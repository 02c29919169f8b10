#pragma once

// Trial statistics: peak matching against ground truth and aggregation of
// trial outcomes into the figures of merit used throughout —
//   P       success probability (exactly eight peaks located),
//   delta_nu  mean absolute center error of successful trials,
//   delta_nu / sqrt(P)  the normalized error, and
//   eta = delta_nu * sqrt(T) / gamma  the sensitivity proxy, with T the mean
//   number of measurement units a successful trial consumed.

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>

#include "csesr/peaks.hpp"
#include "csesr/protocols.hpp"
#include "csesr/spectrum.hpp"

namespace csesr {

// Per-peak absolute center errors by sorted-order pairing; empty when the
// estimate does not have exactly eight peaks.
inline std::optional<std::array<double, 8>> match_peaks(const PeakList& estimate,
                                                        const ResonanceSet& truth) {
  estimate.validate();
  if (estimate.found_count() != 8) return std::nullopt;
  return detail::sorted_abs_errors(estimate, truth);
}

// delta_nu / sqrt(P); undefined at P = 0.
inline std::optional<double> normalized_error(double mean_delta_nu_mhz,
                                              double success_probability) {
  if (success_probability < 0.0 || success_probability > 1.0) {
    throw std::invalid_argument("normalized_error: probability outside [0, 1]");
  }
  if (mean_delta_nu_mhz < 0.0) {
    throw std::invalid_argument("normalized_error: negative error");
  }
  if (success_probability == 0.0) return std::nullopt;
  return mean_delta_nu_mhz / std::sqrt(success_probability);
}

struct MetricsSummary {
  int n_trials = 0;
  int n_successes = 0;
  double success_probability = 0.0;
  // Statistics over successful trials with known truth; absent when no such
  // trial exists.
  std::optional<double> mean_delta_nu_mhz;
  std::optional<double> std_delta_nu_mhz;
  std::optional<double> normalized_error_mhz;
  std::optional<double> mean_measurements;  // over successful trials
  std::optional<double> sensitivity_eta;    // delta_nu * sqrt(T) / gamma
};

// Aggregate a batch of trials of one configuration.
inline MetricsSummary summarize(std::span<const TrialOutcome> outcomes,
                                double gyromagnetic_mhz_per_gauss = 2.87) {
  if (outcomes.empty()) throw std::invalid_argument("summarize: no trials");
  if (!(gyromagnetic_mhz_per_gauss > 0)) {
    throw std::invalid_argument("summarize: gyromagnetic ratio must be positive");
  }
  MetricsSummary s;
  s.n_trials = static_cast<int>(outcomes.size());
  double err_sum = 0.0, err_sq_sum = 0.0, meas_sum = 0.0;
  int n_err = 0;
  for (const auto& t : outcomes) {
    if (!t.success) continue;
    ++s.n_successes;
    if (t.delta_nu_mhz.has_value()) {
      err_sum += *t.delta_nu_mhz;
      err_sq_sum += *t.delta_nu_mhz * *t.delta_nu_mhz;
      meas_sum += static_cast<double>(t.measurements_used);
      ++n_err;
    }
  }
  s.success_probability = static_cast<double>(s.n_successes) / s.n_trials;
  if (n_err > 0) {
    const double mean = err_sum / n_err;
    s.mean_delta_nu_mhz = mean;
    const double var = n_err > 1 ? (err_sq_sum - n_err * mean * mean) / (n_err - 1) : 0.0;
    s.std_delta_nu_mhz = std::sqrt(std::max(var, 0.0));
    s.normalized_error_mhz = normalized_error(mean, s.success_probability);
    const double mean_meas = meas_sum / n_err;
    s.mean_measurements = mean_meas;
    s.sensitivity_eta = mean * std::sqrt(mean_meas) / gyromagnetic_mhz_per_gauss;
  }
  return s;
}

}  // namespace csesr
