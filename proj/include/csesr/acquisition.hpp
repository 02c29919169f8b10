#pragma once

// Measurement acquisition: the backend seam between protocols and hardware,
// a simulated photon-count backend, and the shared initial phase that
// calibrates reference power and count noise.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "csesr/dictionary.hpp"
#include "csesr/rng.hpp"
#include "csesr/solver.hpp"
#include "csesr/spectrum.hpp"

namespace csesr {

// One multi-tone projection: which frequencies were applied and what was
// counted.  reference_count is present when the protocol interleaves an
// off-resonance reference with every projection.
struct ProjectionRecord {
  std::vector<int> tone_indices;             // measurement-grid indices, sorted
  std::vector<double> tone_frequencies_mhz;  // same order as tone_indices
  double signal_count = 0.0;
  std::optional<double> reference_count;
  int sequence_index = 0;  // strictly increasing within a trial
};

// Hardware seam.  measure() drives the given tones simultaneously and
// returns the photon count; measure_reference() counts with no drive
// applied.  Implementations must be deterministic in their construction
// parameters and call order.
class MeasurementBackend {
 public:
  virtual ~MeasurementBackend() = default;
  virtual double measure(std::span<const double> tone_frequencies_mhz) = 0;
  virtual double measure_reference() = 0;
  virtual const FrequencyWindow& window() const = 0;
};

// Synthetic backend: counts follow the resonance model with additive
// Gaussian count noise.  Multiple simultaneous tones add their dips
// linearly.  The k-th count drawn depends only on (seed, k), so identical
// call sequences reproduce identical data and a prefix of a sweep matches
// the full sweep point for point.
class SimulatedBackend final : public MeasurementBackend {
 public:
  SimulatedBackend(ResonanceSet truth, FrequencyWindow window, double reference_power,
                   double noise_sigma, std::uint64_t seed)
      : truth_(truth), window_(window), reference_power_(reference_power),
        noise_sigma_(noise_sigma), seed_(seed) {
    window_.validate();
    if (!(reference_power > 0)) {
      throw std::invalid_argument("SimulatedBackend: reference power must be positive");
    }
    if (noise_sigma < 0) {
      throw std::invalid_argument("SimulatedBackend: negative noise level");
    }
  }

  double measure(std::span<const double> tone_frequencies_mhz) override {
    if (tone_frequencies_mhz.empty() || tone_frequencies_mhz.size() > 4) {
      throw std::invalid_argument("SimulatedBackend: 1 to 4 simultaneous tones");
    }
    double clean = reference_power_;
    for (double nu : tone_frequencies_mhz) {
      if (!window_.contains(nu)) {
        throw std::invalid_argument("SimulatedBackend: tone outside the scan window");
      }
      clean -= truth_.dip_at(nu);
    }
    return clean + noise_sigma_ * counter_gaussian(seed_, draw_counter_++);
  }

  double measure_reference() override {
    return reference_power_ + noise_sigma_ * counter_gaussian(seed_, draw_counter_++);
  }

  const FrequencyWindow& window() const override { return window_; }
  const ResonanceSet& truth() const { return truth_; }
  double reference_power() const { return reference_power_; }
  double noise_sigma() const { return noise_sigma_; }
  std::uint64_t draws_made() const { return draw_counter_; }

 private:
  ResonanceSet truth_;
  FrequencyWindow window_;
  double reference_power_;
  double noise_sigma_;
  std::uint64_t seed_;
  std::uint64_t draw_counter_ = 0;
};

// Noise level that realizes a target dip SNR for a given truth: the deepest
// clean dip over the grid divided by the SNR.  Infinite SNR gives zero noise.
inline double noise_sigma_for_snr(const ResonanceSet& truth, const std::vector<double>& grid_mhz,
                                  double snr) {
  if (!(snr > 0)) throw std::invalid_argument("noise_sigma_for_snr: snr must be positive");
  if (grid_mhz.empty()) throw std::invalid_argument("noise_sigma_for_snr: empty grid");
  return std::isinf(snr) ? 0.0 : max_dip_depth(truth, grid_mhz) / snr;
}

// Dip vector straight from projection records (requires references).
inline Eigen::VectorXd dip_vector_from_counts(const std::vector<ProjectionRecord>& records) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].reference_count.has_value()) {
      throw std::invalid_argument("dip_vector_from_counts: record lacks a reference count");
    }
    y[static_cast<Eigen::Index>(i)] = *records[i].reference_count - records[i].signal_count;
  }
  return y;
}

struct InitialPhaseResult {
  std::vector<ProjectionRecord> records;   // sequence_index 0 .. n_initial-1
  double reference_power_mean = 0.0;       // mean of the reference counts
  double noise_sigma_estimate = 0.0;       // sample std-dev of the reference counts
};

// Calibration phase shared by the adaptive protocol: n_initial random
// multi-tone projections, each paired with a reference, estimating the
// reference power and the count noise from the reference scatter.
inline InitialPhaseResult run_initial_phase(MeasurementBackend& backend,
                                            const std::vector<double>& measurement_grid_mhz,
                                            int n_initial, int tones, SmallRng& rng) {
  if (n_initial < 4) {
    throw std::invalid_argument("run_initial_phase: need at least 4 calibration projections");
  }
  const int m = static_cast<int>(measurement_grid_mhz.size());
  InitialPhaseResult out;
  out.records.reserve(static_cast<std::size_t>(n_initial));
  for (int i = 0; i < n_initial; ++i) {
    ProjectionRecord rec;
    rec.tone_indices = draw_projection(rng, m, tones);
    rec.tone_frequencies_mhz.reserve(rec.tone_indices.size());
    for (int j : rec.tone_indices) {
      rec.tone_frequencies_mhz.push_back(measurement_grid_mhz[static_cast<std::size_t>(j)]);
    }
    rec.signal_count = backend.measure(rec.tone_frequencies_mhz);
    rec.reference_count = backend.measure_reference();
    rec.sequence_index = i;
    out.records.push_back(std::move(rec));
  }
  double sum = 0.0;
  for (const auto& r : out.records) sum += *r.reference_count;
  out.reference_power_mean = sum / n_initial;
  double ss = 0.0;
  for (const auto& r : out.records) {
    const double d = *r.reference_count - out.reference_power_mean;
    ss += d * d;
  }
  out.noise_sigma_estimate = std::sqrt(ss / (n_initial - 1));
  return out;
}

}  // namespace csesr
