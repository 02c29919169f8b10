#pragma once

// Forward model of a continuous-wave NV-ensemble ESR spectrum.
//
// An external magnetic field splits the m_s = +/-1 levels of each of the four
// NV orientation families, giving eight Lorentzian dips in the fluorescence
// signal.  This header computes the dip positions from a bias field and
// synthesizes (optionally noisy) spectra on a frequency grid.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "csesr/rng.hpp"

namespace csesr {

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  if (n < 1e-12) throw std::invalid_argument("normalized: zero-length vector");
  return {a[0] / n, a[1] / n, a[2] / n};
}

// The four NV symmetry axes of the diamond lattice (unit vectors along the
// [111] directions).  Any two distinct axes have dot product -1/3.
inline std::array<Vec3, 4> tetrahedral_axes() {
  const double s = 1.0 / std::sqrt(3.0);
  return {{{s, s, s}, {s, -s, -s}, {-s, s, -s}, {-s, -s, s}}};
}

// Spin-Hamiltonian constants.  Frequencies in MHz, fields in Gauss.
struct NVConstants {
  double zero_field_splitting_mhz = 2870.0;
  double gyromagnetic_mhz_per_gauss = 2.87;
  std::array<Vec3, 4> axes = tetrahedral_axes();

  void validate() const {
    if (!(zero_field_splitting_mhz > 0)) {
      throw std::invalid_argument("NVConstants: zero-field splitting must be positive");
    }
    if (!(gyromagnetic_mhz_per_gauss > 0)) {
      throw std::invalid_argument("NVConstants: gyromagnetic ratio must be positive");
    }
    for (const auto& ax : axes) {
      if (std::abs(norm(ax) - 1.0) > 1e-9) {
        throw std::invalid_argument("NVConstants: axes must be unit vectors");
      }
    }
  }
};

// Static bias field: magnitude and direction (direction need not be unit;
// it is normalized on use).
struct BiasField {
  double magnitude_gauss = 0.0;
  Vec3 direction = {0.0, 0.0, 1.0};

  void validate() const {
    if (!(magnitude_gauss >= 0)) {
      throw std::invalid_argument("BiasField: magnitude must be non-negative");
    }
    if (norm(direction) < 1e-12) {
      throw std::invalid_argument("BiasField: direction must be non-zero");
    }
  }
};

// Closed frequency interval scanned by the experiment.
struct FrequencyWindow {
  double lo_mhz = 0.0;
  double hi_mhz = 0.0;

  double width_mhz() const { return hi_mhz - lo_mhz; }
  bool contains(double nu_mhz) const { return nu_mhz >= lo_mhz && nu_mhz <= hi_mhz; }

  void validate() const {
    if (!(hi_mhz > lo_mhz)) {
      throw std::invalid_argument("FrequencyWindow: hi must exceed lo");
    }
  }
};

// Area-normalized Lorentzian evaluated at nu; width is the FWHM.
// Peak value is 2 / (pi * fwhm).
inline double lorentzian(double nu_mhz, double center_mhz, double fwhm_mhz) {
  const double u = 2.0 * (nu_mhz - center_mhz) / fwhm_mhz;
  return (2.0 / (std::numbers::pi * fwhm_mhz)) / (1.0 + u * u);
}

// The eight resonance lines of one spectrum, sorted by center frequency.
// amplitudes are the areas multiplying the unit-area Lorentzians, so an
// isolated dip has depth amplitude * 2 / (pi * width).
struct ResonanceSet {
  std::array<double, 8> centers_mhz{};
  std::array<double, 8> widths_mhz{};
  std::array<double, 8> amplitudes{};

  // Fluorescence deficit at nu (sum of all eight dips).
  double dip_at(double nu_mhz) const {
    double d = 0.0;
    for (int k = 0; k < 8; ++k) {
      d += amplitudes[k] * lorentzian(nu_mhz, centers_mhz[k], widths_mhz[k]);
    }
    return d;
  }

  double min_pairwise_gap_mhz() const {
    double g = std::numeric_limits<double>::infinity();
    for (int i = 0; i + 1 < 8; ++i) g = std::min(g, centers_mhz[i + 1] - centers_mhz[i]);
    return g;
  }
};

// Resonance positions for a bias field: each NV axis contributes the pair
// D +/- gamma * |B . axis|.  Throws if any line falls outside the window.
// widths/amplitudes are per-line (index after sorting); pass 1 value to share.
inline ResonanceSet compute_resonances(const BiasField& field, const NVConstants& consts,
                                       const FrequencyWindow& window,
                                       const std::vector<double>& widths_mhz,
                                       const std::vector<double>& amplitudes) {
  consts.validate();
  field.validate();
  window.validate();
  if (widths_mhz.size() != 1 && widths_mhz.size() != 8) {
    throw std::invalid_argument("compute_resonances: need 1 or 8 widths");
  }
  if (amplitudes.size() != 1 && amplitudes.size() != 8) {
    throw std::invalid_argument("compute_resonances: need 1 or 8 amplitudes");
  }
  for (double w : widths_mhz) {
    if (!(w > 0)) throw std::invalid_argument("compute_resonances: widths must be positive");
  }
  for (double a : amplitudes) {
    if (!(a > 0)) throw std::invalid_argument("compute_resonances: amplitudes must be positive");
  }

  const Vec3 dir = normalized(field.direction);
  std::array<double, 8> centers{};
  int n = 0;
  for (const auto& ax : consts.axes) {
    const double b_par = field.magnitude_gauss * std::abs(dot(dir, ax));
    const double shift = consts.gyromagnetic_mhz_per_gauss * b_par;
    centers[n++] = consts.zero_field_splitting_mhz - shift;
    centers[n++] = consts.zero_field_splitting_mhz + shift;
  }
  std::sort(centers.begin(), centers.end());

  ResonanceSet res;
  res.centers_mhz = centers;
  for (int k = 0; k < 8; ++k) {
    if (!window.contains(centers[k])) {
      throw std::invalid_argument("compute_resonances: line at " + std::to_string(centers[k]) +
                                  " MHz falls outside the scan window");
    }
    res.widths_mhz[k] = widths_mhz.size() == 1 ? widths_mhz[0] : widths_mhz[k];
    res.amplitudes[k] = amplitudes.size() == 1 ? amplitudes[0] : amplitudes[k];
  }
  return res;
}

// Evenly spaced grid spanning the window, n points inclusive of both ends.
inline std::vector<double> make_grid(const FrequencyWindow& window, int n_points) {
  window.validate();
  if (n_points < 2) throw std::invalid_argument("make_grid: need at least 2 points");
  std::vector<double> grid(static_cast<std::size_t>(n_points));
  const double step = window.width_mhz() / (n_points - 1);
  for (int j = 0; j < n_points; ++j) grid[static_cast<std::size_t>(j)] = window.lo_mhz + step * j;
  grid.back() = window.hi_mhz;
  return grid;
}

// One synthesized sweep: clean and noisy photon counts over a grid.
// noise_sigma is derived from the signal-to-noise ratio as
//   sigma = (deepest clean dip) / snr,
// i.e. snr measures dip contrast against count noise.
struct SpectrumSample {
  std::vector<double> grid_mhz;
  std::vector<double> clean_counts;
  std::vector<double> noisy_counts;
  double reference_power = 0.0;
  double snr = 0.0;
  double noise_sigma = 0.0;
};

// Largest fluorescence deficit of `res` over `grid` (used to anchor SNR).
inline double max_dip_depth(const ResonanceSet& res, const std::vector<double>& grid_mhz) {
  double depth = 0.0;
  for (double nu : grid_mhz) depth = std::max(depth, res.dip_at(nu));
  return depth;
}

// Synthesize a full sweep.  snr may be +infinity for noiseless data.  The
// noise draw at grid index j depends only on (rng_seed, j).
inline SpectrumSample synthesize_spectrum(const ResonanceSet& res,
                                          const std::vector<double>& grid_mhz,
                                          double reference_power, double snr,
                                          std::uint64_t rng_seed) {
  if (grid_mhz.empty()) throw std::invalid_argument("synthesize_spectrum: empty grid");
  if (!(reference_power > 0)) {
    throw std::invalid_argument("synthesize_spectrum: reference power must be positive");
  }
  if (!(snr > 0)) throw std::invalid_argument("synthesize_spectrum: snr must be positive");

  SpectrumSample s;
  s.grid_mhz = grid_mhz;
  s.reference_power = reference_power;
  s.snr = snr;
  s.clean_counts.resize(grid_mhz.size());
  for (std::size_t j = 0; j < grid_mhz.size(); ++j) {
    s.clean_counts[j] = reference_power - res.dip_at(grid_mhz[j]);
  }
  const double depth = max_dip_depth(res, grid_mhz);
  s.noise_sigma = std::isinf(snr) ? 0.0 : depth / snr;
  s.noisy_counts.resize(grid_mhz.size());
  for (std::size_t j = 0; j < grid_mhz.size(); ++j) {
    s.noisy_counts[j] = s.clean_counts[j] + s.noise_sigma * counter_gaussian(rng_seed, j);
  }
  return s;
}

}  // namespace csesr
