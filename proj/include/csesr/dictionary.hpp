#pragma once

// Lorentzian dictionary and random tone selection.
//
// The dictionary matrix L has one row per measurement frequency and one
// column per candidate line: L(j, k) = unit-area Lorentzian centered at
// candidate k evaluated at measurement frequency j.  A sweep is modeled as
// L * a for a non-negative amplitude vector a.  Multi-tone projections sum a
// few rows of L, encoded by a sparse 0/1 sampling matrix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "csesr/peaks.hpp"
#include "csesr/rng.hpp"
#include "csesr/spectrum.hpp"

namespace csesr {

struct Dictionary {
  std::vector<double> measurement_grid_mhz;  // M frequencies, sorted ascending
  std::vector<double> candidate_grid_mhz;    // N candidate centers, sorted ascending
  std::vector<double> widths_mhz;            // per-candidate FWHM, length N
  // Spacing of the coarse candidate grid this dictionary was originally built
  // on.  Survives refinement so cluster merging keeps a stable length scale.
  double nominal_spacing_mhz = 0.0;
  Eigen::MatrixXd matrix;  // M x N, strictly positive

  int rows() const { return static_cast<int>(matrix.rows()); }
  int cols() const { return static_cast<int>(matrix.cols()); }
};

namespace detail {

inline void require_sorted(const std::vector<double>& v, const char* what) {
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    if (!(v[i] < v[i + 1])) {
      throw std::invalid_argument(std::string(what) + " must be strictly increasing");
    }
  }
}

inline double median_spacing(const std::vector<double>& v) {
  std::vector<double> d;
  d.reserve(v.size());
  for (std::size_t i = 0; i + 1 < v.size(); ++i) d.push_back(v[i + 1] - v[i]);
  if (d.empty()) return 0.0;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  return d[d.size() / 2];
}

}  // namespace detail

// Build the M x N dictionary.  widths may hold one shared FWHM or one per
// candidate.  The candidate grid must sample at least as densely as the
// measurement grid, otherwise lines can hide between candidates.
inline Dictionary build_dictionary(std::vector<double> measurement_grid_mhz,
                                   std::vector<double> candidate_grid_mhz,
                                   std::vector<double> widths_mhz) {
  if (measurement_grid_mhz.size() < 2) {
    throw std::invalid_argument("build_dictionary: need at least 2 measurement frequencies");
  }
  if (candidate_grid_mhz.empty()) {
    throw std::invalid_argument("build_dictionary: empty candidate grid");
  }
  detail::require_sorted(measurement_grid_mhz, "build_dictionary: measurement grid");
  detail::require_sorted(candidate_grid_mhz, "build_dictionary: candidate grid");
  if (widths_mhz.size() == 1) {
    widths_mhz.assign(candidate_grid_mhz.size(), widths_mhz[0]);
  }
  if (widths_mhz.size() != candidate_grid_mhz.size()) {
    throw std::invalid_argument("build_dictionary: need 1 width or one per candidate");
  }
  for (double w : widths_mhz) {
    if (!(w > 0)) throw std::invalid_argument("build_dictionary: widths must be positive");
  }
  const double meas_spacing = detail::median_spacing(measurement_grid_mhz);
  const double cand_spacing = detail::median_spacing(candidate_grid_mhz);
  if (cand_spacing > meas_spacing * (1.0 + 1e-9)) {
    throw std::invalid_argument(
        "build_dictionary: candidate grid must be at least as dense as the measurement grid");
  }

  Dictionary dict;
  dict.measurement_grid_mhz = std::move(measurement_grid_mhz);
  dict.candidate_grid_mhz = std::move(candidate_grid_mhz);
  dict.widths_mhz = std::move(widths_mhz);
  dict.nominal_spacing_mhz =
      dict.candidate_grid_mhz.size() > 1 ? cand_spacing : meas_spacing;
  const int m = static_cast<int>(dict.measurement_grid_mhz.size());
  const int n = static_cast<int>(dict.candidate_grid_mhz.size());
  dict.matrix.resize(m, n);
  for (int k = 0; k < n; ++k) {
    const double c = dict.candidate_grid_mhz[static_cast<std::size_t>(k)];
    const double w = dict.widths_mhz[static_cast<std::size_t>(k)];
    for (int j = 0; j < m; ++j) {
      dict.matrix(j, k) = lorentzian(dict.measurement_grid_mhz[static_cast<std::size_t>(j)], c, w);
    }
  }
  return dict;
}

// Convenience: uniform candidate grid with the requested spacing over the
// measurement window, one shared width.
inline Dictionary build_uniform_dictionary(const std::vector<double>& measurement_grid_mhz,
                                           double candidate_spacing_mhz, double width_mhz) {
  if (measurement_grid_mhz.size() < 2) {
    throw std::invalid_argument("build_uniform_dictionary: need at least 2 frequencies");
  }
  if (!(candidate_spacing_mhz > 0)) {
    throw std::invalid_argument("build_uniform_dictionary: spacing must be positive");
  }
  const double lo = measurement_grid_mhz.front();
  const double hi = measurement_grid_mhz.back();
  const int n = static_cast<int>(std::floor((hi - lo) / candidate_spacing_mhz + 1e-9)) + 1;
  std::vector<double> cand(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) cand[static_cast<std::size_t>(k)] = lo + candidate_spacing_mhz * k;
  return build_dictionary(measurement_grid_mhz, std::move(cand), {width_mhz});
}

// Rebuild the dictionary around located peaks: candidates are packed four
// times denser within +/- 2 widths of every peak, while the coarse backbone
// away from the peaks is thinned to every fourth point.  Total size stays
// comparable; resolution concentrates where the lines are.
inline Dictionary refine_dictionary(const Dictionary& base, const PeakList& peaks) {
  peaks.validate();
  if (peaks.found_count() == 0) return base;
  if (base.nominal_spacing_mhz <= 0) {
    throw std::invalid_argument("refine_dictionary: base dictionary has no nominal spacing");
  }
  const double lo = base.measurement_grid_mhz.front();
  const double hi = base.measurement_grid_mhz.back();
  const double fine = base.nominal_spacing_mhz / 4.0;

  struct Zone {
    double lo, hi, width;
  };
  std::vector<Zone> zones;
  for (int i = 0; i < peaks.found_count(); ++i) {
    const double c = peaks.centers_mhz[static_cast<std::size_t>(i)];
    const double w = peaks.widths_mhz[static_cast<std::size_t>(i)];
    if (!(w > 0)) throw std::invalid_argument("refine_dictionary: peak widths must be positive");
    zones.push_back({std::max(lo, c - 2.0 * w), std::min(hi, c + 2.0 * w), w});
  }

  std::vector<double> cand;
  std::vector<double> widths;
  // Thinned backbone, skipping points that fall inside a zone.
  const auto in_zone = [&zones](double nu) {
    for (const auto& z : zones) {
      if (nu >= z.lo && nu <= z.hi) return true;
    }
    return false;
  };
  for (std::size_t k = 0; k < base.candidate_grid_mhz.size(); k += 4) {
    const double nu = base.candidate_grid_mhz[k];
    if (!in_zone(nu)) {
      cand.push_back(nu);
      widths.push_back(base.widths_mhz[k]);
    }
  }
  // Dense coverage of each zone, carrying the estimated width of its peak.
  for (const auto& z : zones) {
    for (double nu = z.lo; nu <= z.hi + fine * 1e-6; nu += fine) {
      cand.push_back(std::min(nu, hi));
      widths.push_back(z.width);
    }
  }
  // Sort jointly and drop near-duplicates from overlapping zones.
  std::vector<std::size_t> order(cand.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&cand](std::size_t a, std::size_t b) { return cand[a] < cand[b]; });
  std::vector<double> cand_s, width_s;
  cand_s.reserve(cand.size());
  width_s.reserve(cand.size());
  for (std::size_t i : order) {
    if (!cand_s.empty() && cand[i] - cand_s.back() < fine * 0.5) continue;
    cand_s.push_back(cand[i]);
    width_s.push_back(widths[i]);
  }

  Dictionary refined = build_dictionary(base.measurement_grid_mhz, std::move(cand_s),
                                        std::move(width_s));
  refined.nominal_spacing_mhz = base.nominal_spacing_mhz;
  return refined;
}

// Sparse 0/1 sampling operator: row i applies simultaneous tones at the
// stored measurement-grid indices.  Applied to the dictionary it sums the
// corresponding rows of L.
struct SamplingMatrix {
  int n_columns = 0;                     // M, number of measurement frequencies
  std::vector<std::vector<int>> rows;    // per projection: sorted distinct indices

  int n_rows() const { return static_cast<int>(rows.size()); }

  void append_row(std::vector<int> tone_indices) {
    if (tone_indices.empty() || tone_indices.size() > 4) {
      throw std::invalid_argument("SamplingMatrix: rows carry 1 to 4 tones");
    }
    std::sort(tone_indices.begin(), tone_indices.end());
    for (std::size_t t = 0; t < tone_indices.size(); ++t) {
      if (tone_indices[t] < 0 || tone_indices[t] >= n_columns) {
        throw std::invalid_argument("SamplingMatrix: tone index out of range");
      }
      if (t > 0 && tone_indices[t] == tone_indices[t - 1]) {
        throw std::invalid_argument("SamplingMatrix: duplicate tone index");
      }
    }
    rows.push_back(std::move(tone_indices));
  }

  Eigen::MatrixXd to_dense() const {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n_rows(), n_columns);
    for (int i = 0; i < n_rows(); ++i) {
      for (int j : rows[static_cast<std::size_t>(i)]) s(i, j) = 1.0;
    }
    return s;
  }
};

// Draw `tones` distinct measurement-grid indices uniformly at random
// (partial Fisher-Yates), sorted ascending.  Indices listed in `excluded`
// are never chosen.
inline std::vector<int> draw_projection(SmallRng& rng, int n_columns, int tones,
                                        const std::vector<int>& excluded = {}) {
  if (tones < 1 || tones > 4) {
    throw std::invalid_argument("draw_projection: tones must be between 1 and 4");
  }
  std::vector<int> pool;
  pool.reserve(static_cast<std::size_t>(n_columns));
  if (excluded.empty()) {
    for (int j = 0; j < n_columns; ++j) pool.push_back(j);
  } else {
    std::vector<bool> drop(static_cast<std::size_t>(n_columns), false);
    for (int j : excluded) {
      if (j >= 0 && j < n_columns) drop[static_cast<std::size_t>(j)] = true;
    }
    for (int j = 0; j < n_columns; ++j) {
      if (!drop[static_cast<std::size_t>(j)]) pool.push_back(j);
    }
  }
  const int available = static_cast<int>(pool.size());
  if (available < tones) {
    throw std::invalid_argument("draw_projection: fewer available grid points than tones");
  }
  std::vector<int> picked(static_cast<std::size_t>(tones));
  for (int t = 0; t < tones; ++t) {
    const std::size_t j =
        static_cast<std::size_t>(t) +
        static_cast<std::size_t>(rng.next_below(static_cast<std::uint64_t>(available - t)));
    std::swap(pool[static_cast<std::size_t>(t)], pool[j]);
    picked[static_cast<std::size_t>(t)] = pool[static_cast<std::size_t>(t)];
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

// One design-matrix row for a multi-tone projection: sum of dictionary rows
// at the tone indices.
inline Eigen::RowVectorXd design_row(const Dictionary& dict, const std::vector<int>& tone_indices) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(dict.cols());
  for (int j : tone_indices) {
    if (j < 0 || j >= dict.rows()) {
      throw std::invalid_argument("design_row: tone index out of range");
    }
    row += dict.matrix.row(j);
  }
  return row;
}

// Dense S * L product for a full sampling matrix.
inline Eigen::MatrixXd assemble_design(const SamplingMatrix& sampling, const Dictionary& dict) {
  if (sampling.n_columns != dict.rows()) {
    throw std::invalid_argument("assemble_design: sampling/dictionary size mismatch");
  }
  Eigen::MatrixXd design(sampling.n_rows(), dict.cols());
  for (int i = 0; i < sampling.n_rows(); ++i) {
    design.row(i) = design_row(dict, sampling.rows[static_cast<std::size_t>(i)]);
  }
  return design;
}

}  // namespace csesr
