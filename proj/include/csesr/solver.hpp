#pragma once

// Non-negative, total-variation-regularized recovery of dictionary
// amplitudes from multi-tone dip measurements:
//
//   minimize  || design * a - dips ||^2  +  lambda * TV(a)   over a >= 0,
//
// with TV(a) = sum_i |a_{i+1} - a_i| (forward differences, reflective ends,
// so TV of a constant vector is zero).  The solver is a monotone accelerated
// proximal-gradient loop whose prox step is an exact 1-D TV denoiser; for
// tiny problems an exhaustive grid-descent oracle provides an independent
// reference minimizer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "csesr/dictionary.hpp"

namespace csesr {

// Forward-difference total variation.
inline double total_variation(const Eigen::VectorXd& x) {
  double tv = 0.0;
  for (Eigen::Index i = 0; i + 1 < x.size(); ++i) tv += std::abs(x[i + 1] - x[i]);
  return tv;
}

// Exact solution of  min_x 1/2 ||x - input||^2 + lambda * TV(x)  in O(n)
// (Condat's direct taut-string algorithm).  lambda = 0 returns the input.
inline Eigen::VectorXd tv_denoise(const Eigen::VectorXd& input, double lambda) {
  if (lambda < 0) throw std::invalid_argument("tv_denoise: negative weight");
  const Eigen::Index n = input.size();
  Eigen::VectorXd out(n);
  if (n == 0) return out;
  if (n == 1 || lambda == 0.0) {
    out = input;
    return out;
  }

  Eigen::Index k = 0, k0 = 0;      // current sample / start of current segment
  Eigen::Index kminus = 0;         // last position where umin hit +lambda
  Eigen::Index kplus = 0;          // last position where umax hit -lambda
  double umin = lambda, umax = -lambda;               // running dual sums
  double vmin = input[0] - lambda, vmax = input[0] + lambda;  // segment value bounds
  const double twolambda = 2.0 * lambda;
  const double minlambda = -lambda;
  for (;;) {
    while (k == n - 1) {  // right boundary reached
      if (umin < 0.0) {   // negative jump needed: emit segment at vmin
        do out[k0++] = vmin;
        while (k0 <= kminus);
        k = kminus = k0;
        vmin = input[k];
        umax = vmin + lambda - vmax;
        umin = lambda;
      } else if (umax > 0.0) {  // positive jump needed: emit segment at vmax
        do out[k0++] = vmax;
        while (k0 <= kplus);
        k = kplus = k0;
        vmax = input[k];
        umin = vmax + minlambda - vmin;
        umax = minlambda;
      } else {  // tail is one flat segment
        vmin += umin / static_cast<double>(k - k0 + 1);
        do out[k0++] = vmin;
        while (k0 <= k);
        return out;
      }
    }
    umin += input[k + 1] - vmin;
    if (umin < minlambda) {  // lower dual escaped: negative jump at kminus
      do out[k0++] = vmin;
      while (k0 <= kminus);
      k = kminus = kplus = k0;
      vmin = input[k];
      vmax = vmin + twolambda;
      umin = lambda;
      umax = minlambda;
    } else {
      umax += input[k + 1] - vmax;
      if (umax > lambda) {  // upper dual escaped: positive jump at kplus
        do out[k0++] = vmax;
        while (k0 <= kplus);
        k = kminus = kplus = k0;
        vmax = input[k];
        vmin = vmax - twolambda;
        umin = lambda;
        umax = minlambda;
      } else {  // both duals inside: extend the segment
        ++k;
        if (umin >= lambda) {
          kminus = k;
          vmin += (umin - lambda) / static_cast<double>(kminus - k0 + 1);
          umin = lambda;
        }
        if (umax <= minlambda) {
          kplus = k;
          vmax += (umax + lambda) / static_cast<double>(kplus - k0 + 1);
          umax = minlambda;
        }
      }
    }
  }
}

// Prox of lambda*TV restricted to the non-negative orthant.  In 1-D the TV
// prox commutes with clipping to an interval, so this is exact.
inline Eigen::VectorXd tv_denoise_nonneg(const Eigen::VectorXd& input, double lambda) {
  return tv_denoise(input, lambda).cwiseMax(0.0);
}

// One inverse problem instance: assembled design matrix (sampling applied to
// the dictionary), measured dips, TV weight.  epsilon records the data-fit
// slack the acquisition considers acceptable; the penalized objective drives
// the fit itself.
struct TVProblem {
  Eigen::MatrixXd design;  // (S * L), one row per projection
  Eigen::VectorXd dips;    // y, one entry per projection
  double epsilon = 0.0;
  double lambda = 0.0;

  void validate() const {
    if (design.rows() < 1) throw std::invalid_argument("TVProblem: no measurements");
    if (design.cols() < 1) throw std::invalid_argument("TVProblem: empty dictionary");
    if (dips.size() != design.rows()) {
      throw std::invalid_argument("TVProblem: design/dips size mismatch");
    }
    if (!(lambda > 0)) throw std::invalid_argument("TVProblem: lambda must be positive");
    if (epsilon < 0) throw std::invalid_argument("TVProblem: epsilon must be non-negative");
  }
};

inline TVProblem make_tv_problem(const SamplingMatrix& sampling, const Dictionary& dict,
                                 Eigen::VectorXd dips, double lambda, double epsilon = 0.0) {
  TVProblem p;
  p.design = assemble_design(sampling, dict);
  p.dips = std::move(dips);
  p.lambda = lambda;
  p.epsilon = epsilon;
  p.validate();
  return p;
}

struct SolverOptions {
  double rel_tol = 1e-6;     // stop when the objective improves by less than this, relatively
  int max_iterations = 5000;
  const Eigen::VectorXd* warm_start = nullptr;  // optional; clipped to >= 0
  double step_hint = 0.0;    // initial gradient step; 0 = estimate spectrally
};

struct SolverReport {
  Eigen::VectorXd a_hat;     // recovered amplitudes, entrywise >= 0
  double objective = std::numeric_limits<double>::infinity();
  double residual_norm = 0.0;  // ||design * a_hat - dips||, recomputed at exit
  int iterations = 0;
  bool converged = false;
  double final_step = 0.0;   // last accepted gradient step (reusable as a hint)
  std::vector<double> objective_history;  // objective after every iteration
};

// Default TV weight from the estimated count noise: grows with noise level
// and with the square root of the number of projections.  The division by
// pi * characteristic_width converts the count-scaled quantity into the units
// of the TV weight: a unit-area atom of width w with dip depth d carries
// amplitude a = pi*w*d/2, so its TV (= 2a) is pi*w per unit of depth, and a
// weight quoted in depth units must be divided by pi*w to act on amplitudes.
// Floored at a tiny positive value relative to the count scale so the weight
// stays valid on noiseless data.
inline double default_tv_weight(double noise_sigma_estimate, int n_rows,
                                double characteristic_width_mhz, double count_scale) {
  if (noise_sigma_estimate < 0) {
    throw std::invalid_argument("default_tv_weight: negative noise estimate");
  }
  if (n_rows < 1) throw std::invalid_argument("default_tv_weight: need at least one row");
  if (!(characteristic_width_mhz > 0)) {
    throw std::invalid_argument("default_tv_weight: width must be positive");
  }
  constexpr double kPi = 3.14159265358979323846;
  const double floor = 1e-9 * std::max(count_scale, 1e-12);
  const double scaled = 2.0 * noise_sigma_estimate * std::sqrt(static_cast<double>(n_rows)) /
                        (kPi * characteristic_width_mhz);
  return std::max(scaled, floor);
}

namespace detail {

// Largest singular value squared of `a`, from below, via a few rounds of
// power iteration on a^T a.  The all-positive matrices used here converge in
// a handful of rounds; backtracking absorbs any underestimate.
template <class DesignT>
double squared_spectral_norm(const Eigen::MatrixBase<DesignT>& a) {
  const Eigen::Index n = a.cols();
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
  double s2 = 0.0;
  for (int round = 0; round < 12; ++round) {
    Eigen::VectorXd w = a * v;
    s2 = w.squaredNorm();
    Eigen::VectorXd z = a.transpose() * w;
    const double zn = z.norm();
    if (zn < 1e-300) break;
    v = z / zn;
  }
  return s2;
}

}  // namespace detail

// Monotone accelerated proximal-gradient solve of the TV-regularized
// non-negative least-squares problem.  The objective history is recorded per
// iteration and is non-increasing by construction; `converged` reports
// whether the relative-improvement test fired before the iteration cap.
template <class DesignT, class DipsT>
SolverReport reconstruct(const Eigen::MatrixBase<DesignT>& design,
                         const Eigen::MatrixBase<DipsT>& dips, double lambda,
                         const SolverOptions& opts = {}) {
  const Eigen::Index m = design.rows();
  const Eigen::Index n = design.cols();
  if (m < 1) throw std::invalid_argument("reconstruct: no measurements");
  if (n < 1) throw std::invalid_argument("reconstruct: empty dictionary");
  if (dips.size() != m) throw std::invalid_argument("reconstruct: design/dips size mismatch");
  if (!(lambda > 0)) throw std::invalid_argument("reconstruct: lambda must be positive");
  if (!(opts.rel_tol > 0)) throw std::invalid_argument("reconstruct: rel_tol must be positive");
  if (opts.max_iterations < 1) throw std::invalid_argument("reconstruct: iteration cap < 1");

  const Eigen::VectorXd b = dips;  // materialize once
  Eigen::VectorXd x;
  if (opts.warm_start != nullptr) {
    if (opts.warm_start->size() != n) {
      throw std::invalid_argument("reconstruct: warm start has wrong length");
    }
    x = opts.warm_start->cwiseMax(0.0);
  } else {
    x = Eigen::VectorXd::Zero(n);
  }

  double step = opts.step_hint;
  if (!(step > 0)) {
    const double s2 = std::max(detail::squared_spectral_norm(design), 1e-300);
    step = 1.0 / (2.0 * s2 * 1.05);
  }

  // Cached images under the design matrix; momentum points are formed in
  // image space by linear combination, so each iteration costs two products.
  Eigen::VectorXd ax = design * x;
  Eigen::VectorXd ax_prev = ax;
  Eigen::VectorXd x_prev = x;
  Eigen::VectorXd ym = x;
  Eigen::VectorXd aym = ax;

  const auto tv = [](const Eigen::VectorXd& v) { return total_variation(v); };
  double fx = (ax - b).squaredNorm() + lambda * tv(x);

  SolverReport report;
  report.objective_history.reserve(static_cast<std::size_t>(opts.max_iterations));

  double t_momentum = 1.0;
  int plateau_hits = 0;
  bool converged = false;
  int iter = 0;
  for (; iter < opts.max_iterations; ++iter) {
    const Eigen::VectorXd ry = aym - b;
    const double f_y = ry.squaredNorm();
    const Eigen::VectorXd grad = 2.0 * (design.transpose() * ry);

    // Backtracking proximal step from the momentum point.
    Eigen::VectorXd z, az;
    double f_z = 0.0;
    for (int halvings = 0;; ++halvings) {
      z = tv_denoise_nonneg(ym - step * grad, step * lambda);
      az = design * z;
      f_z = (az - b).squaredNorm();
      const Eigen::VectorXd d = z - ym;
      const double quad = f_y + grad.dot(d) + d.squaredNorm() / (2.0 * step);
      if (f_z <= quad + 1e-12 * std::max(1.0, std::abs(quad))) break;
      if (halvings >= 60 || step < 1e-280) break;  // numerically stuck; accept as-is
      step *= 0.5;
    }
    const double obj_z = f_z + lambda * tv(z);

    // Monotone selection: keep the better of the candidate and the incumbent.
    const double improvement = fx - obj_z;
    const bool accept = obj_z <= fx;
    x_prev.swap(x);
    ax_prev.swap(ax);
    if (accept) {
      x = z;
      ax = az;
      fx = obj_z;
    } else {
      x = x_prev;
      ax = ax_prev;
    }
    report.objective_history.push_back(fx);

    // Momentum update uses the candidate either way (monotone FISTA).
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_momentum * t_momentum));
    ym = x + (t_momentum / t_next) * (z - x) + ((t_momentum - 1.0) / t_next) * (x - x_prev);
    aym = ax + (t_momentum / t_next) * (az - ax) + ((t_momentum - 1.0) / t_next) * (ax - ax_prev);
    t_momentum = t_next;

    const double scale = std::max(std::abs(fx), 1e-300);
    if (accept && improvement > 0.0) {
      plateau_hits = 0;
      if (improvement <= opts.rel_tol * scale) {
        converged = true;
        ++iter;
        break;
      }
    } else {
      // Candidate failed to improve; a run of near-ties means we are flat.
      if (std::abs(improvement) <= opts.rel_tol * scale) {
        if (++plateau_hits >= 16) {
          converged = true;
          ++iter;
          break;
        }
      } else {
        plateau_hits = 0;
      }
    }
  }

  report.a_hat = std::move(x);
  report.iterations = iter;
  report.converged = converged;
  report.final_step = step;
  report.residual_norm = (design * report.a_hat - b).norm();
  report.objective =
      report.residual_norm * report.residual_norm + lambda * tv(report.a_hat);
  return report;
}

inline SolverReport reconstruct(const TVProblem& problem, const SolverOptions& opts = {}) {
  problem.validate();
  return reconstruct(problem.design, problem.dips, problem.lambda, opts);
}

// Dip vector from paired reference/signal counts: y_i = ref_i - sig_i.
// Values may be negative under noise; they are deliberately not clipped.
inline Eigen::VectorXd dip_vector_from_counts(std::span<const double> reference_counts,
                                              std::span<const double> signal_counts) {
  if (reference_counts.size() != signal_counts.size()) {
    throw std::invalid_argument("dip_vector_from_counts: length mismatch");
  }
  Eigen::VectorXd y(static_cast<Eigen::Index>(reference_counts.size()));
  for (std::size_t i = 0; i < reference_counts.size(); ++i) {
    y[static_cast<Eigen::Index>(i)] = reference_counts[i] - signal_counts[i];
  }
  return y;
}

struct OracleOptions {
  double grid_resolution = 1e-4;  // final amplitude grid pitch
  long max_moves = 2'000'000;     // accepted-move budget across all levels
};

// Independent reference minimizer for tiny instances (N <= 16): multiscale
// descent over all contiguous-block moves on a shrinking amplitude grid.
// For this convex objective a non-minimizer always admits a descending
// single-block move, so termination at the finest level brackets the global
// minimum to within the grid resolution.  Deliberately simple and slow;
// exists to cross-check `reconstruct`.
inline SolverReport oracle_minimize(const TVProblem& problem, const OracleOptions& opts = {}) {
  problem.validate();
  const Eigen::Index n = problem.design.cols();
  const Eigen::Index m = problem.design.rows();
  if (n > 16) throw std::invalid_argument("oracle_minimize: refuses N > 16");
  if (!(opts.grid_resolution > 0)) {
    throw std::invalid_argument("oracle_minimize: grid resolution must be positive");
  }
  const Eigen::MatrixXd& a = problem.design;
  const Eigen::VectorXd& b = problem.dips;
  const double lambda = problem.lambda;

  // Prefix column sums make pure block moves O(m) to evaluate.
  Eigen::MatrixXd prefix = Eigen::MatrixXd::Zero(m, n + 1);
  for (Eigen::Index j = 0; j < n; ++j) prefix.col(j + 1) = prefix.col(j) + a.col(j);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd res = -b;  // a*x - b
  const auto objective_of = [&](const Eigen::VectorXd& v) {
    return (a * v - b).squaredNorm() + lambda * total_variation(v);
  };
  double fx = objective_of(x);

  // Any optimal coordinate is bounded by F(x) <= F(0); start the step ladder
  // above the largest such bound.
  double bound = 0.0;
  const double norm_b = b.norm();
  for (Eigen::Index j = 0; j < n; ++j) {
    const double colmax = std::max(a.col(j).maxCoeff(), 1e-12);
    bound = std::max(bound, 2.0 * norm_b / colmax);
  }
  double r0 = std::max(bound / 2.0, opts.grid_resolution);
  r0 = std::min(r0, opts.grid_resolution * 0x1p60);  // keep the ladder short

  std::vector<double> levels;
  for (double r = r0; r > opts.grid_resolution * 1.0001; r *= 0.5) levels.push_back(r);
  levels.push_back(opts.grid_resolution);

  long moves = 0;
  bool budget_ok = true;
  SolverReport report;
  for (std::size_t li = 0; li < levels.size() && budget_ok; ++li) {
    const double r = levels[li];
    if (li + 1 == levels.size()) {
      // Snap onto the final grid before the exact-resolution sweep.
      for (Eigen::Index j = 0; j < n; ++j) {
        x[j] = std::max(std::round(x[j] / r) * r, 0.0);
      }
      res = a * x - b;
      fx = res.squaredNorm() + lambda * total_variation(x);
    }
    for (;;) {
      double best_obj = fx;
      Eigen::VectorXd best_x;
      // All contiguous blocks, both signs; down-moves clip at zero.
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i; j < n; ++j) {
          for (int sign = 0; sign < 2; ++sign) {
            Eigen::VectorXd cand = x;
            bool changed = false;
            if (sign == 0) {
              for (Eigen::Index k = i; k <= j; ++k) cand[k] += r;
              changed = true;
            } else {
              for (Eigen::Index k = i; k <= j; ++k) {
                const double nv = std::max(cand[k] - r, 0.0);
                if (nv != cand[k]) changed = true;
                cand[k] = nv;
              }
            }
            if (!changed) continue;
            double f;
            if (sign == 0) {
              // Pure up-move: reuse the prefix sums.
              const Eigen::VectorXd shifted = res + r * (prefix.col(j + 1) - prefix.col(i));
              f = shifted.squaredNorm() + lambda * total_variation(cand);
            } else {
              f = objective_of(cand);
            }
            if (f < best_obj - 1e-15 * std::max(1.0, std::abs(best_obj))) {
              best_obj = f;
              best_x = std::move(cand);
            }
          }
        }
      }
      if (best_x.size() == 0) break;  // no improving move at this scale
      x = std::move(best_x);
      res = a * x - b;
      fx = best_obj;
      report.objective_history.push_back(fx);
      if (++moves >= opts.max_moves) {
        budget_ok = false;
        break;
      }
    }
  }

  report.a_hat = x;
  report.iterations = static_cast<int>(moves);
  report.converged = budget_ok;
  report.residual_norm = (a * x - b).norm();
  report.objective = report.residual_norm * report.residual_norm + lambda * total_variation(x);
  return report;
}

}  // namespace csesr
