#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <vector>

#include "csesr/dictionary.hpp"
#include "csesr/rng.hpp"
#include "csesr/solver.hpp"
#include "csesr/spectrum.hpp"

using namespace csesr;

TEST_CASE("build_dictionary shape, positivity and evaluation") {
  const FrequencyWindow window{2800.0, 2900.0};
  const std::vector<double> grid = make_grid(window, 101);
  const Dictionary dict = build_uniform_dictionary(grid, 1.0, 10.0);

  CHECK(dict.rows() == 101);
  CHECK(dict.cols() == 101);
  CHECK(dict.nominal_spacing_mhz == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(dict.matrix.minCoeff() > 0.0);  // Lorentzian tails never vanish

  // Entry where measurement frequency meets candidate center: the unit-area
  // peak value 2 / (pi * width).
  CHECK(dict.matrix(50, 50) ==
        Catch::Approx(2.0 / (std::numbers::pi * 10.0)).epsilon(1e-12));
  // Half maximum at half a width off center.
  CHECK(dict.matrix(55, 50) == Catch::Approx(0.5 * dict.matrix(50, 50)).epsilon(1e-12));
  // Even symmetry around the center.
  CHECK(dict.matrix(47, 50) == Catch::Approx(dict.matrix(53, 50)).epsilon(1e-12));
}

TEST_CASE("dictionary columns integrate to roughly unit area") {
  const FrequencyWindow window{2500.0, 3150.0};
  const std::vector<double> grid = make_grid(window, 651);  // 1 MHz steps
  const Dictionary dict = build_uniform_dictionary(grid, 1.0, 15.0);
  // Central candidate: the window spans +/- 21 widths, capturing ~98.5% of
  // the mass of the true Lorentzian integral.
  const int mid = dict.cols() / 2;
  const double riemann = dict.matrix.col(mid).sum() * 1.0;
  CHECK(riemann > 0.95);
  CHECK(riemann < 1.02);
}

TEST_CASE("build_dictionary input validation") {
  const std::vector<double> grid{1.0, 2.0, 3.0, 4.0};
  CHECK_THROWS_AS(build_dictionary({1.0}, {1.0, 2.0}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(build_dictionary(grid, {}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(build_dictionary({1.0, 2.0, 2.0}, {1.0, 2.0}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(build_dictionary(grid, {2.0, 1.0}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(build_dictionary(grid, {1.0, 2.0}, {1.0, 1.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(build_dictionary(grid, {1.0, 2.0}, {0.0}), std::invalid_argument);
  CHECK_THROWS_AS(build_dictionary(grid, {1.0, 2.0}, {-3.0}), std::invalid_argument);
  // Candidate grid sparser than the measurement grid is rejected.
  CHECK_THROWS_AS(build_dictionary(grid, {1.0, 4.0}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(build_uniform_dictionary({1.0, 2.0, 3.0}, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(build_uniform_dictionary({1.0}, 0.5, 1.0), std::invalid_argument);
}

TEST_CASE("sweep model matches summed clean dips when lines sit on candidates") {
  const FrequencyWindow window{2700.0, 2900.0};
  const std::vector<double> grid = make_grid(window, 201);
  const double width = 12.0;
  const Dictionary dict = build_uniform_dictionary(grid, 1.0, width);

  // Three lines exactly on candidate points with distinct amplitudes.
  const std::vector<int> line_idx{40, 101, 160};
  const std::vector<double> amps{900.0, 1400.0, 600.0};
  Eigen::VectorXd a = Eigen::VectorXd::Zero(dict.cols());
  for (std::size_t i = 0; i < line_idx.size(); ++i) {
    a[line_idx[i]] = amps[i];
  }

  // The same spectrum expressed through the physics-side evaluator.
  const auto dip_at = [&](double nu) {
    double d = 0.0;
    for (std::size_t i = 0; i < line_idx.size(); ++i) {
      d += amps[i] *
           lorentzian(nu, dict.candidate_grid_mhz[static_cast<std::size_t>(line_idx[i])], width);
    }
    return d;
  };

  SamplingMatrix s;
  s.n_columns = dict.rows();
  SmallRng rng(31337);
  for (int i = 0; i < 40; ++i) s.append_row(draw_projection(rng, dict.rows(), 3));

  const Eigen::MatrixXd design = assemble_design(s, dict);
  const Eigen::VectorXd via_matrix = design * a;
  for (int i = 0; i < s.n_rows(); ++i) {
    double direct = 0.0;
    for (int j : s.rows[static_cast<std::size_t>(i)]) {
      direct += dip_at(grid[static_cast<std::size_t>(j)]);
    }
    CHECK(via_matrix[i] == Catch::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("design_row equals the dense sampling product") {
  const std::vector<double> grid = make_grid({100.0, 140.0}, 41);
  const Dictionary dict = build_uniform_dictionary(grid, 1.0, 5.0);

  SamplingMatrix s;
  s.n_columns = dict.rows();
  s.append_row({3, 17, 30});
  s.append_row({0});
  s.append_row({40, 39});

  const Eigen::MatrixXd dense = s.to_dense() * dict.matrix;
  const Eigen::MatrixXd assembled = assemble_design(s, dict);
  REQUIRE(dense.rows() == assembled.rows());
  CHECK((dense - assembled).cwiseAbs().maxCoeff() < 1e-14);
  for (int i = 0; i < s.n_rows(); ++i) {
    const Eigen::RowVectorXd row = design_row(dict, s.rows[static_cast<std::size_t>(i)]);
    CHECK((row - dense.row(i)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("sampling matrix validation") {
  SamplingMatrix s;
  s.n_columns = 10;
  CHECK_THROWS_AS(s.append_row({}), std::invalid_argument);
  CHECK_THROWS_AS(s.append_row({0, 1, 2, 3, 4}), std::invalid_argument);
  CHECK_THROWS_AS(s.append_row({-1}), std::invalid_argument);
  CHECK_THROWS_AS(s.append_row({10}), std::invalid_argument);
  CHECK_THROWS_AS(s.append_row({2, 2}), std::invalid_argument);
  s.append_row({7, 1, 4});  // unsorted input is sorted on append
  CHECK(s.rows.back() == std::vector<int>{1, 4, 7});
  CHECK(s.n_rows() == 1);
  const Eigen::MatrixXd dense = s.to_dense();
  CHECK(dense.sum() == Catch::Approx(3.0));
  CHECK(dense(0, 1) == 1.0);
  CHECK(dense(0, 4) == 1.0);
  CHECK(dense(0, 7) == 1.0);
}

TEST_CASE("design_row rejects out-of-range tones") {
  const std::vector<double> grid = make_grid({0.0, 10.0}, 11);
  const Dictionary dict = build_uniform_dictionary(grid, 1.0, 2.0);
  CHECK_THROWS_AS(design_row(dict, {11}), std::invalid_argument);
  CHECK_THROWS_AS(design_row(dict, {-1}), std::invalid_argument);
}

TEST_CASE("draw_projection is deterministic, sorted, distinct and in range") {
  SmallRng a(123456), b(123456);
  for (int rep = 0; rep < 200; ++rep) {
    const auto pa = draw_projection(a, 650, 3);
    const auto pb = draw_projection(b, 650, 3);
    CHECK(pa == pb);
    REQUIRE(pa.size() == 3);
    CHECK(std::is_sorted(pa.begin(), pa.end()));
    CHECK(pa[0] != pa[1]);
    CHECK(pa[1] != pa[2]);
    CHECK(pa.front() >= 0);
    CHECK(pa.back() < 650);
  }
}

TEST_CASE("draw_projection draws uniformly") {
  // Chi-square over single-tone draws from a 20-point grid.
  const int cells = 20;
  const int draws = 20000;
  std::vector<int> histogram(cells, 0);
  SmallRng rng(777);
  for (int i = 0; i < draws; ++i) {
    ++histogram[static_cast<std::size_t>(draw_projection(rng, cells, 1)[0])];
  }
  const double expected = static_cast<double>(draws) / cells;
  double chi2 = 0.0;
  for (int c : histogram) {
    const double d = c - expected;
    chi2 += d * d / expected;
  }
  // 19 degrees of freedom: 99.9th percentile is 43.8.
  CHECK(chi2 < 43.8);
}

TEST_CASE("draw_projection honors exclusions") {
  SmallRng rng(2024);
  const std::vector<int> excluded{0, 1, 2, 3, 4, 5, 6};
  for (int rep = 0; rep < 300; ++rep) {
    const auto p = draw_projection(rng, 10, 2, excluded);
    for (int j : p) CHECK(j >= 7);
  }
  // Exclusions leaving fewer indices than tones are rejected.
  CHECK_THROWS_AS(draw_projection(rng, 10, 4, {0, 1, 2, 3, 4, 5, 6}), std::invalid_argument);
  CHECK_THROWS_AS(draw_projection(rng, 3, 0), std::invalid_argument);
  CHECK_THROWS_AS(draw_projection(rng, 3, 5), std::invalid_argument);
  CHECK_THROWS_AS(draw_projection(rng, 2, 3), std::invalid_argument);
}

TEST_CASE("refine_dictionary structure") {
  const FrequencyWindow window{2500.0, 3150.0};
  const std::vector<double> grid = make_grid(window, 651);
  const Dictionary base = build_uniform_dictionary(grid, 1.0, 15.0);

  PeakList peaks;
  peaks.centers_mhz = {2600.0, 2750.5, 2990.0};
  peaks.widths_mhz = {15.0, 15.0, 18.0};

  const Dictionary refined = refine_dictionary(base, peaks);
  CHECK(refined.nominal_spacing_mhz == base.nominal_spacing_mhz);
  CHECK(refined.measurement_grid_mhz == base.measurement_grid_mhz);
  CHECK(std::is_sorted(refined.candidate_grid_mhz.begin(), refined.candidate_grid_mhz.end()));

  const auto zone_of = [&](double nu) -> int {
    for (std::size_t i = 0; i < peaks.centers_mhz.size(); ++i) {
      if (std::abs(nu - peaks.centers_mhz[i]) <= 2.0 * peaks.widths_mhz[i] + 1e-9) {
        return static_cast<int>(i);
      }
    }
    return -1;
  };

  int in_zone_count = 0;
  for (std::size_t k = 0; k < refined.candidate_grid_mhz.size(); ++k) {
    const double nu = refined.candidate_grid_mhz[k];
    const int z = zone_of(nu);
    if (z >= 0) {
      ++in_zone_count;
      // Zone candidates carry the width estimated for their peak.
      CHECK(refined.widths_mhz[k] == Catch::Approx(peaks.widths_mhz[static_cast<std::size_t>(z)]));
    } else {
      // Backbone candidates sit on every fourth base grid point.
      const double offset = nu - base.candidate_grid_mhz.front();
      const double steps = offset / base.nominal_spacing_mhz;
      CHECK(std::abs(steps - std::round(steps)) < 1e-9);
      CHECK(static_cast<long>(std::llround(steps)) % 4 == 0);
    }
  }
  CHECK(in_zone_count > 0);

  // Densification: consecutive spacing inside a zone interior is nominal/4.
  for (std::size_t k = 0; k + 1 < refined.candidate_grid_mhz.size(); ++k) {
    const double a = refined.candidate_grid_mhz[k];
    const double b = refined.candidate_grid_mhz[k + 1];
    if (zone_of(a) == 0 && zone_of(b) == 0) {
      CHECK(b - a == Catch::Approx(base.nominal_spacing_mhz / 4.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("refine_dictionary is a no-op for an empty peak list") {
  const std::vector<double> grid = make_grid({100.0, 150.0}, 51);
  const Dictionary base = build_uniform_dictionary(grid, 1.0, 8.0);
  const Dictionary same = refine_dictionary(base, PeakList{});
  CHECK(same.candidate_grid_mhz == base.candidate_grid_mhz);
  CHECK((same.matrix - base.matrix).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("refined dictionary fits an off-grid line at least as well as the base") {
  const FrequencyWindow window{2800.0, 2900.0};
  const std::vector<double> grid = make_grid(window, 101);
  const double width = 10.0;
  const Dictionary base = build_uniform_dictionary(grid, 1.0, width);

  // A line whose center falls between coarse candidates.
  const double center = 2846.37;
  const double amp = 800.0;
  Eigen::VectorXd dips(base.rows());
  for (int j = 0; j < base.rows(); ++j) {
    dips[j] = amp * lorentzian(grid[static_cast<std::size_t>(j)], center, width);
  }

  PeakList peaks;
  peaks.centers_mhz = {2846.0};
  peaks.widths_mhz = {width};
  const Dictionary refined = refine_dictionary(base, peaks);
  REQUIRE(refined.cols() > 0);

  SolverOptions so;
  so.rel_tol = 1e-12;
  so.max_iterations = 20000;
  const double lam = 1e-6 * amp;
  const SolverReport coarse_fit = reconstruct(base.matrix, dips, lam, so);
  const SolverReport refined_fit = reconstruct(refined.matrix, dips, lam, so);
  CHECK(refined_fit.residual_norm <= coarse_fit.residual_norm + 1e-9);
}
