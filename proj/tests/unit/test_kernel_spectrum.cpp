#include <doctest.h>

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "shiftkrr/kernel_spectrum.hpp"

using namespace shiftkrr;

namespace {

// Independent values computed with mpmath at 30 digits.
constexpr double kTailPastTen = 0.0951663356816857;     // sum_{j>10} j^-2
constexpr double kPsiHalf = 0.894934066848226;          // psi(j^-2, 0.5, 1)
constexpr double kMOneDim = 0.287061810396099;          // M, D=1, delta=0.5, n=1000
constexpr double kMOneDimGeneral = 0.430592715594148;   // same, general noise
constexpr double kRadiusOneDim = 1.14824724158440;      // 2 sqrt(ln^3(1000)/1000)

}  // namespace

TEST_CASE("eigenvalue lookups follow each rule") {
  CHECK(eigenvalue(EigenSequence::poly_decay(1.0), 3) == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
  CHECK(eigenvalue(EigenSequence::finite_rank({1.0, 0.5}), 5) == 0.0);
  CHECK(eigenvalue(EigenSequence::explicit_values({1.0, 0.3, 0.1}), 2) == 0.3);
  // Past the stored range a poly sequence still follows its formula.
  const auto short_poly = EigenSequence::poly_decay(1.0, 2.0, 10);
  CHECK(short_poly.eigenvalue(20) == doctest::Approx(2.0 / 400.0));
  CHECK_THROWS_AS(short_poly.eigenvalue(0), std::invalid_argument);
}

TEST_CASE("sequence validation rejects malformed spectra") {
  CHECK_THROWS_AS(EigenSequence::finite_rank({0.5, 1.0}), ConfigError);
  CHECK_THROWS_AS(EigenSequence::finite_rank({1.0, -0.1}), ConfigError);
  CHECK_THROWS_AS(EigenSequence::finite_rank({}), ConfigError);
  CHECK_THROWS_AS(EigenSequence::poly_decay(0.5), ConfigError);
  CHECK_THROWS_AS(EigenSequence::poly_decay(1.0, 0.0), ConfigError);
  CHECK_THROWS_AS(EigenSequence::explicit_values({1.0, 0.5}, 1), ConfigError);
}

TEST_CASE("poly tail bound dominates the exact tail and trace is near zeta(2)") {
  const auto eigs = EigenSequence::poly_decay(1.0, 1.0, 10);
  CHECK(eigs.tail_bound(10) >= kTailPastTen);
  CHECK(eigs.tail_bound(10) == doctest::Approx(0.1));
  const auto full = EigenSequence::poly_decay(1.0);
  const double zeta2 = std::numbers::pi * std::numbers::pi / 6.0;
  CHECK(full.trace() >= zeta2);
  CHECK(full.trace() - zeta2 < 1e-11);
}

TEST_CASE("effective dimension") {
  const auto poly = EigenSequence::poly_decay(1.0);
  CHECK(effective_dim(poly, 0.1) == 10);   // 10^-2 <= 0.01
  CHECK(effective_dim(poly, 0.11) == 10);  // 9^-2 > 0.0121
  CHECK(effective_dim(poly, 2.0) == 1);

  const auto finite = EigenSequence::finite_rank({1.0, 0.5});
  CHECK(effective_dim(finite, 0.5) == 3);  // literal convention: D + 1
  CHECK(effective_dim(finite, 1.0) == 1);

  // An explicit list with room past its last value behaves like finite rank.
  CHECK(effective_dim(EigenSequence::explicit_values({1.0, 0.5}, 5), 0.1) == 3);
  CHECK_THROWS_AS(effective_dim(EigenSequence::explicit_values({1.0, 0.5}), 0.1), NumericalError);

  const auto truncated = EigenSequence::poly_decay(1.0, 1.0, 100);
  CHECK_THROWS_WITH_AS(effective_dim(truncated, 1e-3), doctest::Contains("exceeds truncation"),
                       NumericalError);
}

TEST_CASE("effective dimension is nonincreasing in delta") {
  const auto poly = EigenSequence::poly_decay(0.75);
  std::int64_t last = std::numeric_limits<std::int64_t>::max();
  for (const double delta : log_grid(1e-2, 2.0, 200)) {
    const auto d = effective_dim(poly, delta);
    CHECK(d <= last);
    last = d;
  }
}

TEST_CASE("regularity margin") {
  const auto finite = EigenSequence::finite_rank({1.0, 0.25, 0.1, 0.05});
  const auto m = regularity_margin(finite, 0.4, 2.0);  // d = 3, tail past d = 0.05
  CHECK(m.dim == 3);
  CHECK(m.tail_sum == doctest::Approx(0.05));
  CHECK(m.budget == doctest::Approx(2.0 * 3 * 0.16));
  CHECK(m.is_regular);
  // alpha = 1 spectra are regular: the tail past 1/delta is about delta.
  const auto poly = EigenSequence::poly_decay(1.0);
  for (const double delta : {0.3, 0.05, 0.01}) CHECK(regularity_margin(poly, delta).is_regular);
}

TEST_CASE("kernel complexity psi") {
  const auto poly = EigenSequence::poly_decay(1.0);
  CHECK(psi_complexity(poly, 0.5, 1.0) == doctest::Approx(kPsiHalf).epsilon(1e-10));
  CHECK(psi_complexity(poly, 0.0, 1.0) == 0.0);
  CHECK(psi_complexity(poly, 0.5, 0.0) == 0.0);
  const auto finite = EigenSequence::finite_rank({1.0, 0.5, 0.25});
  CHECK(psi_complexity(finite, 0.6, 1.0) == doctest::Approx(0.36 + 0.36 + 0.25));
  // Short truncation: stored terms plus a tail that crosses the level.
  const auto short_poly = EigenSequence::poly_decay(1.0, 1.0, 5);
  double brute = 0.0;
  for (int j = 1; j <= 2'000'000; ++j) brute += std::min(0.01 * 0.01, 1.0 / (double(j) * j));
  // j <= 99 sit at the level, then the integral bound 1/99 on the rest.
  CHECK(psi_complexity(short_poly, 0.01, 1.0) == doctest::Approx(99e-4 + 1.0 / 99.0).epsilon(1e-12));
  CHECK(psi_complexity(short_poly, 0.01, 1.0) == doctest::Approx(brute).epsilon(3e-3));
  CHECK(psi_complexity(short_poly, 0.01, 1.0) >= brute - 1e-12);
}

TEST_CASE("M function and critical radius") {
  const auto one = EigenSequence::finite_rank({1.0});
  MFunctionParams p;
  p.n = 1000.0;
  CHECK(m_function(one, 0.5, p) == doctest::Approx(kMOneDim).epsilon(1e-12));
  p.general_noise = true;
  CHECK(m_function(one, 0.5, p) == doctest::Approx(kMOneDimGeneral).epsilon(1e-12));

  // In the regime Psi = delta^2 the answer is 2 sqrt(ln^3 n / n); that needs
  // hnorm_sq above the squared radius.
  p.general_noise = false;
  p.hnorm_sq = 2.0;
  const auto grid = default_delta_grid();
  const double step = grid[1] / grid[0];
  const double r = critical_radius(one, p, grid);
  CHECK(r >= kRadiusOneDim);
  CHECK(r <= kRadiusOneDim * step);

  p.n = 2.0;  // ln^3(2)/2 is large: nothing on [1e-4, 10] qualifies once hnorm is huge
  p.hnorm_sq = 1e6;
  p.v_sq = 1e6;
  CHECK_THROWS_AS(critical_radius(one, p, grid), NumericalError);
}

TEST_CASE("sequence JSON round trip") {
  for (const auto& eigs : {EigenSequence::poly_decay(1.5, 2.0, 50),
                           EigenSequence::finite_rank({1.0, 0.5}),
                           EigenSequence::explicit_values({1.0, 0.5, 0.25}, 10)}) {
    const auto back = EigenSequence::from_json(eigs.to_json());
    CHECK(back.kind() == eigs.kind());
    CHECK(back.j_max() == eigs.j_max());
    for (int j = 1; j <= 12; ++j) CHECK(back.eigenvalue(j) == eigs.eigenvalue(j));
  }
  CHECK_THROWS_AS(EigenSequence::from_json({{"kind", "weird"}}), ConfigError);
  CHECK_THROWS_AS(EigenSequence::from_json({{"kind", "poly"}}), ConfigError);
}

TEST_CASE("hypercube kernel gram matches the feature expansion") {
  const EigenKernel kernel(EigenSequence::finite_rank({1.0, 0.5, 0.25}),
                           EigenfunctionFamily::kHypercubeCoordinates);
  CHECK(kernel.kappa_bound_holds());
  CHECK(kernel.kappa_sq() == doctest::Approx(1.75));
  Covariates xs(4, 5);
  xs << 1, -1, 1, 1, -1,  //
      -1, -1, 1, -1, 1,   //
      1, 1, -1, 1, 1,     //
      -1, 1, 1, -1, -1;
  CHECK(kernel.feature_count(5) == 3);
  const Eigen::MatrixXd k = kernel.gram(xs);
  for (Eigen::Index i = 0; i < 4; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      const double direct = xs(i, 0) * xs(j, 0) + 0.5 * xs(i, 1) * xs(j, 1) + 0.25 * xs(i, 2) * xs(j, 2);
      CHECK(k(i, j) == doctest::Approx(direct).epsilon(1e-14));
      CHECK(kernel(row_span(xs, i), row_span(xs, j)) == doctest::Approx(direct).epsilon(1e-14));
    }
    // K(x, x) equals the trace on the hypercube.
    CHECK(k(i, i) == doctest::Approx(1.75));
  }
  CHECK((kernel.cross_gram(xs, xs) - k).cwiseAbs().maxCoeff() < 1e-14);
  // Fewer coordinates than eigenvalues caps the feature map.
  CHECK(kernel.feature_count(2) == 2);
}

TEST_CASE("Hermite eigenfunctions are the normalized probabilists' polynomials") {
  const EigenKernel kernel(EigenSequence::finite_rank({1.0, 0.5, 0.25, 0.125}),
                           EigenfunctionFamily::kHermite);
  const double x = 0.7;
  const std::array<double, 1> pt{x};
  CHECK(kernel.eigenfunction(pt, 1) == doctest::Approx(1.0));
  CHECK(kernel.eigenfunction(pt, 2) == doctest::Approx(x));
  CHECK(kernel.eigenfunction(pt, 3) == doctest::Approx((x * x - 1.0) / std::sqrt(2.0)));
  CHECK(kernel.eigenfunction(pt, 4) == doctest::Approx((x * x * x - 3.0 * x) / std::sqrt(6.0)));

  // Orthonormal under N(0, 1): Gauss-Hermite-free check by Monte Carlo.
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  Covariates xs(200000, 1);
  for (Eigen::Index i = 0; i < xs.rows(); ++i) xs(i, 0) = normal(rng);
  const Eigen::MatrixXd phi = kernel.features(xs);
  const Eigen::MatrixXd gram = phi.transpose() * phi / static_cast<double>(xs.rows());
  CHECK((gram - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 0.05);
  // features() and eigenfunction() agree.
  for (int j = 1; j <= 4; ++j) {
    CHECK(phi(3, j - 1) == doctest::Approx(kernel.eigenfunction(row_span(xs, 3), j)));
  }
}

TEST_CASE("kernel JSON and feature limits") {
  const EigenKernel kernel(EigenSequence::explicit_values({1.0, 0.25}), EigenfunctionFamily::kHermite, 3.0);
  const auto back = EigenKernel::from_json(kernel.to_json());
  CHECK(back.family() == EigenfunctionFamily::kHermite);
  CHECK(back.kappa_sq() == 3.0);
  const auto bare = EigenKernel::from_json(EigenSequence::finite_rank({1.0}).to_json());
  CHECK(bare.family() == EigenfunctionFamily::kHypercubeCoordinates);
  // A million-term Hermite map is refused rather than materialized.
  const EigenKernel huge(EigenSequence::poly_decay(1.0), EigenfunctionFamily::kHermite);
  CHECK_THROWS_AS(huge.feature_count(1), ConfigError);
}

TEST_CASE("expansion norms") {
  const EigenKernel kernel(EigenSequence::finite_rank({1.0, 0.25}),
                           EigenfunctionFamily::kHypercubeCoordinates);
  Eigen::VectorXd theta(2);
  theta << 0.5, 0.5;
  CHECK(EigenExpansion(kernel, theta).hilbert_norm_sq() == doctest::Approx(0.25 + 1.0));
  Eigen::VectorXd bad(3);
  bad << 0.0, 0.0, 1.0;
  CHECK_THROWS_WITH_AS(EigenExpansion(kernel, bad).hilbert_norm_sq(), doctest::Contains("not in RKHS"),
                       NumericalError);
  const std::array<double, 2> x{1.0, -1.0};
  CHECK(EigenExpansion(kernel, theta)(x) == doctest::Approx(0.0));
}
