#include <doctest.h>

#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "shiftkrr/theory_bounds.hpp"

using namespace shiftkrr;

namespace {

// Oracle values (mpmath, 30 digits). The shrinkage sum uses
// sum_j 1/(1 + 0.01 j^2) = (10 pi coth(10 pi) - 1) / 2.
constexpr double kShrinkSum = 15.2079632679490;
constexpr double kShrinkHead50 = 13.2531151732703;  // terms j = 1..50
constexpr double kKrrVariance = 1.36676959130455;
constexpr double kKrrTotal = 1.40676959130455;
constexpr double kFiniteRankVariance = 14.7151776468577;   // 80 / e * 0.5
constexpr double kRuleFinite_1_5_1000 = 0.0345387763949107;
constexpr double kRuleFinite_2_3_8000 = 0.00674039761549648;
constexpr double kRulePoly_1_1_1_e = 0.513417119032592;
constexpr double kRulePoly_1_8_1_8000 = 0.00540330539955964;
constexpr double kReweightedPoly8000 = 0.201924266733292;  // (ln^3 8000 / 8000)^(2/3)
constexpr double kUnboundedE = 16.7151776468577;           // 2 + 40 / e

}  // namespace

TEST_CASE("shrinkage sum matches the coth identity") {
  CHECK(shrinkage_sum(EigenSequence::poly_decay(1.0), 0.01) == doctest::Approx(kShrinkSum).epsilon(1e-10));
  // Small truncation forces the stored-plus-tail-bound branch, which must stay an upper bound.
  const double shortened = shrinkage_sum(EigenSequence::poly_decay(1.0, 1.0, 50), 0.01);
  CHECK(shortened >= kShrinkSum);
  CHECK(shortened == doctest::Approx(kShrinkHead50 + 2.0).epsilon(1e-12));  // tail bound 1/(50 s)
  CHECK(shrinkage_sum(EigenSequence::finite_rank({1.0, 1.0}), 1.0) == doctest::Approx(1.0));
}

TEST_CASE("KRR bound values") {
  const auto r = krr_bound(EigenSequence::poly_decay(1.0), 0.01, 1.0, 8000.0, 1.0, 1.0);
  CHECK(r.bias_sq == doctest::Approx(0.04));
  CHECK(r.variance == doctest::Approx(kKrrVariance).epsilon(1e-10));
  CHECK(r.total == doctest::Approx(kKrrTotal).epsilon(1e-10));
  CHECK(r.total == r.bias_sq + r.variance);
  CHECK(r.to_json().at("config").at("B") == 1.0);

  const auto f = krr_bound(EigenSequence::finite_rank({1.0}), 1.0, 1.0, std::numbers::e, 1.0, 1.0);
  CHECK(f.bias_sq == doctest::Approx(4.0));
  CHECK(f.variance == doctest::Approx(kFiniteRankVariance).epsilon(1e-12));

  const auto big = krr_bound(EigenSequence::poly_decay(1.0), 1e12, 1.0, 8000.0, 1.0, 1.0);
  CHECK(big.variance < 1e-10);
  CHECK_THROWS_AS(krr_bound(EigenSequence::poly_decay(1.0), 0.0, 1.0, 10.0, 1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(krr_bound(EigenSequence::poly_decay(1.0), 0.1, 0.5, 10.0, 1.0, 1.0), ConfigError);
}

TEST_CASE("KRR bound monotonicity") {
  const auto eigs = EigenSequence::poly_decay(1.0);
  double last_var = std::numeric_limits<double>::infinity();
  for (const double lam : log_grid(1e-5, 1.0, 60)) {
    const auto r = krr_bound(eigs, lam, 3.0, 5000.0, 1.0, 1.0);
    CHECK(r.variance <= last_var);
    last_var = r.variance;
  }
  double last_b = 0.0;
  for (const double b : {1.0, 2.0, 4.0, 8.0, 16.0}) {
    const auto r = krr_bound(eigs, 0.01, b, 5000.0, 1.0, 1.0);
    CHECK(r.variance >= last_b);
    CHECK(r.bias_sq == doctest::Approx(0.04 * b));
    last_b = r.variance;
  }
}

TEST_CASE("lambda star on the figure configuration") {
  const auto eigs = EigenSequence::poly_decay(1.0);
  const auto grid = log_grid(1e-6, 10.0, 400);
  double last = std::numeric_limits<double>::infinity();
  for (const double b : {1.0, 5.0, 10.0, 15.0}) {
    const auto star = lambda_star(eigs, b, 8000.0, 1.0, 1.0, grid);
    CHECK(star.lambda < last);
    last = star.lambda;
    // Dense-grid refinement lands within one coarse step.
    const auto dense = lambda_star(eigs, b, 8000.0, 1.0, 1.0, log_grid(1e-6, 10.0, 4000));
    const double step = grid[1] / grid[0];
    CHECK(dense.lambda <= star.lambda * step);
    CHECK(dense.lambda >= star.lambda / step);
  }
  const std::array<double, 1> single{0.3};
  CHECK(lambda_star(eigs, 2.0, 100.0, 1.0, 1.0, single).lambda == 0.3);
  CHECK_THROWS_AS(lambda_star(eigs, 2.0, 100.0, 1.0, 1.0, {}), ConfigError);
}

TEST_CASE("lambda star breaks ties toward the smaller lambda") {
  // Zero spectrum and zero-norm target: every grid point ties at 0.
  const auto eigs = EigenSequence::finite_rank({0.0});
  const std::array<double, 3> grid{1e3, 1e2, 1e4};
  CHECK(lambda_star(eigs, 1.0, 100.0, 1.0, 0.0, grid).lambda == 1e2);
}

TEST_CASE("regular bound") {
  const auto four = EigenSequence::finite_rank({1.0, 0.5, 0.25, 0.125});
  CHECK(regular_bound(four, 1.0, 1.0, 100.0, 1.0, 1.0, 0.0) == 0.0);
  // Past the spectrum d = 1, so the delta^2 term dominates.
  const double huge = regular_bound(four, 100.0, 1.0, 100.0, 1.0, 1.0);
  CHECK(huge == doctest::Approx(1e4).epsilon(1e-5));
  // Balance point for d = 5 (below the smallest eigenvalue).
  const double n = 1000.0;
  const double b = 2.0;
  const double delta = std::sqrt(b * 5.0 * std::log(n) / n);
  REQUIRE(effective_dim(four, delta) == 5);
  const double total = regular_bound(four, delta, b, n, 1.0, 1.0);
  CHECK(total == doctest::Approx(2.0 * delta * delta).epsilon(1e-12));
}

TEST_CASE("lambda rules") {
  CHECK(lambda_rule_finite_rank(1.0, 5.0, 1000.0) == doctest::Approx(kRuleFinite_1_5_1000).epsilon(1e-12));
  CHECK(lambda_rule_finite_rank(1.0, 1.0, std::numbers::e) == doctest::Approx(1.0 / std::numbers::e));
  CHECK(lambda_rule_finite_rank(2.0, 3.0, 8000.0) == doctest::Approx(kRuleFinite_2_3_8000).epsilon(1e-12));
  CHECK(lambda_rule_poly(1.0, 1.0, 1.0, std::numbers::e) == doctest::Approx(kRulePoly_1_1_1_e).epsilon(1e-12));
  CHECK(lambda_rule_poly(1.0, 8.0, 1.0, 8000.0) == doctest::Approx(kRulePoly_1_8_1_8000).epsilon(1e-12));
  CHECK(lambda_rule_poly(1.0, 1e12, 1.0, 8000.0) < 1e-5);
  CHECK_THROWS_AS(lambda_rule_poly(0.5, 1.0, 1.0, 10.0), ConfigError);
}

TEST_CASE("minimax lower bound") {
  const auto four = EigenSequence::finite_rank({1.0, 0.25, 1.0 / 9.0, 1.0 / 16.0});
  const auto grid = log_grid(1e-4, 10.0, 400);
  const auto lit = minimax_lower(four, 2.0, 1000.0, 1.0, grid);
  CHECK(lit.value == doctest::Approx(0.01).epsilon(1e-5));  // (D + 1) sigma^2 B / n
  CHECK(lit.dim == 5);
  const auto capped = minimax_lower(four, 2.0, 1000.0, 1.0, grid, 1.0, DimConvention::kCapped);
  CHECK(capped.value == doctest::Approx(0.008).epsilon(1e-5));
  const std::array<double, 1> at_mu4{0.25};
  CHECK(minimax_lower(four, 2.0, 1000.0, 1.0, at_mu4).value == doctest::Approx(1.0 / 16.0 + 0.008));
  CHECK(minimax_lower(four, 2.0, 1000.0, 1.0, grid, 3.0).value == doctest::Approx(0.03).epsilon(1e-5));
}

TEST_CASE("minimax lower bound tracks the alpha = 1 balance") {
  const auto poly = EigenSequence::poly_decay(1.0);
  const auto grid = log_grid(1e-4, 10.0, 400);
  for (const double n : {1e3, 1e4, 1e5}) {
    const double a = 1.0 / n;
    const double value = minimax_lower(poly, 1.0, n, 1.0, grid).value;
    CHECK(std::abs(value / poly_lower_balance(a) - 1.0) < 0.1);
  }
}

TEST_CASE("lower bound is dominated by the regular upper bound") {
  const auto poly = EigenSequence::poly_decay(1.0);
  for (const double delta : log_grid(1e-3, 1.0, 50)) {
    const std::array<double, 1> g{delta};
    const double lower = minimax_lower(poly, 4.0, 5000.0, 1.0, g).value;
    CHECK(lower <= regular_bound(poly, delta, 4.0, 5000.0, 1.0, 1.0));
  }
}

TEST_CASE("reweighted rate") {
  RateKind finite;
  finite.rank = 1.0;
  CHECK(reweighted_rate(finite, 1.0, 1.0, std::numbers::e) == doctest::Approx(1.0 / std::numbers::e));
  CHECK(reweighted_rate(finite, 2.0, 1.0, 500.0) == doctest::Approx(2.0 * reweighted_rate(finite, 1.0, 1.0, 500.0)));
  RateKind poly;
  poly.kind = RateKind::Kind::kPoly;
  poly.alpha = 1.0;
  CHECK(reweighted_rate(poly, 1.0, 1.0, 8000.0) == doctest::Approx(kReweightedPoly8000).epsilon(1e-12));
}

TEST_CASE("unbounded-ratio bound and its minimizer") {
  const auto r = unbounded_unweighted_bound(1.0, 1.0, 1.0, 1.0, std::numbers::e, 1.0);
  CHECK(r.total == doctest::Approx(kUnboundedE).epsilon(1e-12));
  CHECK(unbounded_unweighted_bound(1e12, 1.0, 1.0, 1.0, 100.0, 1.0).variance < 1e-10);
  const double n = 5000.0;
  const auto grid = log_grid(1e-6, 10.0, 500);
  std::vector<double> totals;
  for (const double lam : grid) totals.push_back(unbounded_unweighted_bound(lam, 2.0, 1.5, 1.0, n, 1.0).total);
  const double best = grid[argmin_first(totals)];
  const double closed = unbounded_lambda_star(2.0, 1.5, 1.0, n, 1.0);
  const double step = grid[1] / grid[0];
  CHECK(best <= closed * step);
  CHECK(best >= closed / step);
}

TEST_CASE("expectation bound") {
  const auto eigs = EigenSequence::poly_decay(1.0);
  // c1 = 1 puts the floor at 1.7 ln(8000)/8000, below 0.01.
  const auto r = expectation_bound(eigs, 0.01, 1.0, 8000.0, 1.0, 1.7, 1.0, kDefaultC2, 1.0);
  CHECK(r.bias_sq == doctest::Approx(kDefaultC2 * 0.01));
  CHECK(r.variance == doctest::Approx(kDefaultC2 * kShrinkSum / 8000.0).epsilon(1e-9));
  CHECK(r.extra == doctest::Approx(kDefaultC2 / 8000.0));
  CHECK(r.total == doctest::Approx(r.bias_sq + r.variance + r.extra));
  CHECK(r.in_validity_region);
  CHECK(kDefaultC2 == 519.0 / 256.0);

  const auto low = expectation_bound(eigs, 0.01, 1.0, 8000.0, 1.0, 1.7, 1.0);  // default c1 = 32
  CHECK_FALSE(low.in_validity_region);
  CHECK(low.warnings.size() == 1);

  const auto huge = expectation_bound(eigs, 1e12, 1.0, 8000.0, 1.0, 1.7, 1.0);
  CHECK(huge.total == doctest::Approx(kDefaultC2 * (1e12 + 1.0 / 8000.0)).epsilon(1e-9));
}
