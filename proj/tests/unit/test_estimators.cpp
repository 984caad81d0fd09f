#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "shiftkrr/estimators.hpp"

using namespace shiftkrr;

namespace {

struct Instance {
  EigenKernel kernel;
  ShiftPair pair;
  EigenExpansion fstar;
  Dataset data;
};

Instance random_instance(std::uint64_t seed, int dim, int n, double sigma = 0.3) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  std::vector<double> mu(static_cast<std::size_t>(dim));
  for (auto& m : mu) m = unif(rng);
  std::sort(mu.begin(), mu.end(), std::greater<>());
  EigenKernel kernel(EigenSequence::finite_rank(mu), EigenfunctionFamily::kHypercubeCoordinates);
  auto pair = hypercube_hard_pair(dim, 1.0 + 3.0 * unif(rng));
  std::normal_distribution<double> normal;
  Eigen::VectorXd theta(dim);
  for (int j = 0; j < dim; ++j) theta(j) = normal(rng) * std::sqrt(mu[static_cast<std::size_t>(j)]);
  EigenExpansion fstar(kernel, theta);
  auto data = sample_dataset(pair, fstar.evaluator(), sigma, n, derive_seed(seed, 1));
  return {kernel, pair, fstar, data};
}

}  // namespace

TEST_CASE("KRR dual solution satisfies its stationarity equation") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto inst = random_instance(s, 6, 40);
    const double lambda = 0.01 * (1.0 + static_cast<double>(s));
    const auto model = fit_krr(inst.data, inst.kernel, lambda, SolveMode::kDual);
    REQUIRE(model.mode() == ModelMode::kDual);
    const Eigen::MatrixXd k = inst.kernel.gram(inst.data.xs);
    const Eigen::VectorXd resid = k * model.coefficients() + 40.0 * lambda * model.coefficients() - inst.data.ys;
    CHECK(resid.norm() <= 1e-8 * inst.data.ys.norm());
  }
}

TEST_CASE("dual and primal KRR agree") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto inst = random_instance(100 + s, 5, 30);
    const auto dual = fit_krr(inst.data, inst.kernel, 0.05, SolveMode::kDual);
    const auto primal = fit_krr(inst.data, inst.kernel, 0.05, SolveMode::kPrimal);
    CHECK(primal.mode() == ModelMode::kPrimal);
    Rng rng(s);
    const auto test = inst.pair.sample_target(50, rng);
    CHECK((dual.predict(test) - primal.predict(test)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((dual.primal_coefficients() - primal.coefficients()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(dual.hilbert_norm_sq() == doctest::Approx(primal.hilbert_norm_sq()).epsilon(1e-9));
    CHECK(dual.predict(row_span(test, 0)) == doctest::Approx(dual.predict(test)(0)).epsilon(1e-12));
  }
}

TEST_CASE("auto mode picks primal when features fit in the sample") {
  auto inst = random_instance(3, 4, 20);
  CHECK(fit_krr(inst.data, inst.kernel, 0.1).mode() == ModelMode::kPrimal);
  auto small = random_instance(3, 8, 6);
  CHECK(fit_krr(small.data, small.kernel, 0.1).mode() == ModelMode::kDual);
}

TEST_CASE("unit weights reproduce the unweighted fit") {
  for (const auto mode : {SolveMode::kDual, SolveMode::kPrimal}) {
    auto inst = random_instance(7, 6, 45);
    const auto plain = fit_krr(inst.data, inst.kernel, 0.02, mode);
    const auto weighted = fit_reweighted_krr(inst.data.with_weights(Eigen::VectorXd::Ones(45)),
                                             inst.kernel, 0.02, mode);
    CHECK(weighted.estimator() == "reweighted");
    CHECK(weighted.weights_used().has_value());
    CHECK((plain.predict(inst.data.xs) - weighted.predict(inst.data.xs)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("zero weights take the LU path and match the primal solve") {
  auto inst = random_instance(8, 4, 30);
  Eigen::VectorXd w = inst.pair.likelihood_ratios(inst.data.xs);
  w(0) = 0.0;
  w(1) = 0.0;
  const auto data = inst.data.with_weights(w);
  const auto dual = fit_reweighted_krr(data, inst.kernel, 0.03, SolveMode::kDual);
  const auto primal = fit_reweighted_krr(data, inst.kernel, 0.03, SolveMode::kPrimal);
  CHECK((dual.primal_coefficients() - primal.coefficients()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_THROWS_AS(fit_reweighted_krr(inst.data, inst.kernel, 0.03), ConfigError);
}

TEST_CASE("noiseless realizable fit recovers f*") {
  auto inst = random_instance(21, 4, 200, 0.0);
  const auto model = fit_krr(inst.data, inst.kernel, 1e-10);
  CHECK(l2q_error_exact(model, inst.fstar.theta()) < 1e-12);
}

TEST_CASE("input validation") {
  auto inst = random_instance(1, 3, 10);
  CHECK_THROWS_AS(fit_krr(inst.data, inst.kernel, 0.0), ConfigError);
  CHECK_THROWS_AS(fit_krr(inst.data, inst.kernel, -1.0), ConfigError);
  CHECK_THROWS_AS(fit_constrained_erm(inst.data, inst.kernel, 0.0), ConfigError);
}

TEST_CASE("constrained ERM: inactive constraint gives the least-squares fit") {
  auto inst = random_instance(5, 4, 60, 0.1);
  const auto erm = fit_constrained_erm(inst.data, inst.kernel, 100.0);
  CHECK(erm.estimator() == "erm");
  CHECK(erm.radius().value() == 100.0);
  const auto ls = fit_krr(inst.data, inst.kernel, 1e-12);
  CHECK((erm.coefficients() - ls.coefficients()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("constrained ERM: active constraint lands on the sphere with KKT") {
  for (std::uint64_t s = 0; s < 8; ++s) {
    auto inst = random_instance(200 + s, 5, 50);
    const double free_norm = std::sqrt(fit_constrained_erm(inst.data, inst.kernel, 1e6).hilbert_norm_sq());
    const double radius = 0.5 * free_norm;
    for (const auto mode : {SolveMode::kPrimal, SolveMode::kDual}) {
      const auto erm = fit_constrained_erm(inst.data, inst.kernel, radius, mode);
      CHECK(std::sqrt(erm.hilbert_norm_sq()) == doctest::Approx(radius).epsilon(1e-6));
      // Stationarity in beta = theta / sqrt(mu): S Phi'(Phi theta - y)/n + xi beta = 0.
      const Eigen::VectorXd theta = erm.primal_coefficients();
      const Eigen::VectorXd root = inst.kernel.feature_eigenvalues(5).cwiseSqrt();
      const Eigen::MatrixXd phi = inst.kernel.features(inst.data.xs);
      const Eigen::VectorXd grad = root.cwiseProduct(phi.transpose() * (phi * theta - inst.data.ys)) / 50.0 +
                                   erm.lambda() * theta.cwiseQuotient(root);
      CHECK(grad.norm() < 1e-8);
      CHECK(erm.lambda() > 0.0);
    }
  }
}

TEST_CASE("primal ridge path matches direct KRR fits") {
  auto inst = random_instance(9, 6, 80);
  const PrimalRidgePath path(inst.data, inst.kernel);
  for (const double xi : {1e-4, 1e-2, 1.0}) {
    const auto direct = fit_krr(inst.data, inst.kernel, xi, SolveMode::kPrimal);
    CHECK((path.theta(xi) - direct.coefficients()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(path.hilbert_norm_sq(xi) == doctest::Approx(direct.hilbert_norm_sq()).epsilon(1e-9));
  }
  // Norm decreases along the path.
  CHECK(path.hilbert_norm_sq(1e-3) > path.hilbert_norm_sq(1e-1));
  CHECK_THROWS_AS(path.fit(0.0), ConfigError);
}

TEST_CASE("hilbert norm rejects mass on zero eigenvalues") {
  const EigenKernel kernel(EigenSequence::finite_rank({1.0, 0.0}), EigenfunctionFamily::kHypercubeCoordinates);
  const auto model = FittedModel::primal(kernel, Eigen::Vector2d(0.5, 0.5), 0.1);
  CHECK_THROWS_WITH_AS(model.hilbert_norm_sq(), doctest::Contains("not in RKHS"), NumericalError);
}

TEST_CASE("model JSON round trip preserves predictions") {
  auto inst = random_instance(12, 5, 20);
  for (const auto mode : {SolveMode::kDual, SolveMode::kPrimal}) {
    const auto model = fit_krr(inst.data, inst.kernel, 0.1, mode).with_weights(Eigen::VectorXd::Ones(20));
    const auto back = FittedModel::from_json(nlohmann::json::parse(model.to_json().dump()));
    CHECK(back.mode() == model.mode());
    CHECK(back.lambda() == model.lambda());
    CHECK(back.weights_used().has_value());
    CHECK((back.predict(inst.data.xs) - model.predict(inst.data.xs)).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK_THROWS_AS(FittedModel::from_json({{"mode", "dual"}}), ConfigError);
}

TEST_CASE("empirical risk") {
  auto inst = random_instance(13, 3, 30, 0.0);
  const auto exact = FittedModel::primal(inst.kernel, inst.fstar.theta(), 0.0);
  CHECK(empirical_risk(exact, inst.data) < 1e-28);
  const auto zero = FittedModel::primal(inst.kernel, Eigen::VectorXd::Zero(3), 0.0);
  CHECK(empirical_risk(zero, inst.data) == doctest::Approx(inst.data.ys.squaredNorm() / 30.0));
  const Eigen::VectorXd w = Eigen::VectorXd::Constant(30, 2.0);
  CHECK(empirical_risk(zero, inst.data, w) == doctest::Approx(2.0 * inst.data.ys.squaredNorm() / 30.0));
}

TEST_CASE("Monte Carlo and exact L2(Q) risks agree within three standard errors") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto inst = random_instance(300 + s, 6, 25);
    const auto model = fit_krr(inst.data, inst.kernel, 0.05);
    const double exact = l2q_error(model, inst.fstar, inst.pair, 100000, 1, true);
    const auto mc = l2q_error_mc(model, inst.fstar.evaluator(), inst.pair, 100000, derive_seed(s, 2));
    CHECK(std::abs(mc.value - exact) <= 3.0 * mc.std_error + 1e-12);
    CHECK(l2q_error(model, inst.fstar, inst.pair, 100000, derive_seed(s, 2), false) == mc.value);
  }
}
