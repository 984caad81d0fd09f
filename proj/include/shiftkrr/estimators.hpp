#pragma once

#include <optional>
#include <span>
#include <string>

#include <json.hpp>

#include "shiftkrr/kernel_spectrum.hpp"
#include "shiftkrr/shift_models.hpp"

namespace shiftkrr {

enum class ModelMode { kDual, kPrimal };

// kAuto picks primal whenever the feature map is no wider than the sample.
enum class SolveMode { kAuto, kDual, kPrimal };

/// A fitted regressor over an eigen-kernel.
///
/// Dual mode: f(x) = sum_i alpha_i K(x, x_i) over the stored support points.
/// Primal mode: f(x) = sum_j theta_j phi_j(x) over the kernel's features.
/// Immutable after construction.
class FittedModel {
 public:
  static FittedModel dual(EigenKernel kernel, Covariates support, Eigen::VectorXd alpha,
                          double lambda);
  static FittedModel primal(EigenKernel kernel, Eigen::VectorXd theta, double lambda);

  ModelMode mode() const { return mode_; }
  const EigenKernel& kernel() const { return kernel_; }
  const Covariates& support() const { return support_; }
  const Eigen::VectorXd& coefficients() const { return coefficients_; }
  double lambda() const { return lambda_; }

  const std::optional<Eigen::VectorXd>& weights_used() const { return weights_; }
  const std::string& estimator() const { return estimator_; }
  std::optional<double> radius() const { return radius_; }

  FittedModel with_weights(Eigen::VectorXd w) const;
  FittedModel with_estimator(std::string name, std::optional<double> radius = std::nullopt) const;

  double predict(std::span<const double> x) const;
  Eigen::VectorXd predict(const Covariates& xs) const;

  // alpha' K alpha (dual) or sum_j theta_j^2 / mu_j (primal).
  double hilbert_norm_sq() const;

  // Eigen-coordinates theta_j = mu_j sum_i alpha_i phi_j(x_i) for dual
  // models; the stored coefficients for primal ones.
  Eigen::VectorXd primal_coefficients() const;

  nlohmann::json to_json() const;
  static FittedModel from_json(const nlohmann::json& j);

 private:
  FittedModel(ModelMode mode, EigenKernel kernel) : mode_(mode), kernel_(std::move(kernel)) {}

  ModelMode mode_;
  EigenKernel kernel_;
  Covariates support_;
  Eigen::VectorXd coefficients_;
  double lambda_ = 0.0;
  std::optional<Eigen::VectorXd> weights_;
  std::string estimator_ = "krr";
  std::optional<double> radius_;
};

/// Minimizer of (1/n) sum_i (f(x_i) - y_i)^2 + lambda ||f||_H^2.
FittedModel fit_krr(const Dataset& data, const EigenKernel& kernel, double lambda,
                    SolveMode mode = SolveMode::kAuto);

/// Minimizer of (1/n) sum_i w_i (f(x_i) - y_i)^2 + lambda ||f||_H^2 using the
/// dataset's weights (typically truncated likelihood ratios).
FittedModel fit_reweighted_krr(const Dataset& data, const EigenKernel& kernel, double lambda,
                               SolveMode mode = SolveMode::kAuto);

/// Empirical risk minimizer over the Hilbert ball ||f||_H <= radius.
///
/// Returns the minimum-norm interpolating/least-squares fit when it is
/// feasible. Otherwise bisects the ridge multiplier xi until
/// | ||f_xi||_H - radius | <= 1e-6 radius. The multiplier found is stored as
/// the model's lambda.
FittedModel fit_constrained_erm(const Dataset& data, const EigenKernel& kernel, double radius,
                                SolveMode mode = SolveMode::kAuto);

double predict(const FittedModel& model, std::span<const double> x);
double hilbert_norm_sq(const FittedModel& model);

// (1/n) sum_i w_i (f(x_i) - y_i)^2 with w = 1 when `weights` is empty.
double empirical_risk(const FittedModel& model, const Dataset& data,
                      const std::optional<Eigen::VectorXd>& weights = std::nullopt);

/// Ridge solution path in eigen-coordinates, f_xi = argmin (1/n) sum_i
/// w_i (f(x_i) - y_i)^2 + xi ||f||_H^2, for every xi > 0 from one
/// eigendecomposition. Needs a finite feature map.
class PrimalRidgePath {
 public:
  PrimalRidgePath(const Dataset& data, const EigenKernel& kernel, bool use_weights = false);

  Eigen::VectorXd theta(double xi) const;
  double hilbert_norm_sq(double xi) const;

  // tr(K)/n for the training Gram matrix.
  double mean_diagonal() const { return mean_diagonal_; }

  FittedModel fit(double xi) const;
  FittedModel constrained(double radius) const;

  const EigenKernel& kernel() const { return kernel_; }

 private:
  EigenKernel kernel_;
  Eigen::VectorXd root_mu_;
  Eigen::VectorXd spectrum_;  // eigenvalues of S Phi' W Phi S / n
  Eigen::MatrixXd basis_;
  Eigen::VectorXd rhs_;       // basis' S Phi' W y / n
  double mean_diagonal_ = 0.0;
};

struct L2qEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

// ||f - f*||_Q^2 = ||theta - theta*||_2^2 when the eigenfunctions are
// orthonormal in L2(Q).
double l2q_error_exact(const FittedModel& model, const Eigen::VectorXd& theta_star);

L2qEstimate l2q_error_mc(const FittedModel& model, const RegressionFunction& fstar,
                         const ShiftPair& pair, Eigen::Index n_mc, std::uint64_t seed);

double l2q_error(const FittedModel& model, const EigenExpansion& fstar, const ShiftPair& pair,
                 Eigen::Index n_mc, std::uint64_t seed, bool exact_mode);

}  // namespace shiftkrr
