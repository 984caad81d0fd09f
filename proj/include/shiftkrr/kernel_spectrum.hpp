#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "shiftkrr/common.hpp"

namespace shiftkrr {

inline constexpr std::int64_t kDefaultPolyJMax = 1'000'000;

/// Nonincreasing, nonnegative Mercer eigenvalues mu_1 >= mu_2 >= ... >= 0.
///
/// Three rules are supported:
///  - finite rank: D listed values, zero beyond index D;
///  - polynomial decay: mu_j = c * j^(-2 alpha) with alpha > 1/2, summed to
///    `j_max` terms and closed with an integral tail bound;
///  - explicit: listed values, zero beyond the list, truncated at `j_max`.
///
/// The materialized values are shared between copies.
class EigenSequence {
 public:
  enum class Kind { kFiniteRank, kPolyDecay, kExplicit };

  static EigenSequence finite_rank(std::vector<double> values);
  static EigenSequence poly_decay(double alpha, double scale = 1.0,
                                  std::int64_t j_max = kDefaultPolyJMax);
  static EigenSequence explicit_values(std::vector<double> values,
                                       std::optional<std::int64_t> j_max = std::nullopt);

  Kind kind() const { return kind_; }
  double alpha() const { return alpha_; }
  double scale() const { return scale_; }

  // Truncation index for sums. For finite rank this is D.
  std::int64_t j_max() const { return j_max_; }

  // mu_j for j >= 1 under the sequence's rule.
  double eigenvalue(std::int64_t j) const;

  // mu_1..mu_{j_max} (finite rank and explicit: only the listed values).
  std::span<const double> values() const { return *values_; }

  // Number of strictly positive eigenvalues among the stored ones.
  std::int64_t positive_count() const { return positive_count_; }

  // True when every eigenvalue past the stored ones is exactly zero.
  bool has_exact_tail() const { return kind_ != Kind::kPolyDecay; }

  // Upper bound on sum_{j > J} mu_j for J >= j_max; zero unless poly decay.
  double tail_bound(std::int64_t J) const;

  // sum_j mu_j including the tail bound.
  double trace() const;

  nlohmann::json to_json() const;
  static EigenSequence from_json(const nlohmann::json& j);

 private:
  EigenSequence(Kind kind, std::shared_ptr<const std::vector<double>> values, std::int64_t j_max,
                double alpha, double scale);

  Kind kind_;
  std::shared_ptr<const std::vector<double>> values_;
  std::int64_t j_max_;
  std::int64_t positive_count_ = 0;
  double alpha_ = 0.0;
  double scale_ = 0.0;
};

enum class EigenfunctionFamily {
  kHypercubeCoordinates,  // phi_j(x) = x_j, zero when x has fewer than j coordinates
  kHermite,               // phi_j(x) = He_{j-1}(x_1) / sqrt((j-1)!), orthonormal under N(0,1)
  kCustom,
};

// phi_j(x) for j >= 1.
using EigenfunctionEvaluator = std::function<double(std::span<const double>, std::int64_t)>;

/// Mercer kernel K(x, x') = sum_j mu_j phi_j(x) phi_j(x'), evaluated through
/// its finite feature map.
class EigenKernel {
 public:
  // kappa_sq defaults to the trace, which is a valid bound for the
  // hypercube family.
  EigenKernel(EigenSequence eigs, EigenfunctionFamily family,
              std::optional<double> kappa_sq = std::nullopt);
  EigenKernel(EigenSequence eigs, EigenfunctionEvaluator evaluator, std::string name,
              double kappa_sq);

  const EigenSequence& eigs() const { return eigs_; }
  EigenfunctionFamily family() const { return family_; }
  double kappa_sq() const { return kappa_sq_; }

  double eigenfunction(std::span<const double> x, std::int64_t j) const;

  // Number of features with mu_j > 0 that can be nonzero on a covariate of
  // dimension `dim`.
  std::int64_t feature_count(Eigen::Index dim) const;

  // Phi with Phi(i, j-1) = phi_j(x_i), j = 1..feature_count.
  Eigen::MatrixXd features(const Covariates& xs) const;

  // (mu_1, ..., mu_J) for J = feature_count(dim).
  Eigen::VectorXd feature_eigenvalues(Eigen::Index dim) const;

  double operator()(std::span<const double> x, std::span<const double> xp) const;

  Eigen::MatrixXd gram(const Covariates& xs) const;
  Eigen::MatrixXd cross_gram(const Covariates& rows, const Covariates& cols) const;

  // kappa_sq >= trace; meaningful for families with |phi_j| <= 1.
  bool kappa_bound_holds() const;

  nlohmann::json to_json() const;
  // Accepts {"eigs": {...}, "eigenfunctions": "...", "kappa_sq": ...} or a
  // bare EigenSequence object (hypercube coordinates assumed).
  static EigenKernel from_json(const nlohmann::json& j);

 private:
  std::int64_t term_count() const;

  EigenSequence eigs_;
  EigenfunctionFamily family_;
  EigenfunctionEvaluator custom_;
  std::string custom_name_;
  double kappa_sq_;
};

/// f = sum_j theta_j phi_j over a kernel's eigenfunctions.
class EigenExpansion {
 public:
  EigenExpansion(EigenKernel kernel, Eigen::VectorXd theta);

  double operator()(std::span<const double> x) const;
  Eigen::VectorXd evaluate(const Covariates& xs) const;
  double hilbert_norm_sq() const;

  const Eigen::VectorXd& theta() const { return theta_; }
  const EigenKernel& kernel() const { return kernel_; }

  std::function<double(std::span<const double>)> evaluator() const;

 private:
  EigenKernel kernel_;
  Eigen::VectorXd theta_;
};

// ---- spectral functionals ----

double eigenvalue(const EigenSequence& eigs, std::int64_t j);

// d(delta) = min{ j >= 1 : mu_j <= delta^2 }. Throws NumericalError when the
// condition fails for every j <= j_max of a sequence with a nonzero tail.
std::int64_t effective_dim(const EigenSequence& eigs, double delta);

struct RegularityMargin {
  std::int64_t dim = 0;  // d(delta)
  double tail_sum = 0.0;
  double budget = 0.0;
  bool is_regular = false;
};

// Tail sum_{j > d(delta)} mu_j against the budget c * d(delta) * delta^2.
RegularityMargin regularity_margin(const EigenSequence& eigs, double delta, double c = 2.0);

// Psi(delta) = sum_j min{delta^2, mu_j * hnorm_sq}.
double psi_complexity(const EigenSequence& eigs, double delta, double hnorm_sq);

struct MFunctionParams {
  double sigma_sq = 1.0;
  double v_sq = 1.0;
  double n = 1.0;
  double hnorm_sq = 1.0;
  double c0 = 1.0;
  bool general_noise = false;
};

// c0 * sqrt(sigma^2 V^2 ln^3(n) / n * Psi(delta)), times
// (sqrt(Psi/sigma^2) + 1) under general noise.
double m_function(const EigenSequence& eigs, double delta, const MFunctionParams& p);

// Smallest grid point with M(delta) <= delta^2 / 2.
double critical_radius(const EigenSequence& eigs, const MFunctionParams& p,
                       std::span<const double> grid);

std::vector<double> default_delta_grid();

}  // namespace shiftkrr
