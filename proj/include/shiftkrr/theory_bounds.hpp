#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "shiftkrr/kernel_spectrum.hpp"

namespace shiftkrr {

inline constexpr double kDefaultC2 = 519.0 / 256.0;
inline constexpr double kDefaultC1 = 32.0;

/// Inputs a bound was evaluated at, echoed into every report.
struct BoundInputs {
  double b = 1.0;
  std::optional<double> v_sq;
  double sigma_sq = 1.0;
  double n = 1.0;
  double hnorm_sq = 1.0;
  std::optional<double> kappa_sq;
  std::optional<double> constant;  // c, c' or c2 when the formula has one
};

struct BoundReport {
  double lambda_or_delta = 0.0;
  double bias_sq = 0.0;
  double variance = 0.0;
  double extra = 0.0;  // additive terms outside bias/variance
  double total = 0.0;
  bool in_validity_region = true;
  std::vector<std::string> warnings;
  BoundInputs inputs;
  nlohmann::json eigs;

  nlohmann::json to_json() const;
};

// sum_j mu_j / (mu_j + s) over the whole sequence, with an upper-bound tail
// term for polynomial decay.
double shrinkage_sum(const EigenSequence& eigs, double s);

// bias^2 = 4 lambda B h, variance = 80 sigma^2 B (ln n / n) sum_j mu_j/(mu_j + lambda B).
BoundReport krr_bound(const EigenSequence& eigs, double lambda, double b, double n, double sigma_sq,
                      double hnorm_sq);

struct LambdaStar {
  double lambda = 0.0;
  std::size_t index = 0;
  BoundReport report;
};

// Grid argmin of krr_bound(...).total; ties go to the smaller lambda.
LambdaStar lambda_star(const EigenSequence& eigs, double b, double n, double sigma_sq,
                       double hnorm_sq, std::span<const double> lambda_grid);

// c' (delta^2 h + sigma^2 B d(delta) ln n / n).
double regular_bound(const EigenSequence& eigs, double delta, double b, double n, double sigma_sq,
                     double hnorm_sq, double c_prime = 1.0);

double lambda_rule_finite_rank(double sigma_sq, double rank, double n);

// B^(-1/(2a+1)) (sigma^2 ln n / n)^(2a/(2a+1)).
double lambda_rule_poly(double alpha, double b, double sigma_sq, double n);

enum class DimConvention {
  kLiteral,  // d(delta) as defined, D+1 below the smallest positive eigenvalue
  kCapped,   // min(d(delta), D) for finite rank
};

struct LowerBoundResult {
  double value = 0.0;  // c * min over the grid
  double delta = 0.0;  // minimizing grid point
  std::int64_t dim = 0;
};

// c * min_delta { delta^2 + sigma^2 B d(delta) / n } over the grid.
LowerBoundResult minimax_lower(const EigenSequence& eigs, double b, double n, double sigma_sq,
                               std::span<const double> delta_grid, double c = 1.0,
                               DimConvention convention = DimConvention::kLiteral);

// Continuous minimum of delta^2 + a/delta, the balance for alpha = 1 spectra
// where d(delta) ~ 1/delta.
double poly_lower_balance(double a);

struct RateKind {
  enum class Kind { kFiniteRank, kPoly } kind = Kind::kFiniteRank;
  double rank = 1.0;   // D for finite rank
  double alpha = 1.0;  // decay exponent for poly
};

// Finite rank: c D V^2 ln^3(n) sigma^2 / n. Poly: c (V^2 ln^3(n) sigma^2 / n)^(2a/(2a+1)).
double reweighted_rate(const RateKind& kind, double v_sq, double sigma_sq, double n, double c = 1.0);

// 2 sqrt(lambda V^2 kappa^2) h + 40 (sigma^2 ln n / n)(kappa^2 / lambda).
BoundReport unbounded_unweighted_bound(double lambda, double v_sq, double kappa_sq, double sigma_sq,
                                       double n, double hnorm_sq);

// Stationary point of the above in lambda.
double unbounded_lambda_star(double v_sq, double kappa_sq, double sigma_sq, double n,
                             double hnorm_sq);

// c2 (lambda B h + (sigma^2 B / n) sum_j mu_j/(mu_j + lambda B) + sigma^2 / n). Flags
// (without throwing) lambda < c1 kappa^2 ln n / n.
BoundReport expectation_bound(const EigenSequence& eigs, double lambda, double b, double n,
                              double sigma_sq, double kappa_sq, double hnorm_sq,
                              double c2 = kDefaultC2, double c1 = kDefaultC1);

}  // namespace shiftkrr
