#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "shiftkrr/common.hpp"

namespace shiftkrr {

/// Sufficient statistics of one draw from the hard hypercube instance, in
/// eigen-coordinates with target theta* = e_1 and mu_j = j^-2.
struct HardInstanceState {
  double b = 1.0;
  Eigen::MatrixXd empirical_cov;  // X'X / n
  Eigen::VectorXd v;              // X'w / n, w the noise draws
  Eigen::VectorXd mu;

  Eigen::Index dim() const { return v.size(); }

  // From raw covariates (one row per point) and the matching noise draws.
  static HardInstanceState from_sample(const Covariates& xs, const Eigen::VectorXd& noise, double b);
  static HardInstanceState from_moments(Eigen::MatrixXd cov, Eigen::VectorXd v, double b);
};

/// g(t) = min over theta with theta_1 = t and sum_j theta_j^2/mu_j <= 1 of
/// (theta - e1)' S (theta - e1) - 2 v'(theta - e1).
///
/// With `quad_coeff` set, the tail block of S is replaced by quad_coeff * I and
/// the cross terms are dropped, leaving a separable problem solved through
/// g_dual_tail. Without it the full quadratic is minimized exactly. g(1) is
/// exactly zero in both cases.
double g_primal(const HardInstanceState& state, double t,
                std::optional<double> quad_coeff = std::nullopt);

struct DualTail {
  double value = 0.0;
  double xi_star = 0.0;
};

// max over xi >= 0 of -xi * slack - sum_j v_j^2 / (quad_coeff + xi / mu_j).
DualTail g_dual_tail(const Eigen::VectorXd& v_rest, const Eigen::VectorXd& mu_rest, double slack,
                     double quad_coeff, double xi_lo = 1e-8, double xi_hi = 1e8);

struct EtaSums {
  double sum_eta = 0.0;
  double sum_eta_sq = 0.0;
  double max_eta = 0.0;
  bool alpha_in_range = true;  // B/(4D^2) < alpha < B/4
};

// eta_j = 1 / (1 + alpha / (B mu_j)) over j = 2..D, mu holding mu_1..mu_D.
EtaSums eta_sums(double b, double alpha, const Eigen::VectorXd& mu);

struct FailureRecord {
  int rep = 0;
  std::int64_t n = 0;
  double b = 1.0;
  double erm_risk = 0.0;
  double krr_risk = 0.0;
  double krr_hnorm_sq = 0.0;
  double theta1_erm = 0.0;
  std::uint64_t seed = 0;
};

// lambda = 4^(2/3) n^(-2/3) B^(-1/3).
double failure_krr_lambda(double n, double b);

inline constexpr Eigen::Index kDefaultFailureDim = 512;

/// Replicates constrained ERM (radius 1) against KRR on the hard instance
/// with f* = phi_1. Replication r uses derive_seed(seed, r).
std::vector<FailureRecord> simulate_failure(std::int64_t n, double b, double sigma_sq,
                                            Eigen::Index dim, int reps, std::uint64_t seed,
                                            unsigned threads = 1);

}  // namespace shiftkrr
