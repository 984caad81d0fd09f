#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <span>

#include <json.hpp>

#include "shiftkrr/common.hpp"

namespace shiftkrr {

using Rng = std::mt19937_64;

struct Dataset {
  Covariates xs;
  Eigen::VectorXd ys;
  std::optional<Eigen::VectorXd> weights;

  Eigen::Index size() const { return ys.size(); }
  Eigen::Index dim() const { return xs.cols(); }

  // Throws ConfigError when lengths differ or weights are negative/non-finite.
  void validate() const;

  // Copy with `w` attached as per-point weights.
  Dataset with_weights(Eigen::VectorXd w) const;
};

enum class NoiseLaw { kGaussian, kRademacher };

/// Source P / target Q pair with a known pointwise likelihood ratio q/p.
///
/// Sampling takes the caller's generator; a pair holds no mutable state and
/// can be shared freely.
class ShiftPair {
 public:
  enum class Family { kHypercube, kGaussianScale };

  // Q uniform on {-1,+1}^D; P has first coordinate 0 with probability
  // 1 - 1/B and uniform signs elsewhere.
  static ShiftPair hypercube(int dim, double b);
  // Q = N(0, 1), P = N(0, tau_sq).
  static ShiftPair gaussian_scale(double tau_sq);

  Family family() const { return family_; }
  int dimension() const { return dim_; }
  double b() const { return b_; }
  double tau_sq() const { return tau_sq_; }
  std::optional<double> declared_b() const { return declared_b_; }
  std::optional<double> declared_v_sq() const { return declared_v_sq_; }

  double likelihood_ratio(std::span<const double> x) const;
  Eigen::VectorXd likelihood_ratios(const Covariates& xs) const;

  Covariates sample_source(Eigen::Index n, Rng& rng) const;
  Covariates sample_target(Eigen::Index n, Rng& rng) const;

  nlohmann::json to_json() const;
  // {"family":"hypercube","D":200,"B":16} | {"family":"gaussian_scale","tau_sq":0.9}
  static ShiftPair from_json(const nlohmann::json& j);

 private:
  ShiftPair() = default;

  Family family_ = Family::kHypercube;
  int dim_ = 1;
  double b_ = 1.0;
  double tau_sq_ = 1.0;
  std::optional<double> declared_b_;
  std::optional<double> declared_v_sq_;
};

ShiftPair hypercube_hard_pair(int dim, double b);
ShiftPair gaussian_scale_pair(double tau_sq);

// E_P[rho^2] = tau / sqrt(2 - 1/tau^2) for the Gaussian scale pair.
double gaussian_scale_second_moment(double tau_sq);

// Inverse of the above on tau_sq in (1/2, 1].
double gaussian_scale_tau_sq_for(double v_sq);

inline double truncate_lr(double rho_value, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("truncation level must be positive");
  return rho_value <= tau ? rho_value : tau;
}

// tau_n = sqrt(n V^2).
double default_truncation(double n, double v_sq);

Eigen::VectorXd truncated_weights(const ShiftPair& pair, const Covariates& xs, double tau);

using RegressionFunction = std::function<double(std::span<const double>)>;

// y_i = f*(x_i) + w_i with w_i of variance sigma^2.
Dataset sample_dataset(const ShiftPair& pair, const RegressionFunction& fstar, double sigma,
                       Eigen::Index n, std::uint64_t seed, bool from_target = false,
                       NoiseLaw noise = NoiseLaw::kGaussian);

struct ChiSqMoment {
  double second_moment = 0.0;  // E_P[rho^2]
  double chi_sq = 0.0;         // second_moment - 1
};

ChiSqMoment estimate_chi_sq_moment(const ShiftPair& pair, Eigen::Index n_mc, std::uint64_t seed);

// Header x_1..x_D,y,weight; the weight column is empty when absent.
void write_dataset_csv(std::ostream& out, const Dataset& data);
Dataset read_dataset_csv(std::istream& in);

}  // namespace shiftkrr
