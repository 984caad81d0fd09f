#include "shiftkrr/theory_bounds.hpp"

#include <cmath>
#include <fmt/core.h>

namespace shiftkrr {

namespace {

// sum_{j >= J} j^(-p) by Euler-Maclaurin; accurate to ~1e-12 relative once J >= 100.
double power_tail(double p, double j0) {
  return std::pow(j0, 1.0 - p) / (p - 1.0) + 0.5 * std::pow(j0, -p) +
         p * std::pow(j0, -p - 1.0) / 12.0 -
         p * (p + 1.0) * (p + 2.0) * std::pow(j0, -p - 3.0) / 720.0;
}

void require(bool ok, const char* what) {
  if (!ok) throw ConfigError(what);
}

double log_n(double n) {
  require(n >= 1.0 && std::isfinite(n), "n must be >= 1");
  return std::log(n);
}

double krr_variance(const EigenSequence& eigs, double lambda, double b, double n,
                    double sigma_sq) {
  return 80.0 * sigma_sq * b * (log_n(n) / n) * shrinkage_sum(eigs, lambda * b);
}

}  // namespace

nlohmann::json BoundReport::to_json() const {
  nlohmann::json j;
  j["lambda_or_delta"] = lambda_or_delta;
  j["bias_sq"] = bias_sq;
  j["variance"] = variance;
  j["extra"] = extra;
  j["total"] = total;
  j["in_validity_region"] = in_validity_region;
  j["warnings"] = warnings;
  nlohmann::json in;
  in["B"] = inputs.b;
  if (inputs.v_sq) in["V_sq"] = *inputs.v_sq;
  in["sigma_sq"] = inputs.sigma_sq;
  in["n"] = inputs.n;
  in["hnorm_sq"] = inputs.hnorm_sq;
  if (inputs.kappa_sq) in["kappa_sq"] = *inputs.kappa_sq;
  if (inputs.constant) in["constant"] = *inputs.constant;
  if (!eigs.is_null()) in["eigs"] = eigs;
  j["config"] = std::move(in);
  return j;
}

double shrinkage_sum(const EigenSequence& eigs, double s) {
  require(s > 0.0, "shrinkage level must be positive");
  const auto values = eigs.values();
  double total = 0.0;
  if (eigs.kind() != EigenSequence::Kind::kPolyDecay) {
    for (const double mu : values) total += mu / (mu + s);
    return total;
  }
  // Once mu_j <= 1e-6 s, mu/(mu+s) = mu/s - mu^2/s^2 up to O((mu/s)^3).
  const double p = 2.0 * eigs.alpha();
  const double c = eigs.scale();
  for (std::size_t k = 0; k < values.size(); ++k) {
    const double mu = values[k];
    if (k >= 100 && mu <= 1e-6 * s) {
      const double j0 = static_cast<double>(k + 1);
      return total + c * power_tail(p, j0) / s - c * c * power_tail(2.0 * p, j0) / (s * s);
    }
    total += mu / (mu + s);
  }
  return total + eigs.tail_bound(eigs.j_max()) / s;
}

BoundReport krr_bound(const EigenSequence& eigs, double lambda, double b, double n, double sigma_sq,
                      double hnorm_sq) {
  require(lambda > 0.0, "lambda must be positive");
  require(b >= 1.0, "B must be >= 1");
  require(sigma_sq > 0.0, "sigma_sq must be positive");
  require(hnorm_sq >= 0.0, "hnorm_sq must be >= 0");
  BoundReport r;
  r.lambda_or_delta = lambda;
  r.bias_sq = 4.0 * lambda * b * hnorm_sq;
  r.variance = krr_variance(eigs, lambda, b, n, sigma_sq);
  r.total = r.bias_sq + r.variance;
  r.inputs = {b, std::nullopt, sigma_sq, n, hnorm_sq, std::nullopt, std::nullopt};
  r.eigs = eigs.to_json();
  return r;
}

LambdaStar lambda_star(const EigenSequence& eigs, double b, double n, double sigma_sq,
                       double hnorm_sq, std::span<const double> lambda_grid) {
  require(!lambda_grid.empty(), "lambda grid is empty");
  std::vector<double> totals;
  totals.reserve(lambda_grid.size());
  for (const double lam : lambda_grid) {
    require(lam > 0.0, "lambda grid must be positive");
    totals.push_back(4.0 * lam * b * hnorm_sq + krr_variance(eigs, lam, b, n, sigma_sq));
  }
  // Strict comparison keeps the first minimum; sort the grid so that means the smallest lambda.
  std::size_t best = 0;
  for (std::size_t i = 1; i < totals.size(); ++i) {
    if (totals[i] < totals[best] ||
        (totals[i] == totals[best] && lambda_grid[i] < lambda_grid[best])) {
      best = i;
    }
  }
  return {lambda_grid[best], best, krr_bound(eigs, lambda_grid[best], b, n, sigma_sq, hnorm_sq)};
}

double regular_bound(const EigenSequence& eigs, double delta, double b, double n, double sigma_sq,
                     double hnorm_sq, double c_prime) {
  require(delta > 0.0, "delta must be positive");
  const auto d = static_cast<double>(effective_dim(eigs, delta));
  return c_prime * (delta * delta * hnorm_sq + sigma_sq * b * d * log_n(n) / n);
}

double lambda_rule_finite_rank(double sigma_sq, double rank, double n) {
  require(sigma_sq > 0.0 && rank > 0.0, "sigma_sq and D must be positive");
  return sigma_sq * rank * log_n(n) / n;
}

double lambda_rule_poly(double alpha, double b, double sigma_sq, double n) {
  require(alpha > 0.5, "alpha must exceed 1/2");
  require(b >= 1.0 && sigma_sq > 0.0, "B must be >= 1 and sigma_sq positive");
  const double e = 2.0 * alpha + 1.0;
  return std::pow(b, -1.0 / e) * std::pow(sigma_sq * log_n(n) / n, 2.0 * alpha / e);
}

LowerBoundResult minimax_lower(const EigenSequence& eigs, double b, double n, double sigma_sq,
                               std::span<const double> delta_grid, double c,
                               DimConvention convention) {
  require(!delta_grid.empty(), "delta grid is empty");
  require(n > 0.0 && sigma_sq > 0.0 && b >= 1.0, "need n > 0, sigma_sq > 0, B >= 1");
  const bool cap = convention == DimConvention::kCapped &&
                   eigs.kind() == EigenSequence::Kind::kFiniteRank;
  LowerBoundResult best;
  bool first = true;
  double best_raw = 0.0;
  for (const double delta : delta_grid) {
    require(delta > 0.0, "delta grid must be positive");
    auto d = effective_dim(eigs, delta);
    if (cap) d = std::min<std::int64_t>(d, eigs.positive_count());
    const double raw = delta * delta + sigma_sq * b * static_cast<double>(d) / n;
    if (first || raw < best_raw || (raw == best_raw && delta < best.delta)) {
      best_raw = raw;
      best.delta = delta;
      best.dim = d;
      first = false;
    }
  }
  best.value = c * best_raw;
  return best;
}

double poly_lower_balance(double a) {
  require(a > 0.0, "balance level must be positive");
  return 3.0 * std::pow(0.5 * a, 2.0 / 3.0);
}

double reweighted_rate(const RateKind& kind, double v_sq, double sigma_sq, double n, double c) {
  require(v_sq >= 1.0 && sigma_sq > 0.0, "need V^2 >= 1 and sigma_sq > 0");
  const double l = log_n(n);
  const double base = v_sq * l * l * l * sigma_sq / n;
  if (kind.kind == RateKind::Kind::kFiniteRank) {
    require(kind.rank > 0.0, "rank must be positive");
    return c * kind.rank * base;
  }
  require(kind.alpha > 0.5, "alpha must exceed 1/2");
  return c * std::pow(base, 2.0 * kind.alpha / (2.0 * kind.alpha + 1.0));
}

BoundReport unbounded_unweighted_bound(double lambda, double v_sq, double kappa_sq, double sigma_sq,
                                       double n, double hnorm_sq) {
  require(lambda > 0.0 && v_sq >= 1.0 && kappa_sq > 0.0 && sigma_sq > 0.0 && hnorm_sq >= 0.0,
          "invalid inputs to the unbounded-ratio bound");
  BoundReport r;
  r.lambda_or_delta = lambda;
  r.bias_sq = 2.0 * std::sqrt(lambda * v_sq * kappa_sq) * hnorm_sq;
  r.variance = 40.0 * sigma_sq * (log_n(n) / n) * (kappa_sq / lambda);
  r.total = r.bias_sq + r.variance;
  r.inputs = {1.0, v_sq, sigma_sq, n, hnorm_sq, kappa_sq, std::nullopt};
  return r;
}

double unbounded_lambda_star(double v_sq, double kappa_sq, double sigma_sq, double n,
                             double hnorm_sq) {
  require(v_sq >= 1.0 && kappa_sq > 0.0 && sigma_sq > 0.0 && hnorm_sq > 0.0,
          "invalid inputs to the unbounded-ratio minimizer");
  return std::pow(40.0 * sigma_sq * std::sqrt(kappa_sq) * log_n(n) / (n * std::sqrt(v_sq) * hnorm_sq),
                  2.0 / 3.0);
}

BoundReport expectation_bound(const EigenSequence& eigs, double lambda, double b, double n,
                              double sigma_sq, double kappa_sq, double hnorm_sq, double c2,
                              double c1) {
  require(lambda > 0.0 && b >= 1.0 && sigma_sq > 0.0 && kappa_sq > 0.0 && hnorm_sq >= 0.0,
          "invalid inputs to the expectation bound");
  BoundReport r;
  r.lambda_or_delta = lambda;
  r.bias_sq = c2 * lambda * b * hnorm_sq;
  r.variance = c2 * (sigma_sq * b / n) * shrinkage_sum(eigs, lambda * b);
  r.extra = c2 * sigma_sq / n;
  r.total = r.bias_sq + r.variance + r.extra;
  r.inputs = {b, std::nullopt, sigma_sq, n, hnorm_sq, kappa_sq, c2};
  r.eigs = eigs.to_json();
  const double floor = c1 * kappa_sq * log_n(n) / n;
  if (lambda < floor) {
    r.in_validity_region = false;
    r.warnings.push_back(fmt::format("lambda {:.6g} below validity floor {:.6g}", lambda, floor));
  }
  return r;
}

}  // namespace shiftkrr
