#include "shiftkrr/hard_instance.hpp"

#include <cmath>
#include <limits>

#include "shiftkrr/estimators.hpp"
#include "shiftkrr/shift_models.hpp"

namespace shiftkrr {

namespace {

Eigen::VectorXd inverse_square_spectrum(Eigen::Index dim) {
  Eigen::VectorXd mu(dim);
  for (Eigen::Index j = 0; j < dim; ++j) {
    const auto k = static_cast<double>(j + 1);
    mu(j) = 1.0 / (k * k);
  }
  return mu;
}

// Exact minimum of z'Az + 2 c'z over ||z||^2 <= s for symmetric PSD A.
double ball_quadratic_min(const Eigen::MatrixXd& a, const Eigen::VectorXd& c, double s) {
  if (s <= 0.0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  if (eig.info() != Eigen::Success) throw NumericalError("factorization failed");
  Eigen::VectorXd gamma = eig.eigenvalues().cwiseMax(0.0);
  Eigen::VectorXd proj = eig.eigenvectors().transpose() * c;
  const double top = gamma.size() ? gamma.maxCoeff() : 0.0;
  const double floor = std::max(top, 1.0) * 1e-14;
  auto norm_sq = [&](double xi) {
    double total = 0.0;
    for (Eigen::Index k = 0; k < gamma.size(); ++k) {
      const double d = gamma(k) + xi;
      if (d > floor) total += proj(k) * proj(k) / (d * d);
      else if (proj(k) != 0.0) return std::numeric_limits<double>::infinity();
    }
    return total;
  };
  auto value = [&](double xi) {
    double total = 0.0;
    for (Eigen::Index k = 0; k < gamma.size(); ++k) {
      const double d = gamma(k) + xi;
      if (d <= floor) continue;
      const double z = -proj(k) / d;
      total += gamma(k) * z * z + 2.0 * proj(k) * z;
    }
    return total;
  };
  // Null directions with no linear term carry zero, matching the
  // min-norm interior minimizer.
  for (Eigen::Index k = 0; k < gamma.size(); ++k) {
    if (gamma(k) <= floor && std::abs(proj(k)) <= 1e-15 * std::max(1.0, c.norm())) proj(k) = 0.0;
  }
  if (norm_sq(0.0) <= s) return value(0.0);
  double lo = 0.0;
  double hi = std::max(1.0, top);
  for (int it = 0; norm_sq(hi) > s; ++it) {
    hi *= 2.0;
    if (it > 2000) throw NumericalError("trust-region multiplier not bracketed");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (norm_sq(mid) > s) lo = mid;
    else hi = mid;
  }
  return value(hi);
}

}  // namespace

HardInstanceState HardInstanceState::from_sample(const Covariates& xs, const Eigen::VectorXd& noise,
                                                 double b) {
  if (xs.rows() != noise.size() || xs.rows() < 1) throw ConfigError("hard instance: sample size mismatch");
  const auto n = static_cast<double>(xs.rows());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(xs.cols(), xs.cols());
  cov.selfadjointView<Eigen::Lower>().rankUpdate(xs.transpose(), 1.0 / n);
  cov = cov.selfadjointView<Eigen::Lower>();
  Eigen::VectorXd v = xs.transpose() * noise / n;
  return from_moments(std::move(cov), std::move(v), b);
}

HardInstanceState HardInstanceState::from_moments(Eigen::MatrixXd cov, Eigen::VectorXd v, double b) {
  if (cov.rows() != cov.cols() || cov.rows() != v.size() || v.size() < 1) {
    throw ConfigError("hard instance: covariance and v dimensions differ");
  }
  if (!v.allFinite() || !cov.allFinite()) throw ConfigError("hard instance: non-finite moments");
  if (!(b >= 1.0)) throw ConfigError("hard instance: B must be >= 1");
  HardInstanceState s;
  s.b = b;
  s.empirical_cov = 0.5 * (cov + cov.transpose());
  s.v = std::move(v);
  s.mu = inverse_square_spectrum(s.v.size());
  return s;
}

double g_primal(const HardInstanceState& state, double t, std::optional<double> quad_coeff) {
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("g(t) needs t in [0, 1]");
  if (t == 1.0) return 0.0;
  const Eigen::Index m = state.dim() - 1;
  const double dt = t - 1.0;
  const double head = state.empirical_cov(0, 0) * dt * dt - 2.0 * state.v(0) * dt;
  const double slack = std::max(0.0, 1.0 - t * t / state.mu(0));
  if (m == 0) return head;
  const Eigen::VectorXd mu_rest = state.mu.tail(m);
  const Eigen::VectorXd v_rest = state.v.tail(m);
  if (quad_coeff) {
    if (!(*quad_coeff > 0.0)) throw ConfigError("quad_coeff must be positive");
    return head + g_dual_tail(v_rest, mu_rest, slack, *quad_coeff).value;
  }
  // Tail in z = M^(-1/2) theta_R: z'(M^1/2 S_RR M^1/2) z + 2 (M^1/2 (dt S_R1 - v_R))'z.
  const Eigen::VectorXd root = mu_rest.cwiseSqrt();
  const Eigen::MatrixXd a =
      root.asDiagonal() * state.empirical_cov.bottomRightCorner(m, m) * root.asDiagonal();
  const Eigen::VectorXd lin =
      root.cwiseProduct(dt * state.empirical_cov.col(0).tail(m) - v_rest);
  return head + ball_quadratic_min(a, lin, slack);
}

DualTail g_dual_tail(const Eigen::VectorXd& v_rest, const Eigen::VectorXd& mu_rest, double slack,
                     double quad_coeff, double xi_lo, double xi_hi) {
  if (v_rest.size() != mu_rest.size()) throw ConfigError("dual tail: v and mu lengths differ");
  if (!(slack >= 0.0)) throw ConfigError("dual tail: slack must be >= 0");
  if (!(quad_coeff > 0.0)) throw ConfigError("quad_coeff must be positive");
  if (v_rest.isZero(0.0)) return {0.0, 0.0};
  auto dual = [&](double xi) {
    double total = -xi * slack;
    for (Eigen::Index j = 0; j < v_rest.size(); ++j) {
      if (mu_rest(j) <= 0.0) continue;  // the constraint pins theta_j = 0
      total -= v_rest(j) * v_rest(j) / (quad_coeff + xi / mu_rest(j));
    }
    return total;
  };
  // Bracket on a log grid (xi = 0 prepended), then golden-section search.
  std::vector<double> grid{0.0};
  const auto logs = log_grid(xi_lo, xi_hi, 321);
  grid.insert(grid.end(), logs.begin(), logs.end());
  std::size_t best = 0;
  double best_val = dual(0.0);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double val = dual(grid[i]);
    if (val > best_val) {
      best_val = val;
      best = i;
    }
  }
  if (best + 1 == grid.size()) return {best_val, grid[best]};
  double a = best == 0 ? 0.0 : grid[best - 1];
  double b = grid[best + 1];
  constexpr double kInvPhi = 0.6180339887498949;
  double x1 = b - kInvPhi * (b - a);
  double x2 = a + kInvPhi * (b - a);
  double f1 = dual(x1);
  double f2 = dual(x2);
  for (int it = 0; it < 300 && (b - a) > 1e-10 * std::max(b, 1e-300); ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + kInvPhi * (b - a);
      f2 = dual(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - kInvPhi * (b - a);
      f1 = dual(x1);
    }
  }
  DualTail out{best_val, grid[best]};
  for (const double x : {x1, x2}) {
    const double val = dual(x);
    if (val > out.value) out = {val, x};
  }
  return out;
}

EtaSums eta_sums(double b, double alpha, const Eigen::VectorXd& mu) {
  if (!(b >= 1.0) || !(alpha > 0.0)) throw ConfigError("eta sums need B >= 1 and alpha > 0");
  const auto dim = static_cast<double>(mu.size());
  EtaSums out;
  out.alpha_in_range = alpha > b / (4.0 * dim * dim) && alpha < b / 4.0;
  for (Eigen::Index j = 1; j < mu.size(); ++j) {
    const double eta = mu(j) > 0.0 ? 1.0 / (1.0 + alpha / (b * mu(j))) : 0.0;
    out.sum_eta += eta;
    out.sum_eta_sq += eta * eta;
    out.max_eta = std::max(out.max_eta, eta);
  }
  return out;
}

double failure_krr_lambda(double n, double b) {
  return std::pow(4.0, 2.0 / 3.0) * std::pow(n, -2.0 / 3.0) * std::pow(b, -1.0 / 3.0);
}

std::vector<FailureRecord> simulate_failure(std::int64_t n, double b, double sigma_sq,
                                            Eigen::Index dim, int reps, std::uint64_t seed,
                                            unsigned threads) {
  if (n < 2) throw ConfigError("erm-failure needs n >= 2");
  if (reps < 1) throw ConfigError("reps must be >= 1");
  if (!(sigma_sq >= 0.0)) throw ConfigError("sigma_sq must be >= 0");
  const auto nd = static_cast<double>(n);
  // Small slack so B = floor(n^(2/3)) style inputs survive rounding.
  if (!(b >= 1.0) || b > std::pow(nd, 2.0 / 3.0) * (1.0 + 1e-12)) {
    throw ConfigError("erm-failure needs 1 <= B <= n^(2/3)");
  }
  if (dim < 1 || dim > n) throw ConfigError("erm-failure needs 1 <= D <= n");

  const auto pair = ShiftPair::hypercube(static_cast<int>(dim), b);
  const auto mu = inverse_square_spectrum(dim);
  const EigenKernel kernel(EigenSequence::finite_rank({mu.data(), mu.data() + mu.size()}),
                           EigenfunctionFamily::kHypercubeCoordinates);
  const double lambda = failure_krr_lambda(nd, b);
  const double sigma = std::sqrt(sigma_sq);
  Eigen::VectorXd theta_star = Eigen::VectorXd::Zero(dim);
  theta_star(0) = 1.0;
  const RegressionFunction fstar = [](std::span<const double> x) { return x[0]; };

  std::vector<FailureRecord> out(static_cast<std::size_t>(reps));
  parallel_for(out.size(), threads, [&](std::size_t r) {
    FailureRecord rec;
    rec.rep = static_cast<int>(r);
    rec.n = n;
    rec.b = b;
    rec.seed = derive_seed(seed, r);
    const Dataset data = sample_dataset(pair, fstar, sigma, n, rec.seed);
    const PrimalRidgePath path(data, kernel);
    const FittedModel erm = path.constrained(1.0);
    const FittedModel krr = path.fit(lambda);
    rec.erm_risk = l2q_error_exact(erm, theta_star);
    rec.krr_risk = l2q_error_exact(krr, theta_star);
    rec.krr_hnorm_sq = krr.hilbert_norm_sq();
    rec.theta1_erm = erm.coefficients()(0);
    out[r] = rec;
  });
  return out;
}

}  // namespace shiftkrr
