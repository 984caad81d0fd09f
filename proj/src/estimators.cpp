#include "shiftkrr/estimators.hpp"

#include <cmath>
#include <functional>

namespace shiftkrr {

namespace {

struct Factorized {
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::MatrixXd matrix;  // the matrix actually factorized (jitter included)
};

// Cholesky with jitter escalation 0 -> 1e-12 scale -> 1e-8 scale.
Factorized factorize_spd(Eigen::MatrixXd a, double scale) {
  const double base = scale > 0.0 ? scale : 1.0;
  for (const double rel : {0.0, 1e-12, 1e-8}) {
    Eigen::MatrixXd m = a;
    if (rel > 0.0) m.diagonal().array() += rel * base;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().allFinite() &&
        llt.matrixLLT().diagonal().minCoeff() > 0.0) {
      return {std::move(llt), std::move(m)};
    }
  }
  throw NumericalError("factorization failed");
}

// Solve with one step of iterative refinement.
Eigen::VectorXd solve_refined(const Factorized& f, const Eigen::VectorXd& b) {
  Eigen::VectorXd x = f.llt.solve(b);
  const Eigen::VectorXd r = b - f.matrix * x;
  x += f.llt.solve(r);
  if (!x.allFinite()) throw NumericalError("factorization failed");
  return x;
}

bool use_primal(const Dataset& data, const EigenKernel& kernel, SolveMode mode) {
  switch (mode) {
    case SolveMode::kPrimal: return true;
    case SolveMode::kDual: return false;
    case SolveMode::kAuto: break;
  }
  return kernel.feature_count(data.dim()) <= data.size();
}

void check_fit_inputs(const Dataset& data, double lambda) {
  data.validate();
  if (data.size() < 1) throw ConfigError("fit needs at least one observation");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be positive");
}

// Primal normal equations in the scaled variable beta = theta / sqrt(mu):
// (S Phi' W Phi S / n + lambda I) beta = S Phi' W y / n.
FittedModel fit_primal(const Dataset& data, const EigenKernel& kernel, double lambda,
                       const Eigen::VectorXd* weights) {
  const auto n = static_cast<double>(data.size());
  const Eigen::VectorXd root_mu = kernel.feature_eigenvalues(data.dim()).cwiseSqrt();
  Eigen::MatrixXd scaled = kernel.features(data.xs) * root_mu.asDiagonal();
  Eigen::VectorXd wy = data.ys;
  if (weights) {
    wy = weights->cwiseProduct(data.ys);
    scaled = weights->cwiseSqrt().asDiagonal() * scaled;
  }
  Eigen::VectorXd rhs;
  if (weights) {
    rhs = (kernel.features(data.xs) * root_mu.asDiagonal()).transpose() * wy / n;
  } else {
    rhs = scaled.transpose() * wy / n;
  }
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(scaled.cols(), scaled.cols());
  a.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose(), 1.0 / n);
  a = a.selfadjointView<Eigen::Lower>();
  const double scale = a.diagonal().size() ? a.diagonal().maxCoeff() : 1.0;
  a.diagonal().array() += lambda;
  const Eigen::VectorXd beta = solve_refined(factorize_spd(std::move(a), scale), rhs);
  return FittedModel::primal(kernel, root_mu.cwiseProduct(beta), lambda);
}

// Dual stationarity (W K + n lambda I) alpha = W y, W = I when unweighted.
FittedModel fit_dual(const Dataset& data, const EigenKernel& kernel, double lambda,
                     const Eigen::VectorXd* weights) {
  const auto n = static_cast<double>(data.size());
  Eigen::MatrixXd k = kernel.gram(data.xs);
  const double scale = k.diagonal().maxCoeff();
  Eigen::VectorXd alpha;
  if (!weights) {
    Eigen::MatrixXd a = k;
    a.diagonal().array() += n * lambda;
    alpha = solve_refined(factorize_spd(std::move(a), scale), data.ys);
  } else if (weights->minCoeff() > 0.0) {
    // Symmetric form: (S K S + n lambda I) beta = S y, alpha = S beta, S = W^{1/2}.
    const Eigen::VectorXd s = weights->cwiseSqrt();
    Eigen::MatrixXd a = s.asDiagonal() * k * s.asDiagonal();
    a.diagonal().array() += n * lambda;
    const Eigen::VectorXd beta = solve_refined(factorize_spd(std::move(a), scale),
                                               s.cwiseProduct(data.ys));
    alpha = s.cwiseProduct(beta);
  } else {
    Eigen::MatrixXd a = weights->asDiagonal() * k;
    a.diagonal().array() += n * lambda;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    const Eigen::VectorXd b = weights->cwiseProduct(data.ys);
    alpha = lu.solve(b);
    alpha += lu.solve(b - a * alpha);
    if (!alpha.allFinite()) throw NumericalError("factorization failed");
  }
  return FittedModel::dual(kernel, data.xs, std::move(alpha), lambda);
}

struct Projection {
  double xi = 0.0;
  bool on_boundary = false;
};

// Ridge multiplier placing ||f_xi||_H on the sphere of `radius`, or the
// near-zero multiplier of the minimum-norm fit when that fit is feasible.
Projection project_to_ball(const std::function<double(double)>& norm_sq, double mean_diag,
                           double radius) {
  const double r2 = radius * radius;
  const double xi0 = 1e-10 * mean_diag;
  if (norm_sq(xi0) <= r2) return {xi0, false};
  double lo = std::min(1e-12, xi0);
  double hi = 1e6 * mean_diag;
  int iters = 0;
  while (norm_sq(hi) > r2) {
    hi *= 10.0;
    if (++iters >= 200) throw NumericalError("constraint projection failed");
  }
  for (; iters < 200; ++iters) {
    const double mid = std::sqrt(lo * hi);
    const double norm = std::sqrt(norm_sq(mid));
    if (std::abs(norm - radius) <= 1e-6 * radius) return {mid, true};
    if (norm > radius) lo = mid;
    else hi = mid;
  }
  throw NumericalError("constraint projection failed");
}

// Drop directions whose eigenvalue is numerically zero.
void clean_spectrum(Eigen::VectorXd& spectrum, Eigen::VectorXd& rhs) {
  const double top = spectrum.size() ? spectrum.maxCoeff() : 0.0;
  const double floor = top * 1e-13 * static_cast<double>(spectrum.size());
  for (Eigen::Index k = 0; k < spectrum.size(); ++k) {
    if (spectrum(k) <= floor) {
      spectrum(k) = 0.0;
      rhs(k) = 0.0;
    }
  }
}

FittedModel constrained_dual(const Dataset& data, const EigenKernel& kernel, double radius) {
  const auto n = static_cast<double>(data.size());
  const Eigen::MatrixXd k = kernel.gram(data.xs);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k);
  if (eig.info() != Eigen::Success) throw NumericalError("factorization failed");
  Eigen::VectorXd spectrum = eig.eigenvalues();
  Eigen::VectorXd c = eig.eigenvectors().transpose() * data.ys;
  clean_spectrum(spectrum, c);
  const double mean_diag = k.trace() / n;
  auto coeffs = [&](double xi) -> Eigen::VectorXd {
    Eigen::VectorXd out(c.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      const double d = spectrum(i) + n * xi;
      out(i) = d > 0.0 ? c(i) / d : 0.0;
    }
    return out;
  };
  if (mean_diag <= 0.0) {
    return FittedModel::dual(kernel, data.xs, Eigen::VectorXd::Zero(data.size()), 0.0)
        .with_estimator("erm", radius);
  }
  auto norm_sq = [&](double xi) {
    const Eigen::VectorXd a = coeffs(xi);
    return (spectrum.array() * a.array().square()).sum();
  };
  const auto proj = project_to_ball(norm_sq, mean_diag, radius);
  Eigen::VectorXd alpha = eig.eigenvectors() * coeffs(proj.xi);
  return FittedModel::dual(kernel, data.xs, std::move(alpha), proj.xi).with_estimator("erm", radius);
}

}  // namespace

// ---------------------------------------------------------------------------

FittedModel FittedModel::dual(EigenKernel kernel, Covariates support, Eigen::VectorXd alpha,
                              double lambda) {
  if (support.rows() != alpha.size()) throw ConfigError("dual model: support/coefficient mismatch");
  FittedModel m(ModelMode::kDual, std::move(kernel));
  m.support_ = std::move(support);
  m.coefficients_ = std::move(alpha);
  m.lambda_ = lambda;
  return m;
}

FittedModel FittedModel::primal(EigenKernel kernel, Eigen::VectorXd theta, double lambda) {
  FittedModel m(ModelMode::kPrimal, std::move(kernel));
  m.coefficients_ = std::move(theta);
  m.lambda_ = lambda;
  return m;
}

FittedModel FittedModel::with_weights(Eigen::VectorXd w) const {
  FittedModel m = *this;
  m.weights_ = std::move(w);
  return m;
}

FittedModel FittedModel::with_estimator(std::string name, std::optional<double> radius) const {
  FittedModel m = *this;
  m.estimator_ = std::move(name);
  m.radius_ = radius;
  return m;
}

double FittedModel::predict(std::span<const double> x) const {
  if (mode_ == ModelMode::kPrimal) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < coefficients_.size(); ++j) {
      if (coefficients_(j) != 0.0) s += coefficients_(j) * kernel_.eigenfunction(x, j + 1);
    }
    return s;
  }
  double s = 0.0;
  for (Eigen::Index i = 0; i < support_.rows(); ++i) {
    if (coefficients_(i) != 0.0) s += coefficients_(i) * kernel_(x, row_span(support_, i));
  }
  return s;
}

Eigen::VectorXd FittedModel::predict(const Covariates& xs) const {
  if (mode_ == ModelMode::kPrimal) {
    const Eigen::MatrixXd phi = kernel_.features(xs);
    const auto J = std::min<Eigen::Index>(phi.cols(), coefficients_.size());
    return phi.leftCols(J) * coefficients_.head(J);
  }
  return kernel_.cross_gram(xs, support_) * coefficients_;
}

double FittedModel::hilbert_norm_sq() const {
  if (mode_ == ModelMode::kDual) {
    if (coefficients_.size() == 0) return 0.0;
    const Eigen::MatrixXd k = kernel_.gram(support_);
    return std::max(0.0, coefficients_.dot(k * coefficients_));
  }
  double s = 0.0;
  for (Eigen::Index j = 0; j < coefficients_.size(); ++j) {
    const double t = coefficients_(j);
    if (t == 0.0) continue;
    const double mu = kernel_.eigs().eigenvalue(j + 1);
    if (mu <= 0.0) throw NumericalError("not in RKHS: nonzero coefficient on a zero eigenvalue");
    s += t * t / mu;
  }
  return s;
}

Eigen::VectorXd FittedModel::primal_coefficients() const {
  if (mode_ == ModelMode::kPrimal) return coefficients_;
  const Eigen::MatrixXd phi = kernel_.features(support_);
  const Eigen::VectorXd mu = kernel_.feature_eigenvalues(support_.cols());
  return mu.cwiseProduct(phi.transpose() * coefficients_);
}

namespace {

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

nlohmann::json FittedModel::to_json() const {
  nlohmann::json j;
  j["mode"] = mode_ == ModelMode::kDual ? "dual" : "primal";
  j["estimator"] = estimator_;
  j["lambda"] = lambda_;
  if (radius_) j["radius"] = *radius_;
  j["kernel"] = kernel_.to_json();
  j["coefficients"] = to_vector(coefficients_);
  if (mode_ == ModelMode::kDual) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < support_.rows(); ++i) {
      rows.push_back(std::vector<double>(support_.row(i).data(),
                                         support_.row(i).data() + support_.cols()));
    }
    j["support"] = std::move(rows);
  }
  if (weights_) j["weights"] = to_vector(*weights_);
  return j;
}

FittedModel FittedModel::from_json(const nlohmann::json& j) {
  try {
    auto kernel = EigenKernel::from_json(j.at("kernel"));
    const auto coeffs = j.at("coefficients").get<std::vector<double>>();
    Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(coeffs.data(), static_cast<Eigen::Index>(coeffs.size()));
    const double lambda = j.at("lambda").get<double>();
    std::optional<FittedModel> m;
    if (j.at("mode").get<std::string>() == "dual") {
      const auto rows = j.at("support").get<std::vector<std::vector<double>>>();
      const auto dim = rows.empty() ? Eigen::Index{0} : static_cast<Eigen::Index>(rows.front().size());
      Covariates support(static_cast<Eigen::Index>(rows.size()), dim);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<Eigen::Index>(rows[i].size()) != dim) throw ConfigError("ragged support");
        for (Eigen::Index k = 0; k < dim; ++k) support(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
      }
      m = dual(std::move(kernel), std::move(support), std::move(c), lambda);
    } else {
      m = primal(std::move(kernel), std::move(c), lambda);
    }
    std::optional<double> radius;
    if (j.contains("radius")) radius = j.at("radius").get<double>();
    *m = m->with_estimator(j.value("estimator", std::string("krr")), radius);
    if (j.contains("weights")) {
      const auto w = j.at("weights").get<std::vector<double>>();
      *m = m->with_weights(Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size())));
    }
    return *m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

FittedModel fit_krr(const Dataset& data, const EigenKernel& kernel, double lambda, SolveMode mode) {
  check_fit_inputs(data, lambda);
  return use_primal(data, kernel, mode) ? fit_primal(data, kernel, lambda, nullptr)
                                        : fit_dual(data, kernel, lambda, nullptr);
}

FittedModel fit_reweighted_krr(const Dataset& data, const EigenKernel& kernel, double lambda,
                               SolveMode mode) {
  check_fit_inputs(data, lambda);
  if (!data.weights) throw ConfigError("reweighted fit needs per-point weights");
  const Eigen::VectorXd& w = *data.weights;
  auto model = use_primal(data, kernel, mode) ? fit_primal(data, kernel, lambda, &w)
                                              : fit_dual(data, kernel, lambda, &w);
  return model.with_weights(w).with_estimator("reweighted");
}

FittedModel fit_constrained_erm(const Dataset& data, const EigenKernel& kernel, double radius,
                                SolveMode mode) {
  data.validate();
  if (!(radius > 0.0)) throw ConfigError("radius must be positive");
  if (use_primal(data, kernel, mode)) return PrimalRidgePath(data, kernel).constrained(radius);
  return constrained_dual(data, kernel, radius);
}

double predict(const FittedModel& model, std::span<const double> x) { return model.predict(x); }

double hilbert_norm_sq(const FittedModel& model) { return model.hilbert_norm_sq(); }

double empirical_risk(const FittedModel& model, const Dataset& data,
                      const std::optional<Eigen::VectorXd>& weights) {
  const Eigen::VectorXd r = model.predict(data.xs) - data.ys;
  const double n = static_cast<double>(data.size());
  if (weights) return weights->dot(r.cwiseAbs2()) / n;
  return r.squaredNorm() / n;
}

// ---------------------------------------------------------------------------

PrimalRidgePath::PrimalRidgePath(const Dataset& data, const EigenKernel& kernel, bool use_weights)
    : kernel_(kernel) {
  data.validate();
  if (use_weights && !data.weights) throw ConfigError("ridge path: dataset has no weights");
  const auto n = static_cast<double>(data.size());
  root_mu_ = kernel.feature_eigenvalues(data.dim()).cwiseSqrt();
  const Eigen::MatrixXd scaled = kernel.features(data.xs) * root_mu_.asDiagonal();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(scaled.cols(), scaled.cols());
  Eigen::VectorXd b;
  if (use_weights) {
    const Eigen::VectorXd& w = *data.weights;
    a.selfadjointView<Eigen::Lower>().rankUpdate((w.cwiseSqrt().asDiagonal() * scaled).transpose(),
                                                 1.0 / n);
    b = scaled.transpose() * w.cwiseProduct(data.ys) / n;
  } else {
    a.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose(), 1.0 / n);
    b = scaled.transpose() * data.ys / n;
  }
  a = a.selfadjointView<Eigen::Lower>();
  mean_diagonal_ = a.trace();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  if (eig.info() != Eigen::Success) throw NumericalError("factorization failed");
  spectrum_ = eig.eigenvalues();
  basis_ = eig.eigenvectors();
  rhs_ = basis_.transpose() * b;
  clean_spectrum(spectrum_, rhs_);
}

Eigen::VectorXd PrimalRidgePath::theta(double xi) const {
  Eigen::VectorXd c(rhs_.size());
  for (Eigen::Index k = 0; k < c.size(); ++k) {
    const double d = spectrum_(k) + xi;
    c(k) = d > 0.0 ? rhs_(k) / d : 0.0;
  }
  return root_mu_.cwiseProduct(basis_ * c);
}

double PrimalRidgePath::hilbert_norm_sq(double xi) const {
  double s = 0.0;
  for (Eigen::Index k = 0; k < rhs_.size(); ++k) {
    const double d = spectrum_(k) + xi;
    if (d > 0.0) s += rhs_(k) * rhs_(k) / (d * d);
  }
  return s;
}

FittedModel PrimalRidgePath::fit(double xi) const {
  if (!(xi > 0.0)) throw ConfigError("lambda must be positive");
  return FittedModel::primal(kernel_, theta(xi), xi);
}

FittedModel PrimalRidgePath::constrained(double radius) const {
  if (!(radius > 0.0)) throw ConfigError("radius must be positive");
  if (mean_diagonal_ <= 0.0) {
    return FittedModel::primal(kernel_, Eigen::VectorXd::Zero(root_mu_.size()), 0.0)
        .with_estimator("erm", radius);
  }
  const auto proj = project_to_ball([this](double xi) { return hilbert_norm_sq(xi); },
                                    mean_diagonal_, radius);
  return FittedModel::primal(kernel_, theta(proj.xi), proj.xi).with_estimator("erm", radius);
}

// ---------------------------------------------------------------------------

double l2q_error_exact(const FittedModel& model, const Eigen::VectorXd& theta_star) {
  const Eigen::VectorXd theta = model.primal_coefficients();
  const auto len = std::max(theta.size(), theta_star.size());
  double s = 0.0;
  for (Eigen::Index j = 0; j < len; ++j) {
    const double a = j < theta.size() ? theta(j) : 0.0;
    const double b = j < theta_star.size() ? theta_star(j) : 0.0;
    s += (a - b) * (a - b);
  }
  return s;
}

L2qEstimate l2q_error_mc(const FittedModel& model, const RegressionFunction& fstar,
                         const ShiftPair& pair, Eigen::Index n_mc, std::uint64_t seed) {
  if (n_mc < 2) throw std::invalid_argument("Monte Carlo risk needs n_mc >= 2");
  Rng rng(seed);
  const Covariates xs = pair.sample_target(n_mc, rng);
  const Eigen::VectorXd fhat = model.predict(xs);
  double mean = 0.0;
  double m2 = 0.0;
  for (Eigen::Index i = 0; i < n_mc; ++i) {
    const double d = fhat(i) - fstar(row_span(xs, i));
    const double sq = d * d;
    const double delta = sq - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (sq - mean);
  }
  const double var = m2 / static_cast<double>(n_mc - 1);
  return {mean, std::sqrt(var / static_cast<double>(n_mc))};
}

double l2q_error(const FittedModel& model, const EigenExpansion& fstar, const ShiftPair& pair,
                 Eigen::Index n_mc, std::uint64_t seed, bool exact_mode) {
  if (exact_mode) return l2q_error_exact(model, fstar.theta());
  return l2q_error_mc(model, fstar.evaluator(), pair, n_mc, seed).value;
}

}  // namespace shiftkrr
