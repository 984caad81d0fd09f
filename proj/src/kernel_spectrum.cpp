#include "shiftkrr/kernel_spectrum.hpp"

#include <algorithm>
#include <cmath>

namespace shiftkrr {

namespace {

constexpr std::int64_t kMaxFeatures = 200'000;

void check_sequence(const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]) || values[i] < 0.0) {
      throw ConfigError("eigenvalues must be finite and nonnegative");
    }
    if (i > 0 && values[i] > values[i - 1]) {
      throw ConfigError("eigenvalues must be nonincreasing");
    }
  }
}

// Count of stored values strictly greater than `level` (values are sorted
// nonincreasing).
std::int64_t count_above(std::span<const double> v, double level) {
  auto it = std::partition_point(v.begin(), v.end(), [level](double m) { return m > level; });
  return it - v.begin();
}

}  // namespace

EigenSequence::EigenSequence(Kind kind, std::shared_ptr<const std::vector<double>> values,
                             std::int64_t j_max, double alpha, double scale)
    : kind_(kind), values_(std::move(values)), j_max_(j_max), alpha_(alpha), scale_(scale) {
  positive_count_ = count_above(*values_, 0.0);
}

EigenSequence EigenSequence::finite_rank(std::vector<double> values) {
  if (values.empty()) throw ConfigError("finite-rank sequence needs at least one value");
  check_sequence(values);
  const auto d = static_cast<std::int64_t>(values.size());
  return EigenSequence(Kind::kFiniteRank,
                       std::make_shared<const std::vector<double>>(std::move(values)), d, 0.0, 0.0);
}

EigenSequence EigenSequence::poly_decay(double alpha, double scale, std::int64_t j_max) {
  if (!(alpha > 0.5)) throw ConfigError("polynomial decay needs alpha > 1/2 for a finite trace");
  if (!(scale > 0.0)) throw ConfigError("polynomial decay scale must be positive");
  if (j_max < 1) throw ConfigError("j_max must be positive");
  std::vector<double> values(static_cast<std::size_t>(j_max));
  const double two_alpha = 2.0 * alpha;
  for (std::int64_t j = 1; j <= j_max; ++j) {
    values[static_cast<std::size_t>(j - 1)] = scale / std::pow(static_cast<double>(j), two_alpha);
  }
  return EigenSequence(Kind::kPolyDecay,
                       std::make_shared<const std::vector<double>>(std::move(values)), j_max, alpha,
                       scale);
}

EigenSequence EigenSequence::explicit_values(std::vector<double> values,
                                             std::optional<std::int64_t> j_max) {
  if (values.empty()) throw ConfigError("explicit sequence needs at least one value");
  check_sequence(values);
  const auto size = static_cast<std::int64_t>(values.size());
  const std::int64_t jm = j_max.value_or(size);
  if (jm < size) throw ConfigError("explicit j_max must cover the listed values");
  return EigenSequence(Kind::kExplicit,
                       std::make_shared<const std::vector<double>>(std::move(values)), jm, 0.0,
                       0.0);
}

double EigenSequence::eigenvalue(std::int64_t j) const {
  if (j < 1) throw std::invalid_argument("eigenvalue index must be >= 1");
  if (j <= static_cast<std::int64_t>(values_->size())) {
    return (*values_)[static_cast<std::size_t>(j - 1)];
  }
  if (kind_ == Kind::kPolyDecay) {
    return scale_ / std::pow(static_cast<double>(j), 2.0 * alpha_);
  }
  return 0.0;
}

double EigenSequence::tail_bound(std::int64_t J) const {
  if (kind_ != Kind::kPolyDecay) return 0.0;
  const double two_alpha = 2.0 * alpha_;
  return scale_ * std::pow(static_cast<double>(J), 1.0 - two_alpha) / (two_alpha - 1.0);
}

double EigenSequence::trace() const {
  double s = 0.0;
  for (auto it = values_->rbegin(); it != values_->rend(); ++it) s += *it;
  return s + tail_bound(j_max_);
}

nlohmann::json EigenSequence::to_json() const {
  switch (kind_) {
    case Kind::kPolyDecay:
      return {{"kind", "poly"}, {"alpha", alpha_}, {"c", scale_}, {"j_max", j_max_}};
    case Kind::kFiniteRank:
      return {{"kind", "finite"}, {"values", *values_}};
    case Kind::kExplicit:
      return {{"kind", "explicit"}, {"values", *values_}, {"j_max", j_max_}};
  }
  return {};
}

EigenSequence EigenSequence::from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "poly") {
      return poly_decay(j.at("alpha").get<double>(), j.value("c", 1.0),
                        j.value("j_max", kDefaultPolyJMax));
    }
    if (kind == "finite") return finite_rank(j.at("values").get<std::vector<double>>());
    if (kind == "explicit") {
      std::optional<std::int64_t> jm;
      if (j.contains("j_max")) jm = j.at("j_max").get<std::int64_t>();
      return explicit_values(j.at("values").get<std::vector<double>>(), jm);
    }
    throw ConfigError("unknown eigen sequence kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad eigen sequence JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

EigenKernel::EigenKernel(EigenSequence eigs, EigenfunctionFamily family,
                         std::optional<double> kappa_sq)
    : eigs_(std::move(eigs)), family_(family), kappa_sq_(kappa_sq.value_or(eigs_.trace())) {
  if (family_ == EigenfunctionFamily::kCustom) {
    throw ConfigError("custom eigenfunctions need an evaluator");
  }
  if (!(kappa_sq_ > 0.0)) throw ConfigError("kappa_sq must be positive");
}

EigenKernel::EigenKernel(EigenSequence eigs, EigenfunctionEvaluator evaluator, std::string name,
                         double kappa_sq)
    : eigs_(std::move(eigs)),
      family_(EigenfunctionFamily::kCustom),
      custom_(std::move(evaluator)),
      custom_name_(std::move(name)),
      kappa_sq_(kappa_sq) {
  if (!custom_) throw ConfigError("custom eigenfunction evaluator is empty");
  if (!(kappa_sq_ > 0.0)) throw ConfigError("kappa_sq must be positive");
}

double EigenKernel::eigenfunction(std::span<const double> x, std::int64_t j) const {
  switch (family_) {
    case EigenfunctionFamily::kHypercubeCoordinates:
      return j <= static_cast<std::int64_t>(x.size()) ? x[static_cast<std::size_t>(j - 1)] : 0.0;
    case EigenfunctionFamily::kHermite: {
      const double t = x[0];
      double prev = 0.0;
      double cur = 1.0;  // h_0
      for (std::int64_t k = 0; k + 1 < j; ++k) {
        const double next = (t * cur - std::sqrt(static_cast<double>(k)) * prev) /
                            std::sqrt(static_cast<double>(k + 1));
        prev = cur;
        cur = next;
      }
      return cur;
    }
    case EigenfunctionFamily::kCustom:
      return custom_(x, j);
  }
  return 0.0;
}

std::int64_t EigenKernel::term_count() const {
  return eigs_.kind() == EigenSequence::Kind::kPolyDecay ? eigs_.j_max() : eigs_.positive_count();
}

std::int64_t EigenKernel::feature_count(Eigen::Index dim) const {
  std::int64_t terms = term_count();
  if (family_ == EigenfunctionFamily::kHypercubeCoordinates) {
    terms = std::min<std::int64_t>(terms, dim);
  }
  if (terms > kMaxFeatures) {
    throw ConfigError("feature map has " + std::to_string(terms) +
                      " terms; use a finite-rank or explicit spectrum");
  }
  return terms;
}

Eigen::MatrixXd EigenKernel::features(const Covariates& xs) const {
  const auto J = feature_count(xs.cols());
  Eigen::MatrixXd phi(xs.rows(), J);
  if (family_ == EigenfunctionFamily::kHypercubeCoordinates) {
    phi = xs.leftCols(J);
    return phi;
  }
  if (family_ == EigenfunctionFamily::kHermite) {
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
      const double t = xs(i, 0);
      double prev = 0.0;
      double cur = 1.0;
      for (std::int64_t k = 0; k < J; ++k) {
        phi(i, k) = cur;
        const double next = (t * cur - std::sqrt(static_cast<double>(k)) * prev) /
                            std::sqrt(static_cast<double>(k + 1));
        prev = cur;
        cur = next;
      }
    }
    return phi;
  }
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    const auto x = row_span(xs, i);
    for (std::int64_t k = 0; k < J; ++k) phi(i, k) = custom_(x, k + 1);
  }
  return phi;
}

Eigen::VectorXd EigenKernel::feature_eigenvalues(Eigen::Index dim) const {
  const auto J = feature_count(dim);
  Eigen::VectorXd mu(J);
  for (std::int64_t k = 0; k < J; ++k) mu(k) = eigs_.eigenvalue(k + 1);
  return mu;
}

double EigenKernel::operator()(std::span<const double> x, std::span<const double> xp) const {
  const auto J = feature_count(static_cast<Eigen::Index>(std::min(x.size(), xp.size())));
  double s = 0.0;
  for (std::int64_t j = 1; j <= J; ++j) {
    s += eigs_.eigenvalue(j) * eigenfunction(x, j) * eigenfunction(xp, j);
  }
  return s;
}

Eigen::MatrixXd EigenKernel::gram(const Covariates& xs) const {
  const Eigen::MatrixXd phi = features(xs);
  const Eigen::VectorXd root_mu = feature_eigenvalues(xs.cols()).cwiseSqrt();
  const Eigen::MatrixXd scaled = phi * root_mu.asDiagonal();
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(xs.rows(), xs.rows());
  k.selfadjointView<Eigen::Lower>().rankUpdate(scaled);
  return k.selfadjointView<Eigen::Lower>();
}

Eigen::MatrixXd EigenKernel::cross_gram(const Covariates& rows, const Covariates& cols) const {
  const Eigen::MatrixXd a = features(rows);
  const Eigen::MatrixXd b = features(cols);
  const auto J = std::min(a.cols(), b.cols());
  const Eigen::VectorXd mu = feature_eigenvalues(rows.cols()).head(J);
  return a.leftCols(J) * mu.asDiagonal() * b.leftCols(J).transpose();
}

bool EigenKernel::kappa_bound_holds() const { return kappa_sq_ >= eigs_.trace(); }

nlohmann::json EigenKernel::to_json() const {
  std::string family;
  switch (family_) {
    case EigenfunctionFamily::kHypercubeCoordinates: family = "hypercube_coordinates"; break;
    case EigenfunctionFamily::kHermite: family = "hermite"; break;
    case EigenfunctionFamily::kCustom: family = "custom:" + custom_name_; break;
  }
  return {{"eigs", eigs_.to_json()}, {"eigenfunctions", family}, {"kappa_sq", kappa_sq_}};
}

EigenKernel EigenKernel::from_json(const nlohmann::json& j) {
  if (j.contains("kind")) return EigenKernel(EigenSequence::from_json(j),
                                             EigenfunctionFamily::kHypercubeCoordinates);
  try {
    auto eigs = EigenSequence::from_json(j.at("eigs"));
    const auto family = j.value("eigenfunctions", std::string("hypercube_coordinates"));
    std::optional<double> kappa;
    if (j.contains("kappa_sq")) kappa = j.at("kappa_sq").get<double>();
    if (family == "hypercube_coordinates") {
      return EigenKernel(std::move(eigs), EigenfunctionFamily::kHypercubeCoordinates, kappa);
    }
    if (family == "hermite") {
      return EigenKernel(std::move(eigs), EigenfunctionFamily::kHermite, kappa);
    }
    throw ConfigError("eigenfunction family '" + family + "' cannot be built from JSON");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad kernel JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

EigenExpansion::EigenExpansion(EigenKernel kernel, Eigen::VectorXd theta)
    : kernel_(std::move(kernel)), theta_(std::move(theta)) {}

double EigenExpansion::operator()(std::span<const double> x) const {
  double s = 0.0;
  for (Eigen::Index k = 0; k < theta_.size(); ++k) {
    if (theta_(k) != 0.0) s += theta_(k) * kernel_.eigenfunction(x, k + 1);
  }
  return s;
}

Eigen::VectorXd EigenExpansion::evaluate(const Covariates& xs) const {
  Eigen::VectorXd out(xs.rows());
  for (Eigen::Index i = 0; i < xs.rows(); ++i) out(i) = (*this)(row_span(xs, i));
  return out;
}

double EigenExpansion::hilbert_norm_sq() const {
  double s = 0.0;
  for (Eigen::Index k = 0; k < theta_.size(); ++k) {
    if (theta_(k) == 0.0) continue;
    const double mu = kernel_.eigs().eigenvalue(k + 1);
    if (mu <= 0.0) throw NumericalError("not in RKHS: nonzero coefficient on a zero eigenvalue");
    s += theta_(k) * theta_(k) / mu;
  }
  return s;
}

std::function<double(std::span<const double>)> EigenExpansion::evaluator() const {
  return [self = *this](std::span<const double> x) { return self(x); };
}

// ---------------------------------------------------------------------------

double eigenvalue(const EigenSequence& eigs, std::int64_t j) { return eigs.eigenvalue(j); }

std::int64_t effective_dim(const EigenSequence& eigs, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("effective_dim needs delta > 0");
  const double level = delta * delta;
  const auto values = eigs.values();
  const auto above = count_above(values, level);
  if (above < static_cast<std::int64_t>(values.size())) return above + 1;
  switch (eigs.kind()) {
    case EigenSequence::Kind::kFiniteRank:
      return above + 1;
    case EigenSequence::Kind::kExplicit:
      if (eigs.j_max() > above) return above + 1;
      break;
    case EigenSequence::Kind::kPolyDecay:
      break;
  }
  throw NumericalError("effective dimension index exceeds truncation j_max=" +
                       std::to_string(eigs.j_max()));
}

RegularityMargin regularity_margin(const EigenSequence& eigs, double delta, double c) {
  if (!(delta > 0.0) || !(c > 0.0)) throw std::invalid_argument("regularity needs delta, c > 0");
  RegularityMargin out;
  out.dim = effective_dim(eigs, delta);
  const auto values = eigs.values();
  const auto start =
      static_cast<std::size_t>(std::min<std::int64_t>(out.dim, static_cast<std::int64_t>(values.size())));
  double tail = 0.0;
  for (auto k = values.size(); k-- > start;) tail += values[k];
  out.tail_sum = tail + eigs.tail_bound(eigs.j_max());
  out.budget = c * static_cast<double>(out.dim) * delta * delta;
  out.is_regular = out.tail_sum <= out.budget;
  return out;
}

double psi_complexity(const EigenSequence& eigs, double delta, double hnorm_sq) {
  if (delta < 0.0 || hnorm_sq < 0.0) throw std::invalid_argument("psi needs delta, hnorm_sq >= 0");
  const double d2 = delta * delta;
  if (d2 == 0.0 || hnorm_sq == 0.0) return 0.0;
  // Entries with mu_j * h > delta^2 contribute delta^2; the rest contribute
  // mu_j * h. Summed from the small end for accuracy.
  const auto values = eigs.values();
  const double level = d2 / hnorm_sq;
  const auto k = count_above(values, level);
  double small = 0.0;
  for (auto j = values.size(); j-- > static_cast<std::size_t>(k);) small += values[j];
  double s = static_cast<double>(k) * d2 + hnorm_sq * small;

  if (eigs.kind() == EigenSequence::Kind::kPolyDecay) {
    const std::int64_t J = eigs.j_max();
    if (hnorm_sq * eigs.eigenvalue(J + 1) <= d2) {
      s += hnorm_sq * eigs.tail_bound(J);
    } else {
      // Indices J+1..j_star-1 sit above the level and contribute delta^2.
      const double j_cross = std::pow(eigs.scale() * hnorm_sq / d2, 1.0 / (2.0 * eigs.alpha()));
      const auto j_star = static_cast<std::int64_t>(std::ceil(j_cross));
      s += static_cast<double>(j_star - J - 1) * d2 + hnorm_sq * eigs.tail_bound(j_star - 1);
    }
  }
  return s;
}

double m_function(const EigenSequence& eigs, double delta, const MFunctionParams& p) {
  if (!(p.n >= 1.0) || !(p.sigma_sq > 0.0) || !(p.v_sq >= 1.0)) {
    throw std::invalid_argument("m_function needs n >= 1, sigma_sq > 0, V^2 >= 1");
  }
  const double psi = psi_complexity(eigs, delta, p.hnorm_sq);
  const double log_n = std::log(p.n);
  const double m = p.c0 * std::sqrt(p.sigma_sq * p.v_sq * log_n * log_n * log_n / p.n * psi);
  if (!p.general_noise) return m;
  return m * (std::sqrt(psi / p.sigma_sq) + 1.0);
}

double critical_radius(const EigenSequence& eigs, const MFunctionParams& p,
                       std::span<const double> grid) {
  if (grid.empty()) throw std::invalid_argument("critical_radius needs a nonempty grid");
  for (const double delta : grid) {
    if (m_function(eigs, delta, p) <= 0.5 * delta * delta) return delta;
  }
  throw NumericalError("no solution of M(delta) <= delta^2/2 on grid");
}

std::vector<double> default_delta_grid() { return log_grid(1e-4, 1e1, 400); }

}  // namespace shiftkrr
