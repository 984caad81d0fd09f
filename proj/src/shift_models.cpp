#include "shiftkrr/shift_models.hpp"

#include <cmath>
#include <istream>
#include <string>

#include "shiftkrr/csv.hpp"

namespace shiftkrr {

void Dataset::validate() const {
  if (xs.rows() != ys.size()) throw ConfigError("dataset: covariate and response counts differ");
  if (weights) {
    if (weights->size() != ys.size()) throw ConfigError("dataset: weight count differs");
    for (Eigen::Index i = 0; i < weights->size(); ++i) {
      const double w = (*weights)(i);
      if (!std::isfinite(w) || w < 0.0) throw ConfigError("dataset: weights must be finite and >= 0");
    }
  }
}

Dataset Dataset::with_weights(Eigen::VectorXd w) const {
  Dataset out{xs, ys, std::move(w)};
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------

ShiftPair ShiftPair::hypercube(int dim, double b) {
  if (dim < 1) throw ConfigError("hypercube pair needs D >= 1");
  if (!(b >= 1.0) || !std::isfinite(b)) throw ConfigError("hypercube pair needs B >= 1");
  ShiftPair p;
  p.family_ = Family::kHypercube;
  p.dim_ = dim;
  p.b_ = b;
  p.declared_b_ = b;
  p.declared_v_sq_ = b;
  return p;
}

ShiftPair ShiftPair::gaussian_scale(double tau_sq) {
  if (!(tau_sq > 0.5)) throw ConfigError("chi-square moment infinite: gaussian scale pair needs tau_sq > 1/2");
  ShiftPair p;
  p.family_ = Family::kGaussianScale;
  p.dim_ = 1;
  p.tau_sq_ = tau_sq;
  p.declared_v_sq_ = gaussian_scale_second_moment(tau_sq);
  if (tau_sq >= 1.0) p.declared_b_ = std::sqrt(tau_sq);  // rho peaks at x = 0
  return p;
}

double ShiftPair::likelihood_ratio(std::span<const double> x) const {
  if (family_ == Family::kHypercube) {
    // q puts no mass on x_1 = 0.
    return x[0] != 0.0 ? b_ : 0.0;
  }
  const double t = x[0];
  const double log_rho = t * t * (0.5 / tau_sq_ - 0.5) + 0.5 * std::log(tau_sq_);
  return std::exp(log_rho);
}

Eigen::VectorXd ShiftPair::likelihood_ratios(const Covariates& xs) const {
  Eigen::VectorXd rho(xs.rows());
  for (Eigen::Index i = 0; i < xs.rows(); ++i) rho(i) = likelihood_ratio(row_span(xs, i));
  return rho;
}

namespace {

void fill_signs(Covariates& xs, Eigen::Index first_col, Rng& rng) {
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    std::uint64_t bits = 0;
    int left = 0;
    for (Eigen::Index j = first_col; j < xs.cols(); ++j) {
      if (left == 0) {
        bits = rng();
        left = 64;
      }
      xs(i, j) = (bits & 1U) ? 1.0 : -1.0;
      bits >>= 1;
      --left;
    }
  }
}

}  // namespace

Covariates ShiftPair::sample_source(Eigen::Index n, Rng& rng) const {
  Covariates xs(n, dim_);
  if (family_ == Family::kGaussianScale) {
    std::normal_distribution<double> normal(0.0, std::sqrt(tau_sq_));
    for (Eigen::Index i = 0; i < n; ++i) xs(i, 0) = normal(rng);
    return xs;
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep = 1.0 / b_;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = unif(rng);
    xs(i, 0) = u < keep ? (u < 0.5 * keep ? -1.0 : 1.0) : 0.0;
  }
  if (dim_ > 1) fill_signs(xs, 1, rng);
  return xs;
}

Covariates ShiftPair::sample_target(Eigen::Index n, Rng& rng) const {
  Covariates xs(n, dim_);
  if (family_ == Family::kGaussianScale) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < n; ++i) xs(i, 0) = normal(rng);
    return xs;
  }
  fill_signs(xs, 0, rng);
  return xs;
}

nlohmann::json ShiftPair::to_json() const {
  if (family_ == Family::kHypercube) return {{"family", "hypercube"}, {"D", dim_}, {"B", b_}};
  return {{"family", "gaussian_scale"}, {"tau_sq", tau_sq_}};
}

ShiftPair ShiftPair::from_json(const nlohmann::json& j) {
  try {
    const auto family = j.at("family").get<std::string>();
    if (family == "hypercube") return hypercube(j.at("D").get<int>(), j.at("B").get<double>());
    if (family == "gaussian_scale") return gaussian_scale(j.at("tau_sq").get<double>());
    throw ConfigError("unknown shift family '" + family + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad shift pair JSON: ") + e.what());
  }
}

ShiftPair hypercube_hard_pair(int dim, double b) { return ShiftPair::hypercube(dim, b); }
ShiftPair gaussian_scale_pair(double tau_sq) { return ShiftPair::gaussian_scale(tau_sq); }

double gaussian_scale_second_moment(double tau_sq) {
  if (!(tau_sq > 0.5)) throw ConfigError("chi-square moment infinite: tau_sq must exceed 1/2");
  return std::sqrt(tau_sq) / std::sqrt(2.0 - 1.0 / tau_sq);
}

double gaussian_scale_tau_sq_for(double v_sq) {
  if (!(v_sq >= 1.0)) throw ConfigError("V^2 must be >= 1");
  if (v_sq == 1.0) return 1.0;
  // Second moment decreases from +inf at 1/2 to 1 at 1.
  double lo = 0.5;
  double hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (gaussian_scale_second_moment(mid) > v_sq) lo = mid;
    else hi = mid;
  }
  return hi;
}

double default_truncation(double n, double v_sq) {
  if (!(n >= 1.0)) throw std::invalid_argument("default_truncation needs n >= 1");
  return std::sqrt(n * v_sq);
}

Eigen::VectorXd truncated_weights(const ShiftPair& pair, const Covariates& xs, double tau) {
  Eigen::VectorXd w = pair.likelihood_ratios(xs);
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = truncate_lr(w(i), tau);
  return w;
}

Dataset sample_dataset(const ShiftPair& pair, const RegressionFunction& fstar, double sigma,
                       Eigen::Index n, std::uint64_t seed, bool from_target, NoiseLaw noise) {
  if (n < 1) throw std::invalid_argument("sample_dataset needs n >= 1");
  if (!(sigma >= 0.0)) throw std::invalid_argument("noise level must be >= 0");
  Rng rng(seed);
  Dataset data;
  data.xs = from_target ? pair.sample_target(n, rng) : pair.sample_source(n, rng);
  data.ys.resize(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double w = 0.0;
    if (sigma > 0.0) {
      w = noise == NoiseLaw::kGaussian ? sigma * normal(rng) : ((rng() & 1U) ? sigma : -sigma);
    }
    data.ys(i) = fstar(row_span(data.xs, i)) + w;
  }
  return data;
}

ChiSqMoment estimate_chi_sq_moment(const ShiftPair& pair, Eigen::Index n_mc, std::uint64_t seed) {
  if (n_mc < 1) throw std::invalid_argument("n_mc must be >= 1");
  Rng rng(seed);
  constexpr Eigen::Index kBlock = 65536;
  double sum = 0.0;
  for (Eigen::Index done = 0; done < n_mc; done += kBlock) {
    const auto m = std::min(kBlock, n_mc - done);
    const Eigen::VectorXd rho = pair.likelihood_ratios(pair.sample_source(m, rng));
    sum += rho.squaredNorm();
  }
  ChiSqMoment out;
  out.second_moment = sum / static_cast<double>(n_mc);
  out.chi_sq = out.second_moment - 1.0;
  return out;
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  data.validate();
  for (Eigen::Index j = 0; j < data.dim(); ++j) out << "x_" << (j + 1) << ',';
  out << "y,weight\n";
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.dim(); ++j) out << format_double(data.xs(i, j)) << ',';
    out << format_double(data.ys(i)) << ',';
    if (data.weights) out << format_double((*data.weights)(i));
    out << '\n';
  }
}

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset CSV is empty");
  const auto header = split_csv_line(line);
  Eigen::Index dim = 0;
  while (dim < static_cast<Eigen::Index>(header.size()) &&
         header[static_cast<std::size_t>(dim)] == "x_" + std::to_string(dim + 1)) {
    ++dim;
  }
  if (dim == 0 || static_cast<Eigen::Index>(header.size()) < dim + 1 ||
      header[static_cast<std::size_t>(dim)] != "y") {
    throw ConfigError("dataset CSV header must be x_1..x_D,y[,weight]");
  }
  const bool has_weight_col = static_cast<Eigen::Index>(header.size()) > dim + 1 &&
                              header[static_cast<std::size_t>(dim + 1)] == "weight";

  std::vector<std::vector<double>> rows;
  std::vector<double> ys;
  std::vector<double> ws;
  bool any_weight = false;
  bool all_weight = true;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (static_cast<Eigen::Index>(cells.size()) < dim + 1) {
      throw ConfigError("dataset CSV line " + std::to_string(line_no) + " is short");
    }
    try {
      std::vector<double> x(static_cast<std::size_t>(dim));
      for (Eigen::Index j = 0; j < dim; ++j) x[static_cast<std::size_t>(j)] = std::stod(cells[static_cast<std::size_t>(j)]);
      rows.push_back(std::move(x));
      ys.push_back(std::stod(cells[static_cast<std::size_t>(dim)]));
      if (has_weight_col && static_cast<Eigen::Index>(cells.size()) > dim + 1 &&
          !cells[static_cast<std::size_t>(dim + 1)].empty()) {
        ws.push_back(std::stod(cells[static_cast<std::size_t>(dim + 1)]));
        any_weight = true;
      } else {
        ws.push_back(0.0);
        all_weight = false;
      }
    } catch (const std::logic_error&) {
      throw ConfigError("dataset CSV line " + std::to_string(line_no) + " has a non-numeric cell");
    }
  }
  if (any_weight && !all_weight) throw ConfigError("dataset CSV: weights must be all present or all absent");

  Dataset data;
  const auto n = static_cast<Eigen::Index>(rows.size());
  data.xs.resize(n, dim);
  data.ys.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) data.xs(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    data.ys(i) = ys[static_cast<std::size_t>(i)];
  }
  if (any_weight) data.weights = Eigen::Map<const Eigen::VectorXd>(ws.data(), n);
  data.validate();
  return data;
}

}  // namespace shiftkrr
