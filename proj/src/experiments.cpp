#include "shiftkrr/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "shiftkrr/csv.hpp"

namespace shiftkrr {

namespace {

const char* rule_name(LambdaRule::Kind k) {
  switch (k) {
    case LambdaRule::Kind::kFixed: return "fixed";
    case LambdaRule::Kind::kFiniteRank: return "finite_rank_rule";
    case LambdaRule::Kind::kPoly: return "poly_rule";
    case LambdaRule::Kind::kReweighted: return "reweighted_rule";
  }
  return "fixed";
}

LambdaRule parse_rule(const nlohmann::json& j) {
  LambdaRule rule;
  const std::string kind = j.is_string() ? j.get<std::string>() : j.at("kind").get<std::string>();
  if (kind == "fixed") rule.kind = LambdaRule::Kind::kFixed;
  else if (kind == "finite_rank_rule") rule.kind = LambdaRule::Kind::kFiniteRank;
  else if (kind == "poly_rule") rule.kind = LambdaRule::Kind::kPoly;
  else if (kind == "reweighted_rule") rule.kind = LambdaRule::Kind::kReweighted;
  else throw ConfigError("unknown lambda rule '" + kind + "'");
  if (j.is_object()) {
    rule.value = j.value("value", 0.0);
    rule.c = j.value("c", 1.0);
  }
  return rule;
}

TargetSpec parse_target(const nlohmann::json& j) {
  TargetSpec t;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "power_law") {
    t.kind = TargetSpec::Kind::kPowerLaw;
    t.exponent = j.value("exponent", 1.5);
    t.first_index = j.value("first_index", 1);
  } else if (kind == "coordinate") {
    t.kind = TargetSpec::Kind::kCoordinate;
    t.first_index = j.value("index", 1);
  } else if (kind == "coefficients") {
    t.kind = TargetSpec::Kind::kCoefficients;
    t.coefficients = j.at("values").get<std::vector<double>>();
  } else {
    throw ConfigError("unknown fstar kind '" + kind + "'");
  }
  return t;
}

nlohmann::json target_json(const TargetSpec& t) {
  switch (t.kind) {
    case TargetSpec::Kind::kPowerLaw:
      return {{"kind", "power_law"}, {"exponent", t.exponent}, {"first_index", t.first_index}};
    case TargetSpec::Kind::kCoordinate:
      return {{"kind", "coordinate"}, {"index", t.first_index}};
    case TargetSpec::Kind::kCoefficients:
      return {{"kind", "coefficients"}, {"values", t.coefficients}};
  }
  return {};
}

bool exact_risk_available(const EigenKernel& kernel, const ShiftPair& pair) {
  // Parseval needs eigenfunctions orthonormal under the target law.
  return (kernel.family() == EigenfunctionFamily::kHypercubeCoordinates &&
          pair.family() == ShiftPair::Family::kHypercube) ||
         (kernel.family() == EigenfunctionFamily::kHermite &&
          pair.family() == ShiftPair::Family::kGaussianScale);
}

}  // namespace

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (n_list.empty() || shift_levels.empty()) throw ConfigError("n_list and shift_levels must be nonempty");
  for (const auto n : n_list) {
    if (n < 2) throw ConfigError("every n must be >= 2");
  }
  if (reps < 1) throw ConfigError("reps must be >= 1");
  if (!(sigma_sq >= 0.0)) throw ConfigError("sigma_sq must be >= 0");
  if (!(hnorm > 0.0)) throw ConfigError("hnorm must be positive");
  if (estimator != "krr" && estimator != "reweighted" && estimator != "erm") {
    throw ConfigError("estimator must be krr, reweighted or erm");
  }
  if (lambda_rule.kind == LambdaRule::Kind::kFixed && !(lambda_rule.value > 0.0)) {
    throw ConfigError("fixed lambda must be positive");
  }
  if (!(lambda_rule.c > 0.0)) throw ConfigError("lambda rule multiplier must be positive");
  if (!(truncation_scale > 0.0)) throw ConfigError("truncation_scale must be positive");
  if (radius && !(*radius > 0.0)) throw ConfigError("radius must be positive");
  if (n_mc < 2) throw ConfigError("n_mc must be >= 2");
  (void)EigenKernel::from_json(kernel);
  for (const double level : shift_levels) (void)pair_for_level(*this, level);
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["pair"] = pair;
  j["kernel"] = kernel;
  j["estimator"] = estimator;
  nlohmann::json rule{{"kind", rule_name(lambda_rule.kind)}, {"c", lambda_rule.c}};
  if (lambda_rule.kind == LambdaRule::Kind::kFixed) rule["value"] = lambda_rule.value;
  j["lambda_rule"] = rule;
  j["n_list"] = n_list;
  j["shift_levels"] = shift_levels;
  j["sigma_sq"] = sigma_sq;
  j["hnorm"] = hnorm;
  j["fstar"] = target_json(fstar);
  if (radius) j["radius"] = *radius;
  j["truncation_scale"] = truncation_scale;
  j["reps"] = reps;
  j["n_mc"] = n_mc;
  j["risk_mode"] = risk_mode == RiskMode::kExact ? "exact"
                   : risk_mode == RiskMode::kMonteCarlo ? "mc" : "auto";
  j["seed"] = seed;
  j["threads"] = threads;
  if (out) j["out"] = *out;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{
      "pair", "kernel", "estimator", "lambda_rule", "n_list", "shift_levels", "sigma_sq", "hnorm",
      "fstar", "radius", "truncation_scale", "reps", "n_mc", "risk_mode", "seed", "threads", "out"};
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) throw ConfigError("unknown config key '" + item.key() + "'");
  }
  ExperimentConfig c;
  try {
    if (j.contains("pair")) c.pair = j.at("pair");
    if (j.contains("kernel")) c.kernel = j.at("kernel");
    c.estimator = j.value("estimator", c.estimator);
    if (j.contains("lambda_rule")) c.lambda_rule = parse_rule(j.at("lambda_rule"));
    if (j.contains("n_list")) c.n_list = j.at("n_list").get<std::vector<std::int64_t>>();
    if (j.contains("shift_levels")) c.shift_levels = j.at("shift_levels").get<std::vector<double>>();
    c.sigma_sq = j.value("sigma_sq", c.sigma_sq);
    c.hnorm = j.value("hnorm", c.hnorm);
    if (j.contains("fstar")) c.fstar = parse_target(j.at("fstar"));
    if (j.contains("radius")) c.radius = j.at("radius").get<double>();
    c.truncation_scale = j.value("truncation_scale", c.truncation_scale);
    c.reps = j.value("reps", c.reps);
    c.n_mc = j.value("n_mc", c.n_mc);
    const auto mode = j.value("risk_mode", std::string("auto"));
    if (mode == "auto") c.risk_mode = RiskMode::kAuto;
    else if (mode == "exact") c.risk_mode = RiskMode::kExact;
    else if (mode == "mc") c.risk_mode = RiskMode::kMonteCarlo;
    else throw ConfigError("risk_mode must be auto, exact or mc");
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ShiftPair pair_for_level(const ExperimentConfig& config, double level) {
  nlohmann::json spec = config.pair;
  const auto family = spec.value("family", std::string());
  if (family == "hypercube") {
    spec["B"] = level;
  } else if (family == "gaussian_scale") {
    spec["tau_sq"] = gaussian_scale_tau_sq_for(level);
  } else {
    throw ConfigError("unknown shift family '" + family + "'");
  }
  return ShiftPair::from_json(spec);
}

EigenExpansion make_target(const TargetSpec& spec, const EigenKernel& kernel, Eigen::Index dim,
                           double hnorm) {
  const auto count = kernel.feature_count(dim);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(count);
  if (spec.kind == TargetSpec::Kind::kCoefficients) {
    if (static_cast<std::int64_t>(spec.coefficients.size()) > count) {
      throw ConfigError("fstar has more coefficients than the kernel has features");
    }
    for (std::size_t j = 0; j < spec.coefficients.size(); ++j) {
      theta(static_cast<Eigen::Index>(j)) = spec.coefficients[j];
    }
    return EigenExpansion(kernel, std::move(theta));
  }
  if (spec.first_index < 1 || spec.first_index > count) {
    throw ConfigError("fstar index outside the kernel's feature range");
  }
  if (spec.kind == TargetSpec::Kind::kCoordinate) {
    theta(spec.first_index - 1) = 1.0;
  } else {
    for (std::int64_t j = spec.first_index; j <= count; ++j) {
      theta(j - 1) = std::pow(static_cast<double>(j), -spec.exponent);
    }
  }
  const double norm_sq = EigenExpansion(kernel, theta).hilbert_norm_sq();
  if (!(norm_sq > 0.0)) throw ConfigError("fstar has zero Hilbert norm");
  theta *= hnorm / std::sqrt(norm_sq);
  return EigenExpansion(kernel, std::move(theta));
}

double lambda_for(const ExperimentConfig& config, const EigenKernel& kernel, const ShiftPair& pair,
                  double n) {
  const auto& rule = config.lambda_rule;
  const auto& eigs = kernel.eigs();
  const bool poly = eigs.kind() == EigenSequence::Kind::kPolyDecay;
  const auto rank = static_cast<double>(kernel.feature_count(pair.dimension()));
  const double sigma_sq = config.sigma_sq > 0.0 ? config.sigma_sq : 1.0;
  switch (rule.kind) {
    case LambdaRule::Kind::kFixed:
      return rule.value;
    case LambdaRule::Kind::kFiniteRank:
      return rule.c * lambda_rule_finite_rank(sigma_sq, rank, n);
    case LambdaRule::Kind::kPoly: {
      if (!poly) throw ConfigError("poly_rule needs a polynomial-decay kernel");
      if (!pair.declared_b()) throw ConfigError("poly_rule needs a B-bounded pair");
      return rule.c * lambda_rule_poly(eigs.alpha(), *pair.declared_b(), sigma_sq, n);
    }
    case LambdaRule::Kind::kReweighted: {
      if (!pair.declared_v_sq()) throw ConfigError("reweighted_rule needs a declared V^2");
      RateKind kind;
      if (poly) {
        kind.kind = RateKind::Kind::kPoly;
        kind.alpha = eigs.alpha();
      } else {
        kind.rank = rank;
      }
      return reweighted_rate(kind, *pair.declared_v_sq(), sigma_sq, n, rule.c);
    }
  }
  throw ConfigError("unknown lambda rule");
}

// ---------------------------------------------------------------------------

void RiskTable::write_csv(std::ostream& out) const {
  out << "rep,n,B_or_V2,estimator,lambda,risk,hnorm_sq,seed,status\n";
  for (const auto& r : rows) {
    out << r.rep << ',' << r.n << ',' << format_double(r.level) << ',' << r.estimator << ','
        << format_double(r.lambda) << ',' << format_double(r.risk) << ','
        << format_double(r.hnorm_sq) << ',' << r.seed << ',' << r.status << '\n';
  }
}

nlohmann::json RiskTable::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"rep", r.rep},           {"n", r.n},
                     {"B_or_V2", r.level},     {"estimator", r.estimator},
                     {"lambda", r.lambda},     {"hnorm_sq", r.hnorm_sq},
                     {"seed", r.seed},         {"status", r.status}};
    // JSON has no NaN; failed rows carry null risk.
    j["risk"] = std::isfinite(r.risk) ? nlohmann::json(r.risk) : nlohmann::json(nullptr);
    arr.push_back(std::move(j));
  }
  return {{"rows", std::move(arr)}};
}

std::uint64_t row_seed(std::uint64_t master, std::size_t n_index, std::size_t level_index, int rep) {
  return derive_seed(derive_seed(derive_seed(master, n_index), level_index),
                     static_cast<std::uint64_t>(rep));
}

RiskTable run_risk_sweep(const ExperimentConfig& config) {
  config.validate();
  const EigenKernel kernel = EigenKernel::from_json(config.kernel);
  std::vector<ShiftPair> pairs;
  for (const double level : config.shift_levels) pairs.push_back(pair_for_level(config, level));
  const Eigen::Index dim = pairs.front().dimension();
  const EigenExpansion fstar = make_target(config.fstar, kernel, dim, config.hnorm);
  const auto fstar_eval = fstar.evaluator();
  const double sigma = std::sqrt(config.sigma_sq);
  const double radius = config.radius.value_or(config.hnorm);

  const std::size_t n_count = config.n_list.size();
  const std::size_t level_count = pairs.size();
  const auto reps = static_cast<std::size_t>(config.reps);
  RiskTable table;
  table.rows.resize(n_count * level_count * reps);

  parallel_for(table.rows.size(), config.threads, [&](std::size_t idx) {
    const std::size_t rep = idx % reps;
    const std::size_t li = (idx / reps) % level_count;
    const std::size_t ni = idx / (reps * level_count);
    const ShiftPair& pair = pairs[li];
    const auto n = config.n_list[ni];
    RiskRow row;
    row.rep = static_cast<int>(rep);
    row.n = n;
    row.level = config.shift_levels[li];
    row.estimator = config.estimator;
    row.seed = row_seed(config.seed, ni, li, row.rep);
    try {
      row.lambda = config.estimator == "erm" ? 0.0 : lambda_for(config, kernel, pair, static_cast<double>(n));
      const Dataset data = sample_dataset(pair, fstar_eval, sigma, n, row.seed);
      std::optional<FittedModel> model;
      if (config.estimator == "krr") {
        model = fit_krr(data, kernel, row.lambda);
      } else if (config.estimator == "reweighted") {
        if (!pair.declared_v_sq()) throw ConfigError("reweighting needs a declared V^2");
        const double tau = config.truncation_scale *
                           default_truncation(static_cast<double>(n), *pair.declared_v_sq());
        model = fit_reweighted_krr(data.with_weights(truncated_weights(pair, data.xs, tau)), kernel,
                                   row.lambda);
      } else {
        model = fit_constrained_erm(data, kernel, radius);
        row.lambda = model->lambda();
      }
      const bool exact = config.risk_mode == RiskMode::kExact ||
                         (config.risk_mode == RiskMode::kAuto && exact_risk_available(kernel, pair));
      row.risk = exact ? l2q_error_exact(*model, fstar.theta())
                       : l2q_error_mc(*model, fstar_eval, pair, config.n_mc, derive_seed(row.seed, 1)).value;
      row.hnorm_sq = model->hilbert_norm_sq();
    } catch (const std::exception& e) {
      row.risk = std::numeric_limits<double>::quiet_NaN();
      row.hnorm_sq = std::numeric_limits<double>::quiet_NaN();
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      row.status = "error: " + msg;
    }
    table.rows[idx] = std::move(row);
  });
  return table;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

RateSlope fit_rate_slope(std::span<const double> ns, std::span<const double> medians) {
  if (ns.size() != medians.size()) throw ConfigError("n and median lists differ in length");
  const std::set<double> distinct(ns.begin(), ns.end());
  if (distinct.size() < 3) throw ConfigError("insufficient n grid");
  const auto m = static_cast<double>(ns.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (!(ns[i] > 0.0) || !(medians[i] > 0.0)) throw NumericalError("rate fit needs positive n and risks");
    mx += std::log(ns[i]);
    my += std::log(medians[i]);
  }
  mx /= m;
  my /= m;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const double dx = std::log(ns[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(medians[i]) - my);
  }
  if (!(sxx > 0.0)) throw ConfigError("insufficient n grid");
  RateSlope out;
  out.slope = sxy / sxx;
  out.intercept = my - out.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const double r = std::log(medians[i]) - (out.intercept + out.slope * std::log(ns[i]));
    ssr += r * r;
  }
  out.std_error = std::sqrt(ssr / (m - 2.0) / sxx);
  out.medians.assign(medians.begin(), medians.end());
  for (const double n : ns) out.ns.push_back(static_cast<std::int64_t>(std::llround(n)));
  return out;
}

std::vector<RateSlope> fit_rate_slopes(const RiskTable& table) {
  // (estimator, level) -> n -> risks, in first-seen order of groups.
  std::vector<std::pair<std::string, double>> order;
  std::map<std::pair<std::string, double>, std::map<std::int64_t, std::vector<double>>> groups;
  for (const auto& r : table.rows) {
    if (r.status != "ok") continue;
    const auto key = std::make_pair(r.estimator, r.level);
    if (!groups.count(key)) order.push_back(key);
    groups[key][r.n].push_back(r.risk);
  }
  std::vector<RateSlope> out;
  for (const auto& key : order) {
    std::vector<double> ns;
    std::vector<double> meds;
    for (const auto& [n, risks] : groups[key]) {
      ns.push_back(static_cast<double>(n));
      meds.push_back(median(risks));
    }
    RateSlope s = fit_rate_slope(ns, meds);
    s.estimator = key.first;
    s.level = key.second;
    out.push_back(std::move(s));
  }
  return out;
}

void write_rate_slopes_csv(std::ostream& out, const std::vector<RateSlope>& slopes) {
  out << "estimator,B_or_V2,n,median_risk,slope,stderr\n";
  for (const auto& s : slopes) {
    for (std::size_t i = 0; i < s.ns.size(); ++i) {
      out << s.estimator << ',' << format_double(s.level) << ',' << s.ns[i] << ','
          << format_double(s.medians[i]) << ',' << format_double(s.slope) << ','
          << format_double(s.std_error) << '\n';
    }
  }
}

nlohmann::json rate_slopes_json(const std::vector<RateSlope>& slopes) {
  auto arr = nlohmann::json::array();
  for (const auto& s : slopes) {
    arr.push_back({{"estimator", s.estimator},
                   {"B_or_V2", s.level},
                   {"slope", s.slope},
                   {"stderr", s.std_error},
                   {"intercept", s.intercept},
                   {"n", s.ns},
                   {"median_risk", s.medians}});
  }
  return {{"slopes", std::move(arr)}};
}

// ---------------------------------------------------------------------------

std::vector<Figure1Row> figure1(const Figure1Config& config) {
  const auto eigs = EigenSequence::poly_decay(1.0);
  const auto grid = log_grid(config.lambda_min, config.lambda_max, config.points);
  std::vector<Figure1Row> rows;
  rows.reserve(grid.size() * config.b_values.size());
  for (const double b : config.b_values) {
    const auto star = lambda_star(eigs, b, config.n, config.sigma_sq, config.hnorm_sq, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto r = krr_bound(eigs, grid[i], b, config.n, config.sigma_sq, config.hnorm_sq);
      rows.push_back({b, grid[i], r.bias_sq, r.variance, r.total, i == star.index});
    }
  }
  return rows;
}

void write_figure1_csv(std::ostream& out, const std::vector<Figure1Row>& rows) {
  out << "B,lambda,bias_sq,variance,total,is_argmin\n";
  for (const auto& r : rows) {
    out << format_double(r.b) << ',' << format_double(r.lambda) << ',' << format_double(r.bias_sq)
        << ',' << format_double(r.variance) << ',' << format_double(r.total) << ','
        << (r.is_argmin ? 1 : 0) << '\n';
  }
}

std::vector<Figure2Cell> figure2(const Figure2Config& config) {
  if (config.n_list.empty() || config.b_values.empty()) throw ConfigError("figure2 grids must be nonempty");
  std::vector<Figure2Cell> cells;
  std::size_t cell_index = 0;
  for (const auto n : config.n_list) {
    for (const double b : config.b_values) {
      const auto dim = std::min<Eigen::Index>(config.dim_cap, n);
      const auto records = simulate_failure(n, b, config.sigma_sq, dim, config.reps,
                                            derive_seed(config.seed, cell_index++), config.threads);
      std::vector<double> norms;
      for (const auto& r : records) norms.push_back(r.krr_hnorm_sq);
      cells.push_back({n, b, median(norms), config.reps});
    }
  }
  return cells;
}

void write_figure2_csv(std::ostream& out, const std::vector<Figure2Cell>& cells) {
  out << "n,B,median_hnorm_sq,reps\n";
  for (const auto& c : cells) {
    out << c.n << ',' << format_double(c.b) << ',' << format_double(c.median_hnorm_sq) << ','
        << c.reps << '\n';
  }
}

void write_failure_csv(std::ostream& out, const std::vector<FailureRecord>& records) {
  out << "rep,n,B,erm_risk,krr_risk,krr_hnorm_sq,theta1_erm\n";
  for (const auto& r : records) {
    out << r.rep << ',' << r.n << ',' << format_double(r.b) << ',' << format_double(r.erm_risk)
        << ',' << format_double(r.krr_risk) << ',' << format_double(r.krr_hnorm_sq) << ','
        << format_double(r.theta1_erm) << '\n';
  }
}

}  // namespace shiftkrr
