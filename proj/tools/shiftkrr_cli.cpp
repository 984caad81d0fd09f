// Command-line front end for the shiftkrr library.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "shiftkrr/csv.hpp"
#include "shiftkrr/experiments.hpp"

namespace {

using namespace shiftkrr;
using nlohmann::json;

constexpr std::uint64_t kDefaultSeed = 20240607;

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_path;
  std::string format = "csv";
  unsigned threads = 1;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
  json config = json::object();
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

// --seed, then SHIFTKRR_SEED, then the config's "seed", then the default.
std::uint64_t resolve_seed(const Globals& g) {
  if (g.seed_opt->count() > 0) return g.seed;
  if (const char* env = std::getenv("SHIFTKRR_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing text");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("SHIFTKRR_SEED is not an unsigned integer: ") + env);
    }
  }
  if (g.config.contains("seed")) return g.config.at("seed").get<std::uint64_t>();
  return kDefaultSeed;
}

unsigned resolve_threads(const Globals& g) {
  if (g.threads_opt->count() > 0) return g.threads;
  return g.config.value("threads", 1U);
}

// Flag value when given, else the config key, else the fallback.
template <class T>
T pick(const CLI::Option* opt, const T& flag, const Globals& g, const std::string& key,
       const T& fallback) {
  if (opt && opt->count() > 0) return flag;
  if (g.config.contains(key)) {
    try {
      return g.config.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  return fallback;
}

void emit(const Globals& g, const std::string& text) {
  std::string path = g.out_path;
  if (path.empty()) path = g.config.value("out", std::string());
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

bool want_json(const Globals& g) {
  if (g.format != "csv" && g.format != "json") throw ConfigError("--format must be csv or json");
  return g.format == "json";
}

// Sequence from --kernel (a kernel or bare sequence JSON file), the config's
// "eigs" key, or mu_j = j^-2.
EigenSequence load_sequence(const std::string& kernel_path, const Globals& g) {
  json j;
  if (!kernel_path.empty()) j = read_json_file(kernel_path);
  else if (g.config.contains("eigs")) j = g.config.at("eigs");
  else return EigenSequence::poly_decay(1.0);
  return j.contains("eigs") ? EigenSequence::from_json(j.at("eigs")) : EigenSequence::from_json(j);
}

struct CurveArgs {
  double b = 1.0, n = 8000.0, sigma_sq = 1.0, hnorm_sq = 1.0;
  double lambda_min = 1e-6, lambda_max = 10.0;
  int points = 400;
  std::string kernel;
  CLI::Option *b_opt{}, *n_opt{}, *s_opt{}, *h_opt{}, *lo_opt{}, *hi_opt{}, *p_opt{};

  void attach(CLI::App* cmd) {
    b_opt = cmd->add_option("--B", b, "likelihood ratio bound B");
    n_opt = cmd->add_option("--n", n, "sample size");
    s_opt = cmd->add_option("--sigma-sq", sigma_sq, "noise variance");
    h_opt = cmd->add_option("--hnorm-sq", hnorm_sq, "squared Hilbert norm of f*");
    lo_opt = cmd->add_option("--lambda-min", lambda_min, "smallest lambda on the grid");
    hi_opt = cmd->add_option("--lambda-max", lambda_max, "largest lambda on the grid");
    p_opt = cmd->add_option("--points", points, "number of log-spaced grid points");
    cmd->add_option("--kernel", kernel, "kernel or eigenvalue-sequence JSON file");
  }
  void resolve(const Globals& g) {
    b = pick(b_opt, b, g, "B", 1.0);
    n = pick(n_opt, n, g, "n", 8000.0);
    sigma_sq = pick(s_opt, sigma_sq, g, "sigma_sq", 1.0);
    hnorm_sq = pick(h_opt, hnorm_sq, g, "hnorm_sq", 1.0);
    lambda_min = pick(lo_opt, lambda_min, g, "lambda_min", 1e-6);
    lambda_max = pick(hi_opt, lambda_max, g, "lambda_max", 10.0);
    points = pick(p_opt, points, g, "points", 400);
  }
};

// ---- subcommands ----

void run_fit(const Globals& g, const std::string& data_path, const std::string& kernel_path,
             const std::string& estimator, double lambda, double radius, const std::string& mode) {
  std::ifstream in(data_path);
  if (!in) throw ConfigError("cannot open '" + data_path + "'");
  const Dataset data = read_dataset_csv(in);
  const EigenKernel kernel = EigenKernel::from_json(read_json_file(kernel_path));
  SolveMode solve = SolveMode::kAuto;
  if (mode == "dual") solve = SolveMode::kDual;
  else if (mode == "primal") solve = SolveMode::kPrimal;
  else if (mode != "auto") throw ConfigError("--mode must be auto, dual or primal");
  std::optional<FittedModel> model;
  if (estimator == "krr") model = fit_krr(data, kernel, lambda, solve);
  else if (estimator == "reweighted") model = fit_reweighted_krr(data, kernel, lambda, solve);
  else if (estimator == "erm") model = fit_constrained_erm(data, kernel, radius, solve);
  else throw ConfigError("--estimator must be krr, reweighted or erm");
  if (!want_json(g)) {
    std::ostringstream os;
    os << "index,coefficient\n";
    const auto& c = model->coefficients();
    for (Eigen::Index i = 0; i < c.size(); ++i) os << i << ',' << format_double(c(i)) << '\n';
    emit(g, os.str());
    return;
  }
  emit(g, model->to_json().dump(2) + "\n");
}

void run_bound_curve(const Globals& g, CurveArgs a) {
  a.resolve(g);
  const auto eigs = load_sequence(a.kernel, g);
  const auto grid = log_grid(a.lambda_min, a.lambda_max, a.points);
  if (want_json(g)) {
    json arr = json::array();
    for (const double lam : grid) arr.push_back(krr_bound(eigs, lam, a.b, a.n, a.sigma_sq, a.hnorm_sq).to_json());
    emit(g, arr.dump(2) + "\n");
    return;
  }
  std::ostringstream os;
  os << "lambda,bias_sq,variance,total,B,n,sigma_sq\n";
  for (const double lam : grid) {
    const auto r = krr_bound(eigs, lam, a.b, a.n, a.sigma_sq, a.hnorm_sq);
    os << format_double(lam) << ',' << format_double(r.bias_sq) << ',' << format_double(r.variance)
       << ',' << format_double(r.total) << ',' << format_double(a.b) << ',' << format_double(a.n)
       << ',' << format_double(a.sigma_sq) << '\n';
  }
  emit(g, os.str());
}

void run_lambda_star(const Globals& g, CurveArgs a) {
  a.resolve(g);
  const auto eigs = load_sequence(a.kernel, g);
  const auto grid = log_grid(a.lambda_min, a.lambda_max, a.points);
  const auto star = lambda_star(eigs, a.b, a.n, a.sigma_sq, a.hnorm_sq, grid);
  if (want_json(g)) {
    emit(g, json{{"lambda_star", star.lambda}, {"total", star.report.total}, {"B", a.b}}.dump(2) + "\n");
    return;
  }
  emit(g, "lambda_star,total,B\n" + format_double(star.lambda) + ',' +
              format_double(star.report.total) + ',' + format_double(a.b) + '\n');
}

void emit_record(const Globals& g, const json& record) {
  if (want_json(g)) {
    emit(g, record.dump(2) + "\n");
    return;
  }
  std::string header;
  std::string values;
  for (const auto& item : record.items()) {
    if (!header.empty()) {
      header += ',';
      values += ',';
    }
    header += item.key();
    const auto& v = item.value();
    if (v.is_number_float()) values += format_double(v.get<double>());
    else if (v.is_string()) values += v.get<std::string>();
    else values += v.dump();
  }
  emit(g, header + '\n' + values + '\n');
}

void run_lower_bound(const Globals& g, CurveArgs a, double c, const CLI::Option* c_opt,
                     std::string convention) {
  a.resolve(g);
  a.n = pick<double>(a.n_opt, a.n, g, "n", 1000.0);
  // Grid bounds reuse the lambda flags as delta bounds.
  const double lo = pick<double>(a.lo_opt, a.lambda_min, g, "delta_min", 1e-4);
  const double hi = pick<double>(a.hi_opt, a.lambda_max, g, "delta_max", 10.0);
  c = pick(c_opt, c, g, "c", 1.0);
  convention = g.config.value("convention", convention);
  DimConvention conv = DimConvention::kLiteral;
  if (convention == "capped") conv = DimConvention::kCapped;
  else if (convention != "literal") throw ConfigError("--convention must be literal or capped");
  const auto eigs = load_sequence(a.kernel, g);
  const auto grid = log_grid(lo, hi, a.points);
  const auto r = minimax_lower(eigs, a.b, a.n, a.sigma_sq, grid, c, conv);
  emit_record(g, json{{"value", r.value},
                      {"delta", r.delta},
                      {"effective_dim", r.dim},
                      {"B", a.b},
                      {"n", a.n},
                      {"sigma_sq", a.sigma_sq},
                      {"c", c},
                      {"convention", convention}});
}

struct RadiusArgs {
  double sigma_sq = 1.0, v_sq = 1.0, n = 1000.0, hnorm_sq = 1.0, c0 = 1.0;
  bool general_noise = false;
  std::string kernel;
  CLI::Option *s_opt{}, *v_opt{}, *n_opt{}, *h_opt{}, *c_opt{}, *g_opt{};
};

void run_critical_radius(const Globals& g, RadiusArgs a) {
  MFunctionParams p;
  p.sigma_sq = pick(a.s_opt, a.sigma_sq, g, "sigma_sq", 1.0);
  p.v_sq = pick(a.v_opt, a.v_sq, g, "V_sq", 1.0);
  p.n = pick(a.n_opt, a.n, g, "n", 1000.0);
  p.hnorm_sq = pick(a.h_opt, a.hnorm_sq, g, "hnorm_sq", 1.0);
  p.c0 = pick(a.c_opt, a.c0, g, "c0", 1.0);
  p.general_noise = pick(a.g_opt, a.general_noise, g, "general_noise", false);
  const auto eigs = load_sequence(a.kernel, g);
  const auto grid = default_delta_grid();
  const double delta = critical_radius(eigs, p, grid);
  emit_record(g, json{{"delta_n", delta},
                      {"M_at_delta", m_function(eigs, delta, p)},
                      {"sigma_sq", p.sigma_sq},
                      {"V_sq", p.v_sq},
                      {"n", p.n},
                      {"hnorm_sq", p.hnorm_sq},
                      {"c0", p.c0},
                      {"general_noise", p.general_noise}});
}

ExperimentConfig experiment_config(const Globals& g) {
  if (g.config_path.empty()) throw ConfigError("this subcommand needs --config <json>");
  ExperimentConfig c = ExperimentConfig::from_json(g.config);
  c.seed = resolve_seed(g);
  c.threads = resolve_threads(g);
  return c;
}

void run_simulate_risk(const Globals& g) {
  const auto table = run_risk_sweep(experiment_config(g));
  if (want_json(g)) {
    emit(g, table.to_json().dump(2) + "\n");
    return;
  }
  std::ostringstream os;
  table.write_csv(os);
  emit(g, os.str());
}

void run_rates(const Globals& g) {
  const auto slopes = fit_rate_slopes(run_risk_sweep(experiment_config(g)));
  if (want_json(g)) {
    emit(g, rate_slopes_json(slopes).dump(2) + "\n");
    return;
  }
  std::ostringstream os;
  write_rate_slopes_csv(os, slopes);
  emit(g, os.str());
}

struct FailureArgs {
  std::int64_t n = 8000;
  double b = 0.0;
  int reps = 20;
  double sigma_sq = 1.0;
  Eigen::Index dim = 0;
  CLI::Option *n_opt{}, *b_opt{}, *r_opt{}, *s_opt{}, *d_opt{};
};

void run_erm_failure(const Globals& g, FailureArgs a) {
  const auto n = pick(a.n_opt, a.n, g, "n", std::int64_t{8000});
  // cbrt squared keeps perfect cubes exact (pow(8000, 2/3) rounds to 399.99...).
  const double root = std::cbrt(static_cast<double>(n));
  const double b = pick(a.b_opt, a.b, g, "B", std::floor(root * root + 1e-9));
  const int reps = pick(a.r_opt, a.reps, g, "reps", 20);
  const double sigma_sq = pick(a.s_opt, a.sigma_sq, g, "sigma_sq", 1.0);
  const auto dim = pick<Eigen::Index>(a.d_opt, a.dim, g, "D", std::min<Eigen::Index>(n, kDefaultFailureDim));
  const auto records = simulate_failure(n, b, sigma_sq, dim, reps, resolve_seed(g), resolve_threads(g));
  if (want_json(g)) {
    json arr = json::array();
    for (const auto& r : records) {
      arr.push_back({{"rep", r.rep}, {"n", r.n}, {"B", r.b}, {"erm_risk", r.erm_risk},
                     {"krr_risk", r.krr_risk}, {"krr_hnorm_sq", r.krr_hnorm_sq},
                     {"theta1_erm", r.theta1_erm}});
    }
    emit(g, json{{"records", arr}}.dump(2) + "\n");
    return;
  }
  std::ostringstream os;
  write_failure_csv(os, records);
  emit(g, os.str());
}

void run_figure1(const Globals& g) {
  const auto rows = figure1();
  if (want_json(g)) {
    json arr = json::array();
    for (const auto& r : rows) {
      arr.push_back({{"B", r.b}, {"lambda", r.lambda}, {"bias_sq", r.bias_sq},
                     {"variance", r.variance}, {"total", r.total}, {"is_argmin", r.is_argmin}});
    }
    emit(g, json{{"rows", arr}}.dump(2) + "\n");
    return;
  }
  std::ostringstream os;
  write_figure1_csv(os, rows);
  emit(g, os.str());
}

struct Figure2Args {
  std::vector<std::int64_t> n_list;
  std::vector<double> b_list;
  int reps = 10;
  Eigen::Index dim = kDefaultFailureDim;
  CLI::Option *n_opt{}, *b_opt{}, *r_opt{}, *d_opt{};
};

void run_figure2(const Globals& g, Figure2Args a) {
  Figure2Config c;
  c.n_list = pick(a.n_opt, a.n_list, g, "n_list", c.n_list);
  c.b_values = pick(a.b_opt, a.b_list, g, "B_list", c.b_values);
  c.reps = pick(a.r_opt, a.reps, g, "reps", c.reps);
  c.dim_cap = pick(a.d_opt, a.dim, g, "D", c.dim_cap);
  c.seed = resolve_seed(g);
  c.threads = resolve_threads(g);
  const auto cells = figure2(c);
  if (want_json(g)) {
    json arr = json::array();
    for (const auto& cell : cells) {
      arr.push_back({{"n", cell.n}, {"B", cell.b}, {"median_hnorm_sq", cell.median_hnorm_sq},
                     {"reps", cell.reps}});
    }
    emit(g, json{{"cells", arr}}.dump(2) + "\n");
    return;
  }
  std::ostringstream os;
  write_figure2_csv(os, cells);
  emit(g, os.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel ridge regression under covariate shift: estimators, bounds and experiments"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON config file");
  g.seed_opt = app.add_option("--seed", g.seed, "master seed (overrides SHIFTKRR_SEED and config)");
  app.add_option("--out", g.out_path, "output path (default stdout)");
  app.add_option("--format", g.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  g.threads_opt = app.add_option("--threads", g.threads, "worker threads");

  std::string data_path, kernel_path, estimator = "krr", mode = "auto";
  double lambda = 0.0, radius = 1.0;
  auto* fit = app.add_subcommand("fit", "fit an estimator to a dataset CSV and write the model");
  fit->add_option("--data", data_path, "dataset CSV (x_1..x_D,y[,weight])")->required();
  fit->add_option("--kernel", kernel_path, "kernel JSON file")->required();
  fit->add_option("--estimator", estimator, "krr, reweighted or erm");
  fit->add_option("--lambda", lambda, "regularization (krr, reweighted)");
  fit->add_option("--radius", radius, "Hilbert-ball radius (erm)");
  fit->add_option("--mode", mode, "auto, dual or primal");

  CurveArgs curve, star, lower;
  auto* bound_curve = app.add_subcommand("bound-curve", "KRR bound across a lambda grid");
  curve.attach(bound_curve);
  auto* lambda_star_cmd = app.add_subcommand("lambda-star", "grid minimizer of the KRR bound");
  star.attach(lambda_star_cmd);
  auto* lower_cmd = app.add_subcommand("lower-bound", "minimax lower-bound functional");
  lower.attach(lower_cmd);
  double lower_c = 1.0;
  std::string convention = "literal";
  auto* lower_c_opt = lower_cmd->add_option("--c", lower_c, "leading constant");
  lower_cmd->add_option("--convention", convention, "literal or capped effective dimension");

  RadiusArgs rad;
  auto* radius_cmd = app.add_subcommand("critical-radius", "critical radius of the reweighted estimator");
  rad.s_opt = radius_cmd->add_option("--sigma-sq", rad.sigma_sq);
  rad.v_opt = radius_cmd->add_option("--v-sq", rad.v_sq);
  rad.n_opt = radius_cmd->add_option("--n", rad.n);
  rad.h_opt = radius_cmd->add_option("--hnorm-sq", rad.hnorm_sq);
  rad.c_opt = radius_cmd->add_option("--c0", rad.c0);
  rad.g_opt = radius_cmd->add_flag("--general-noise", rad.general_noise);
  radius_cmd->add_option("--kernel", rad.kernel, "kernel or eigenvalue-sequence JSON file");

  auto* sim_cmd = app.add_subcommand("simulate-risk", "Monte Carlo risk sweep (needs --config)");
  auto* rates_cmd = app.add_subcommand("rates", "risk sweep plus log-log rate slopes (needs --config)");

  FailureArgs fail;
  auto* fail_cmd = app.add_subcommand("erm-failure", "constrained ERM vs KRR on the hard instance");
  fail.n_opt = fail_cmd->add_option("--n", fail.n);
  fail.b_opt = fail_cmd->add_option("--B", fail.b, "default floor(n^(2/3))");
  fail.r_opt = fail_cmd->add_option("--reps", fail.reps);
  fail.s_opt = fail_cmd->add_option("--sigma-sq", fail.sigma_sq);
  fail.d_opt = fail_cmd->add_option("--dim", fail.dim, "hypercube dimension, default min(n, 512)");

  auto* fig1_cmd = app.add_subcommand("figure1", "KRR bound curves for B in {1,5,10,15}");

  Figure2Args fig2;
  auto* fig2_cmd = app.add_subcommand("figure2", "median KRR Hilbert norm against B");
  fig2.n_opt = fig2_cmd->add_option("--n-list", fig2.n_list)->delimiter(',');
  fig2.b_opt = fig2_cmd->add_option("--B-list", fig2.b_list)->delimiter(',');
  fig2.r_opt = fig2_cmd->add_option("--reps", fig2.reps);
  fig2.d_opt = fig2_cmd->add_option("--dim", fig2.dim, "dimension cap, default 512");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!g.config_path.empty()) g.config = read_json_file(g.config_path);
    if (!g.config.is_object()) throw ConfigError("--config must hold a JSON object");
    if (*fit) run_fit(g, data_path, kernel_path, estimator, lambda, radius, mode);
    else if (*bound_curve) run_bound_curve(g, curve);
    else if (*lambda_star_cmd) run_lambda_star(g, star);
    else if (*lower_cmd) run_lower_bound(g, lower, lower_c, lower_c_opt, convention);
    else if (*radius_cmd) run_critical_radius(g, rad);
    else if (*sim_cmd) run_simulate_risk(g);
    else if (*rates_cmd) run_rates(g);
    else if (*fail_cmd) run_erm_failure(g, fail);
    else if (*fig1_cmd) run_figure1(g);
    else if (*fig2_cmd) run_figure2(g, fig2);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
