#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "shiftkrr/estimators.hpp"
#include "shiftkrr/hard_instance.hpp"
#include "shiftkrr/kernel_spectrum.hpp"
#include "shiftkrr/shift_models.hpp"
#include "shiftkrr/theory_bounds.hpp"

namespace shiftkrr {

struct LambdaRule {
  enum class Kind { kFixed, kFiniteRank, kPoly, kReweighted } kind = Kind::kFiniteRank;
  double value = 0.0;  // fixed lambda
  double c = 1.0;      // multiplier on the rule
};

/// Coefficients of f* in the kernel's eigenbasis, rescaled to ||f*||_H = hnorm.
struct TargetSpec {
  enum class Kind { kPowerLaw, kCoordinate, kCoefficients } kind = Kind::kPowerLaw;
  double exponent = 1.5;   // power law: theta_j ~ j^-exponent
  int first_index = 1;     // power law starts here; coordinate index otherwise
  std::vector<double> coefficients;
};

enum class RiskMode { kAuto, kExact, kMonteCarlo };

/// One Monte Carlo sweep over (n, shift level, rep).
///
/// Shift levels are B for the hypercube family and V^2 for the Gaussian scale
/// family (converted to tau^2 through the closed-form moment).
struct ExperimentConfig {
  nlohmann::json pair = {{"family", "hypercube"}, {"D", 64}, {"B", 1.0}};
  nlohmann::json kernel = {{"kind", "poly"}, {"alpha", 1.0}, {"c", 1.0}, {"j_max", 64}};
  std::string estimator = "krr";  // krr | reweighted | erm
  LambdaRule lambda_rule;
  std::vector<std::int64_t> n_list{500, 1000, 2000};
  std::vector<double> shift_levels{1.0};
  double sigma_sq = 1.0;
  double hnorm = 1.0;
  TargetSpec fstar;
  std::optional<double> radius;  // erm radius; defaults to hnorm
  double truncation_scale = 1.0;  // tau = scale * sqrt(n V^2)
  int reps = 10;
  std::int64_t n_mc = 100000;
  RiskMode risk_mode = RiskMode::kAuto;
  std::uint64_t seed = 20240607;
  unsigned threads = 1;
  std::optional<std::string> out;  // default output path for the CLI

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

// The pair for one shift level of the config.
ShiftPair pair_for_level(const ExperimentConfig& config, double level);

// f* as an eigen-expansion over `kernel` on covariates of dimension `dim`.
EigenExpansion make_target(const TargetSpec& spec, const EigenKernel& kernel, Eigen::Index dim,
                           double hnorm);

double lambda_for(const ExperimentConfig& config, const EigenKernel& kernel, const ShiftPair& pair,
                  double n);

struct RiskRow {
  int rep = 0;
  std::int64_t n = 0;
  double level = 0.0;
  std::string estimator;
  double lambda = 0.0;
  double risk = 0.0;
  double hnorm_sq = 0.0;
  std::uint64_t seed = 0;
  std::string status = "ok";
};

struct RiskTable {
  std::vector<RiskRow> rows;

  void write_csv(std::ostream& out) const;
  nlohmann::json to_json() const;
};

// Seed of the row at grid position (n_index, level_index, rep).
std::uint64_t row_seed(std::uint64_t master, std::size_t n_index, std::size_t level_index, int rep);

// Rows ordered by (n index, level index, rep) regardless of thread count.
RiskTable run_risk_sweep(const ExperimentConfig& config);

double median(std::vector<double> values);

struct RateSlope {
  std::string estimator;
  double level = 0.0;
  double slope = 0.0;
  double std_error = 0.0;
  double intercept = 0.0;
  std::vector<std::int64_t> ns;
  std::vector<double> medians;
};

// OLS of log(median) on log(n). Throws ConfigError("insufficient n grid")
// with fewer than three distinct n.
RateSlope fit_rate_slope(std::span<const double> ns, std::span<const double> medians);

// One slope per (estimator, level) group, from rows with status "ok".
std::vector<RateSlope> fit_rate_slopes(const RiskTable& table);

void write_rate_slopes_csv(std::ostream& out, const std::vector<RateSlope>& slopes);
nlohmann::json rate_slopes_json(const std::vector<RateSlope>& slopes);

struct Figure1Row {
  double b = 1.0;
  double lambda = 0.0;
  double bias_sq = 0.0;
  double variance = 0.0;
  double total = 0.0;
  bool is_argmin = false;
};

struct Figure1Config {
  std::vector<double> b_values{1.0, 5.0, 10.0, 15.0};
  double n = 8000.0;
  double sigma_sq = 1.0;
  double hnorm_sq = 1.0;
  double lambda_min = 1e-6;
  double lambda_max = 10.0;
  int points = 400;
};

std::vector<Figure1Row> figure1(const Figure1Config& config = {});
void write_figure1_csv(std::ostream& out, const std::vector<Figure1Row>& rows);

struct Figure2Cell {
  std::int64_t n = 0;
  double b = 1.0;
  double median_hnorm_sq = 0.0;
  int reps = 0;
};

struct Figure2Config {
  std::vector<std::int64_t> n_list{2000, 8000, 16000};
  std::vector<double> b_values{1.0, 4.0, 16.0, 64.0, 128.0};
  int reps = 10;
  double sigma_sq = 1.0;
  Eigen::Index dim_cap = kDefaultFailureDim;
  std::uint64_t seed = 20240607;
  unsigned threads = 1;
};

std::vector<Figure2Cell> figure2(const Figure2Config& config);
void write_figure2_csv(std::ostream& out, const std::vector<Figure2Cell>& cells);

void write_failure_csv(std::ostream& out, const std::vector<FailureRecord>& records);

}  // namespace shiftkrr
