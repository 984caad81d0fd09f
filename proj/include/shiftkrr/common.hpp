#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace shiftkrr {

// One covariate per row; row-major so each row is a contiguous span.
using Covariates = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::span<const double> row_span(const Covariates& xs, Eigen::Index i) {
  return {xs.row(i).data(), static_cast<std::size_t>(xs.cols())};
}

// Invalid user input or configuration (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A solver could not produce an answer (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// `points` log-spaced values from lo to hi inclusive.
std::vector<double> log_grid(double lo, double hi, int points);

// Index of the smallest value; ties go to the lowest index.
std::size_t argmin_first(std::span<const double> values);

// Calls fn(i) for i in [0, count) on up to `threads` workers (0 means the
// hardware concurrency). Rethrows the first exception after all workers join.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn);

// 64-bit avalanche mixer (splitmix64 finalizer).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for stream `index` under `master`. Distinct indices give
// statistically independent streams; the mapping is stable across runs.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(mix64(master) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

}  // namespace shiftkrr
