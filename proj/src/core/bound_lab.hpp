#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sensing.hpp"

namespace trust {

struct BoundTrial {
  double deviation = 0.0;            // |(Ax)^T(Ax') - x^T x'|
  double deviation_polarized = 0.0;  // same quantity via the polarization expansion
  double delta_bound = 0.0;
};

/// |(Ax)^T (Ax') - x^T x'| for unit-norm x, x'. Throws ContractError when
/// either input is not normalized.
double inner_product_deviation(const SensingOperator& a, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& xp);

/// The same deviation computed as
/// |(||A(x+x')||^2 - ||A(x-x')||^2) - (||x+x'||^2 - ||x-x'||^2)| / 4.
double polarized_deviation(const SensingOperator& a, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& xp);

struct PolarizationCheck {
  double residual_operator = 0.0;  // ||A(x+x')||^2 - ||A(x-x')||^2 - 4 (Ax)^T(Ax')
  double residual_identity = 0.0;  // ||x+x'||^2 - ||x-x'||^2 - 4 x^T x'
  double lhs_operator = 0.0;       // ||A(x+x')||^2 - ||A(x-x')||^2
  bool holds = false;
};

PolarizationCheck check_polarization(const SensingOperator& a, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& xp, double tolerance = 1e-10);
bool verify_polarization(const SensingOperator& a, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& xp, double tolerance = 1e-10);

struct GridPoint {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
};

/// Parses "MxNxK[,MxNxK...]". Throws ParameterError on malformed input.
std::vector<GridPoint> parse_grid(const std::string& text);

struct SweepConfig {
  std::vector<OperatorKind> kinds{OperatorKind::Gaussian};
  std::vector<GridPoint> grid;
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  bool column_normalized = false;
  std::size_t enumeration_cap = kDefaultEnumerationCap;
  std::size_t monte_carlo_budget = 20'000;
};

struct SweepCell {
  OperatorKind kind = OperatorKind::Gaussian;
  GridPoint point;
  double mean_dev = 0.0;
  double max_dev = 0.0;
  double delta = 0.0;
  bool delta_exact = false;
  std::size_t trials = 0;
  /// Descriptive only: mean max-abs difference of row-softmaxed 2x2 Grams.
  double softmax_row_dev = 0.0;
  bool violated = false;
};

struct SweepResult {
  std::vector<SweepCell> cells;

  bool any_violation() const;
  /// kind,m,n,k,mean_dev,max_dev,delta,trials,delta_method,softmax_row_dev_nontheorem
  std::string csv() const;
  /// gnuplot-friendly blocks "m n mean_dev max_dev delta", one block per (kind, k).
  std::string gnuplot_matrix() const;
};

/// Slack allowed on deviation <= delta for exact-delta cells.
inline constexpr double kBoundSlack = 1e-9;

SweepResult attention_similarity_sweep(const SweepConfig& config);

}  // namespace trust
