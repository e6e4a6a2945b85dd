#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sensing.hpp"

namespace trust {

enum class StepRule { PowerIterationLipschitz, Fixed };

struct SolverConfig {
  std::size_t max_iterations = 1000;
  /// OMP stops once ||Ax - y|| <= residual_tolerance.
  double residual_tolerance = 1e-6;
  /// OMP atom budget k; 0 means min(m, n).
  std::size_t sparsity = 0;
  /// l1 weight for ISTA/FISTA; unset means 0.05 * ||A^T y||_inf.
  std::optional<double> lambda;
  StepRule step_rule = StepRule::PowerIterationLipschitz;
  double fixed_step = 0.0;
  /// ISTA/FISTA stop when ||x_{j+1} - x_j|| <= change_tolerance * max(1, ||x_j||); 0 disables.
  double change_tolerance = 1e-10;
  std::uint64_t seed = 0;
};

struct RecoveryResult {
  Eigen::VectorXd x;
  std::vector<std::size_t> support;  // OMP: atoms in selection order
  std::vector<double> residual_norm_history;
  std::vector<double> objective_history;  // ISTA/FISTA: F(x_j) per iteration
  std::size_t iterations = 0;
  bool converged = false;
  bool rank_deficient = false;
  double lambda = 0.0;
  double lipschitz = 0.0;

  double final_residual() const {
    return residual_norm_history.empty() ? 0.0 : residual_norm_history.back();
  }
  /// {"support", "iterations", "converged", "final_residual", ...}
  std::string to_json() const;
};

double soft_threshold(double v, double t);

/// Largest eigenvalue of A^T A by power iteration (restarts from a perturbed
/// vector if the iterate collapses).
double lipschitz_constant(const Eigen::MatrixXd& a, double tolerance = 1e-10,
                          std::size_t max_iterations = 1000, std::uint64_t seed = 0);

RecoveryResult omp(const SensingOperator& a, const Eigen::VectorXd& y, const SolverConfig& config);
RecoveryResult ista(const SensingOperator& a, const Eigen::VectorXd& y, const SolverConfig& config);
RecoveryResult fista(const SensingOperator& a, const Eigen::VectorXd& y, const SolverConfig& config);

/// F(x) = 0.5 ||Ax - y||^2 + lambda ||x||_1.
double l1_objective(const Eigen::MatrixXd& a, const Eigen::VectorXd& y, const Eigen::VectorXd& x,
                    double lambda);

using SignalPair = std::pair<Eigen::VectorXd, Eigen::VectorXd>;  // (x, y)

/// argmin_A sum ||A x_i - y_i||^2 + ridge ||A||_F^2. Unset ridge defaults to
/// 1e-6 * trace(X X^T) / n. ridge = 0 with rank-deficient X raises SingularError.
SensingOperator estimate_operator(const std::vector<SignalPair>& pairs,
                                  std::optional<double> ridge = std::nullopt);

}  // namespace trust
