#include "solvers.hpp"

#include <cmath>
#include <limits>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace trust {

namespace {

void require_rhs(const SensingOperator& a, const Eigen::VectorXd& y) {
  if (static_cast<std::size_t>(y.size()) != a.rows()) {
    throw DimensionError("solver: operator has m=" + std::to_string(a.rows()) +
                         ", observation has " + std::to_string(y.size()) + " entries");
  }
}

// Householder QR grown one column at a time. Keeps Q^T y so each refit is a
// back substitution.
class IncrementalQR {
 public:
  IncrementalQR(const Eigen::VectorXd& y) : qty_(y), m_(y.size()) {}

  std::size_t size() const { return vs_.size(); }

  /// Returns false (and leaves the factorization unchanged) if `col` is
  /// numerically dependent on the columns already added.
  bool add(const Eigen::VectorXd& col) {
    const Eigen::Index j = static_cast<Eigen::Index>(vs_.size());
    if (j >= m_) return false;
    Eigen::VectorXd w = col;
    for (Eigen::Index i = 0; i < j; ++i) reflect(i, w);
    const Eigen::Index tail = m_ - j;
    const double norm = w.tail(tail).norm();
    if (norm <= 1e-12 * std::max(col.norm(), std::numeric_limits<double>::min())) {
      return false;
    }
    const double alpha = w[j] > 0.0 ? -norm : norm;
    Eigen::VectorXd v = w.tail(tail);
    v[0] -= alpha;
    const double vv = v.squaredNorm();
    vs_.push_back(std::move(v));
    betas_.push_back(vv > 0.0 ? 2.0 / vv : 0.0);
    Eigen::VectorXd rcol(j + 1);
    rcol.head(j) = w.head(j);
    rcol[j] = alpha;
    rcols_.push_back(std::move(rcol));
    reflect(j, qty_);
    return true;
  }

  Eigen::VectorXd solve() const {
    const Eigen::Index k = static_cast<Eigen::Index>(vs_.size());
    Eigen::VectorXd z(k);
    for (Eigen::Index i = k - 1; i >= 0; --i) {
      double s = qty_[i];
      for (Eigen::Index c = i + 1; c < k; ++c) s -= rcols_[static_cast<std::size_t>(c)][i] * z[c];
      z[i] = s / rcols_[static_cast<std::size_t>(i)][i];
    }
    return z;
  }

 private:
  void reflect(Eigen::Index i, Eigen::VectorXd& w) const {
    const auto& v = vs_[static_cast<std::size_t>(i)];
    auto seg = w.tail(m_ - i);
    seg -= betas_[static_cast<std::size_t>(i)] * v.dot(seg) * v;
  }

  Eigen::VectorXd qty_;
  Eigen::Index m_;
  std::vector<Eigen::VectorXd> vs_;
  std::vector<double> betas_;
  std::vector<Eigen::VectorXd> rcols_;
};

Eigen::MatrixXd columns_of(const Eigen::MatrixXd& a, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd sub(a.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) sub.col(static_cast<Eigen::Index>(i)) = a.col(static_cast<Eigen::Index>(idx[i]));
  return sub;
}

double resolve_lambda(const Eigen::MatrixXd& a, const Eigen::VectorXd& y, const SolverConfig& config) {
  const double lambda = config.lambda ? *config.lambda : 0.05 * (a.transpose() * y).cwiseAbs().maxCoeff();
  if (!(lambda >= 0.0)) {
    throw ParameterError("lambda must be >= 0, got " + std::to_string(lambda));
  }
  return lambda;
}

double resolve_step(const Eigen::MatrixXd& a, const SolverConfig& config, double& lipschitz) {
  if (config.step_rule == StepRule::Fixed) {
    if (!(config.fixed_step > 0.0)) {
      throw ParameterError("fixed step must be > 0");
    }
    lipschitz = 1.0 / config.fixed_step;
    return config.fixed_step;
  }
  lipschitz = lipschitz_constant(a, 1e-10, 1000, config.seed);
  return lipschitz > 0.0 ? 1.0 / lipschitz : 0.0;
}

template <bool Accelerated>
RecoveryResult proximal_gradient(const SensingOperator& op, const Eigen::VectorXd& y,
                                 const SolverConfig& config) {
  require_rhs(op, y);
  const Eigen::MatrixXd& a = op.matrix();
  RecoveryResult res;
  res.lambda = resolve_lambda(a, y, config);
  const double step = resolve_step(a, config, res.lipschitz);
  const Eigen::Index n = a.cols();
  res.x = Eigen::VectorXd::Zero(n);
  if (step == 0.0) {
    // A = 0: every x has the same data term, the l1 term is minimized at 0
    res.converged = true;
    return res;
  }
  const double thresh = res.lambda * step;
  Eigen::VectorXd x_prev = res.x, z = res.x, grad(n);
  double t = 1.0;
  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    const Eigen::VectorXd& base = Accelerated ? z : res.x;
    grad.noalias() = a.transpose() * (a * base - y);
    x_prev = res.x;
    for (Eigen::Index i = 0; i < n; ++i) res.x[i] = soft_threshold(base[i] - step * grad[i], thresh);
    if constexpr (Accelerated) {
      const double t_next = (1.0 + std::sqrt(1.0 + 4.0 * t * t)) / 2.0;
      z = res.x + ((t - 1.0) / t_next) * (res.x - x_prev);
      t = t_next;
    }
    const double residual = (a * res.x - y).norm();
    res.residual_norm_history.push_back(residual);
    res.objective_history.push_back(0.5 * residual * residual + res.lambda * res.x.lpNorm<1>());
    res.iterations = it + 1;
    const double change = (res.x - x_prev).norm();
    if (config.change_tolerance > 0.0 &&
        change <= config.change_tolerance * std::max(1.0, x_prev.norm())) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace

double soft_threshold(double v, double t) {
  const double mag = std::abs(v) - t;
  if (mag <= 0.0) return 0.0;
  return v > 0.0 ? mag : -mag;
}

double lipschitz_constant(const Eigen::MatrixXd& a, double tolerance, std::size_t max_iterations,
                          std::uint64_t seed) {
  const Eigen::Index n = a.cols();
  if (n == 0 || a.rows() == 0) return 0.0;
  Rng rng(derive_seed(seed, streams::kTrial, 0x4c));
  auto random_unit = [&] {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
    return Eigen::VectorXd(v / v.norm());
  };
  Eigen::VectorXd v = random_unit();
  double lambda = 0.0;
  std::size_t restarts = 0;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    Eigen::VectorXd w = a.transpose() * (a * v);
    const double next = w.norm();
    if (next == 0.0) {
      if (a.squaredNorm() == 0.0 || ++restarts > 5) return 0.0;
      v = random_unit();
      continue;
    }
    v = w / next;
    if (std::abs(next - lambda) <= tolerance * next) {
      return next;
    }
    lambda = next;
  }
  return lambda;
}

double l1_objective(const Eigen::MatrixXd& a, const Eigen::VectorXd& y, const Eigen::VectorXd& x,
                    double lambda) {
  return 0.5 * (a * x - y).squaredNorm() + lambda * x.lpNorm<1>();
}

RecoveryResult omp(const SensingOperator& op, const Eigen::VectorXd& y, const SolverConfig& config) {
  require_rhs(op, y);
  const Eigen::MatrixXd& a = op.matrix();
  const std::size_t m = op.rows(), n = op.cols();
  const std::size_t budget = config.sparsity == 0 ? std::min(m, n) : config.sparsity;
  RecoveryResult res;
  res.x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd norms = a.colwise().norm().transpose();
  std::vector<bool> chosen(n, false);
  Eigen::VectorXd r = y;
  double rnorm = r.norm();
  if (rnorm <= config.residual_tolerance) {
    res.converged = true;
    return res;
  }
  IncrementalQR qr(y);
  Eigen::VectorXd coef;
  while (res.support.size() < budget) {
    const Eigen::VectorXd corr = a.transpose() * r;
    std::size_t best = n;
    double best_score = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (chosen[j] || norms[static_cast<Eigen::Index>(j)] == 0.0) continue;
      const double score = std::abs(corr[static_cast<Eigen::Index>(j)]) / norms[static_cast<Eigen::Index>(j)];
      if (score > best_score) {
        best_score = score;
        best = j;
      }
    }
    if (best == n) break;  // residual orthogonal to every remaining atom
    chosen[best] = true;
    res.support.push_back(best);
    if (!res.rank_deficient && !qr.add(a.col(static_cast<Eigen::Index>(best)))) {
      res.rank_deficient = true;
    }
    if (res.rank_deficient) {
      const Eigen::MatrixXd sub = columns_of(a, res.support);
      coef = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(sub).solve(y);
      r = y - sub * coef;
    } else {
      coef = qr.solve();
      r = y - columns_of(a, res.support) * coef;
    }
    rnorm = r.norm();
    res.residual_norm_history.push_back(rnorm);
    res.iterations = res.support.size();
    if (rnorm <= config.residual_tolerance) {
      res.converged = true;
      break;
    }
  }
  for (std::size_t i = 0; i < res.support.size(); ++i) {
    res.x[static_cast<Eigen::Index>(res.support[i])] = coef[static_cast<Eigen::Index>(i)];
  }
  return res;
}

RecoveryResult ista(const SensingOperator& a, const Eigen::VectorXd& y, const SolverConfig& config) {
  return proximal_gradient<false>(a, y, config);
}

RecoveryResult fista(const SensingOperator& a, const Eigen::VectorXd& y, const SolverConfig& config) {
  return proximal_gradient<true>(a, y, config);
}

std::string RecoveryResult::to_json() const {
  nlohmann::json j;
  j["support"] = support;
  j["iterations"] = iterations;
  j["converged"] = converged;
  j["final_residual"] = final_residual();
  j["rank_deficient"] = rank_deficient;
  j["lambda"] = lambda;
  return j.dump();
}

SensingOperator estimate_operator(const std::vector<SignalPair>& pairs, std::optional<double> ridge) {
  if (pairs.empty()) {
    throw ParameterError("estimate_operator needs at least one (x, y) pair");
  }
  const Eigen::Index n = pairs.front().first.size();
  const Eigen::Index m = pairs.front().second.size();
  if (n == 0 || m == 0) {
    throw DimensionError("estimate_operator: empty signals");
  }
  const Eigen::Index count = static_cast<Eigen::Index>(pairs.size());
  Eigen::MatrixXd xt(count, n), yt(count, m);
  for (Eigen::Index i = 0; i < count; ++i) {
    const auto& [x, y] = pairs[static_cast<std::size_t>(i)];
    if (x.size() != n || y.size() != m) {
      throw DimensionError("estimate_operator: pair " + std::to_string(i) + " has shape (" +
                           std::to_string(x.size()) + ", " + std::to_string(y.size()) +
                           "), expected (" + std::to_string(n) + ", " + std::to_string(m) + ")");
    }
    xt.row(i) = x.transpose();
    yt.row(i) = y.transpose();
  }
  const double r = ridge ? *ridge : 1e-6 * xt.squaredNorm() / static_cast<double>(n);
  if (!(r >= 0.0)) {
    throw ParameterError("ridge must be >= 0");
  }
  // Normal equations (X X^T + r I) A^T = X Y^T, solved as the stacked least
  // squares problem [X^T; sqrt(r) I] A^T = [Y^T; 0] with Householder QR.
  Eigen::MatrixXd lhs(count + (r > 0.0 ? n : 0), n);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(lhs.rows(), m);
  lhs.topRows(count) = xt;
  rhs.topRows(count) = yt;
  if (r > 0.0) {
    lhs.bottomRows(n) = std::sqrt(r) * Eigen::MatrixXd::Identity(n, n);
  } else {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> rank_check(xt);
    if (rank_check.rank() < n) {
      throw SingularError("X X^T is singular (rank " + std::to_string(rank_check.rank()) + " < n=" +
                          std::to_string(n) + "); supply more pairs or a positive ridge");
    }
  }
  const Eigen::MatrixXd at = lhs.householderQr().solve(rhs);
  return SensingOperator::from_dense(at.transpose());
}

}  // namespace trust
