#include <doctest.h>

#include <cmath>

#include "core/error.hpp"
#include "core/solvers.hpp"

using namespace trust;

TEST_CASE("soft threshold") {
  CHECK(soft_threshold(3.0, 1.0) == 2.0);
  CHECK(soft_threshold(-3.0, 1.0) == -2.0);
  CHECK(soft_threshold(0.5, 1.0) == 0.0);
  CHECK(soft_threshold(-1.0, 1.0) == 0.0);
}

TEST_CASE("lipschitz constant equals the top eigenvalue of A^T A") {
  const auto a = SensingOperator::sample(OperatorKind::Gaussian, 20, 40, 3);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.matrix().transpose() * a.matrix());
  CHECK(lipschitz_constant(a.matrix()) == doctest::Approx(es.eigenvalues().maxCoeff()).epsilon(1e-8));
}

TEST_CASE("omp recovers a sparse signal and refits by least squares") {
  const auto a = SensingOperator::sample(OperatorKind::Gaussian, 32, 64, 4);
  const auto s = generate_ksparse(64, 4, 9);
  SolverConfig c;
  c.sparsity = 4;
  const auto r = omp(a, a.apply(s.dense()), c);
  auto support = r.support;
  std::sort(support.begin(), support.end());
  CHECK(support == s.support);
  CHECK((r.x - s.dense()).norm() < 1e-10);
  CHECK(r.converged);
}

TEST_CASE("omp on a noisy problem matches least squares on its selected support") {
  const auto a = SensingOperator::sample(OperatorKind::Gaussian, 24, 48, 5);
  const auto s = generate_ksparse(48, 3, 10);
  const Eigen::VectorXd y = a.apply(s.dense(), 0.05, 1);
  SolverConfig c;
  c.sparsity = 5;
  const auto r = omp(a, y, c);
  Eigen::MatrixXd sub(24, static_cast<Eigen::Index>(r.support.size()));
  for (std::size_t i = 0; i < r.support.size(); ++i) sub.col(Eigen::Index(i)) = a.matrix().col(Eigen::Index(r.support[i]));
  const Eigen::VectorXd ls = sub.colPivHouseholderQr().solve(y);
  for (std::size_t i = 0; i < r.support.size(); ++i) CHECK(std::abs(r.x[Eigen::Index(r.support[i])] - ls[Eigen::Index(i)]) < 1e-8);
  for (std::size_t i = 1; i < r.residual_norm_history.size(); ++i) {
    CHECK(r.residual_norm_history[i] <= r.residual_norm_history[i - 1] + 1e-12);
  }
}

TEST_CASE("omp flags rank deficiency instead of failing") {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(4, 6);
  m(0, 0) = 1.0;
  m(0, 1) = 1.0;  // duplicate atom
  m(1, 2) = 1.0;
  const auto a = SensingOperator::from_dense(m);
  Eigen::VectorXd y(4);
  y << 1.0, 1.0, 0.0, 0.5;
  SolverConfig c;
  c.sparsity = 4;
  const auto r = omp(a, y, c);
  CHECK(r.x.allFinite());
}

TEST_CASE("ista objective never increases and fista reaches a lower objective sooner") {
  const auto a = SensingOperator::sample(OperatorKind::Gaussian, 32, 64, 6);
  const auto s = generate_ksparse(64, 5, 11);
  const Eigen::VectorXd y = a.apply(s.dense(), 0.01, 2);
  SolverConfig c;
  c.max_iterations = 300;
  c.change_tolerance = 0.0;
  const auto ri = ista(a, y, c);
  const auto rf = fista(a, y, c);
  for (std::size_t i = 1; i < ri.objective_history.size(); ++i) {
    CHECK(ri.objective_history[i] <= ri.objective_history[i - 1] + 1e-12);
  }
  CHECK(rf.objective_history.back() <= ri.objective_history.back() + 1e-12);
  CHECK(ri.lambda == doctest::Approx(0.05 * (a.matrix().transpose() * y).cwiseAbs().maxCoeff()));
  CHECK(l1_objective(a.matrix(), y, rf.x, rf.lambda) == doctest::Approx(rf.objective_history.back()));
}

TEST_CASE("estimate_operator recovers A from n or more noiseless pairs") {
  const auto a = SensingOperator::sample(OperatorKind::Gaussian, 6, 10, 7);
  std::vector<SignalPair> pairs;
  for (std::uint64_t i = 0; i < 15; ++i) {
    const auto x = generate_ksparse(10, 10, 100 + i, ValueDistribution::Gaussian, false).dense();
    pairs.emplace_back(x, a.apply(x));
  }
  const auto est = estimate_operator(pairs, 0.0);
  CHECK((est.matrix() - a.matrix()).norm() < 1e-10);
  const auto ridged = estimate_operator(pairs);
  CHECK((ridged.matrix() - a.matrix()).norm() < 1e-4);
  pairs.resize(5);
  CHECK_THROWS_AS(estimate_operator(pairs, 0.0), SingularError);
  CHECK_NOTHROW(estimate_operator(pairs));
}

TEST_CASE("recoveries with an estimated operator match the known operator") {
  const auto a = SensingOperator::sample(OperatorKind::Gaussian, 16, 24, 8);
  std::vector<SignalPair> pairs;
  for (std::uint64_t i = 0; i < 40; ++i) {
    const auto x = generate_ksparse(24, 24, 300 + i, ValueDistribution::Uniform, false).dense();
    pairs.emplace_back(x, a.apply(x));
  }
  const auto est = estimate_operator(pairs, 0.0);
  SolverConfig c;
  c.sparsity = 3;
  for (std::uint64_t t = 0; t < 10; ++t) {
    const auto s = generate_ksparse(24, 3, 500 + t);
    const auto known = omp(a, a.apply(s.dense()), c);
    const auto guessed = omp(est, a.apply(s.dense()), c);
    CHECK((known.x - guessed.x).norm() < 1e-6);
  }
}

TEST_CASE("solver input validation") {
  const auto a = SensingOperator::sample(OperatorKind::Gaussian, 8, 12, 1);
  CHECK_THROWS_AS(omp(a, Eigen::VectorXd::Zero(7), SolverConfig{}), DimensionError);
  SolverConfig c;
  c.lambda = -1.0;
  CHECK_THROWS_AS(ista(a, Eigen::VectorXd::Zero(8), c), ParameterError);
}

TEST_CASE("scalar and orthonormal lasso problems have closed forms") {
  Eigen::MatrixXd one(1, 1);
  one(0, 0) = 1.0;
  SolverConfig c;
  c.lambda = 1.0;
  Eigen::VectorXd y(1);
  y << 3.0;
  CHECK(ista(SensingOperator::from_dense(one), y, c).x[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(fista(SensingOperator::from_dense(one), y, c).x[0] == doctest::Approx(2.0).epsilon(1e-12));
  const auto q = SensingOperator::sample(OperatorKind::OrthonormalSquare, 12, 12, 2);
  Eigen::VectorXd yq(12);
  for (Eigen::Index i = 0; i < 12; ++i) yq[i] = std::sin(double(i) + 0.5);
  c.lambda = 0.0;
  CHECK((ista(q, yq, c).x - q.matrix().transpose() * yq).norm() < 1e-9);
}

TEST_CASE("single pair with a vanishing ridge approaches the rank-one minimum-norm solution") {
  Eigen::VectorXd x(5), y(3);
  x << 0.3, -1.0, 0.5, 0.2, 0.0;
  y << 1.0, 2.0, -0.5;
  // minimum-Frobenius A with A x = y is y x^T / ||x||^2
  const Eigen::MatrixXd oracle = y * x.transpose() / x.squaredNorm();
  const auto est = estimate_operator({{x, y}}, 1e-10);
  CHECK((est.matrix() - oracle).norm() < 1e-8);
  CHECK((est.matrix() * x - y).norm() < 1e-8);
}

TEST_CASE("least-squares estimate fits noisy pairs no worse than the true operator") {
  const auto a = SensingOperator::sample(OperatorKind::Gaussian, 6, 10, 3);
  std::vector<SignalPair> pairs;
  for (std::uint64_t i = 0; i < 30; ++i) {
    const auto x = generate_ksparse(10, 10, 700 + i, ValueDistribution::Gaussian, false).dense();
    pairs.emplace_back(x, a.apply(x, 0.1, i));
  }
  const auto est = estimate_operator(pairs, 0.0);
  double r_est = 0.0, r_true = 0.0;
  for (const auto& [x, y] : pairs) {
    r_est += (est.matrix() * x - y).squaredNorm();
    r_true += (a.matrix() * x - y).squaredNorm();
  }
  CHECK(r_est <= r_true);
}
