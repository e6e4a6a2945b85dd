#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace trust::testing {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradRelTol = 1e-4;
inline constexpr double kZeroGradNorm = 1e-6;
inline constexpr double kGradAbsTol = 1e-8;

struct GradReport {
  double worst = 0.0;  // largest norm-wise relative error over inputs
  std::string worst_input;
  std::vector<double> per_input;
};

/// Norm-wise relative error ||g_analytic - g_fd|| / max(||g_analytic||, ||g_fd||, 1e-12)
/// per input, with central differences of step kFdStep.
inline GradReport gradient_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 std::vector<Tensor> inputs, const std::vector<std::string>& names = {}) {
  for (auto& t : inputs) t.set_requires_grad(true);
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor out = f(inputs);
    tape.backward(out);
    for (const auto& t : inputs) analytic.push_back(t.grad());
  }
  GradReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& impl = *inputs[k].impl();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < impl.data.size(); ++i) {
      const double saved = impl.data[i];
      impl.data[i] = saved + kFdStep;
      const double up = f(inputs).item();
      impl.data[i] = saved - kFdStep;
      const double down = f(inputs).item();
      impl.data[i] = saved;
      const double fd = (up - down) / (2.0 * kFdStep);
      const double a = analytic[k][i];
      diff2 += (a - fd) * (a - fd);
      a2 += a * a;
      n2 += fd * fd;
    }
    double rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    // identically-zero gradients (e.g. shift-invariant inputs) are judged on absolute error
    if (std::sqrt(a2) < kZeroGradNorm && std::sqrt(n2) < kZeroGradNorm && std::sqrt(diff2) < kGradAbsTol) rel = 0.0;
    report.per_input.push_back(rel);
    if (rel >= report.worst) {
      report.worst = rel;
      report.worst_input = k < names.size() ? names[k] : "input " + std::to_string(k);
    }
  }
  return report;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

/// Values bounded away from zero, for ops with a kink at 0.
inline Tensor random_away_from_zero(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) {
    const double mag = rng.uniform(0.1, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

}  // namespace trust::testing
