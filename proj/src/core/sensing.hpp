#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace trust {

enum class OperatorKind {
  Identity,
  OrthonormalSquare,
  TallOrthonormal,
  Gaussian,       // i.i.d. N(0, 1/m), m <= n
  FourierMasked,  // stacked Re/Im rows of a masked unitary DFT
  Dense,          // arbitrary coefficients (estimated or loaded)
};

std::string to_string(OperatorKind kind);
OperatorKind parse_operator_kind(const std::string& name);

struct OperatorOptions {
  bool column_normalized = false;
  double keep_fraction = 0.25;  // FourierMasked only
};

class SensingOperator {
 public:
  static SensingOperator sample(OperatorKind kind, std::size_t m, std::size_t n,
                                std::uint64_t seed, const OperatorOptions& options = {});
  static SensingOperator from_dense(Eigen::MatrixXd coefficients, std::uint64_t seed = 0);

  OperatorKind kind() const { return kind_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::uint64_t seed() const { return seed_; }
  const OperatorOptions& options() const { return options_; }
  /// Kept frequency indices (FourierMasked), sorted.
  const std::vector<std::size_t>& mask() const { return mask_; }
  /// Spatial layout the DFT acts on (FourierMasked); rows x cols of the image.
  std::pair<std::size_t, std::size_t> fourier_grid() const { return grid_; }

  /// Explicit m x n coefficients (materialized once for FourierMasked).
  const Eigen::MatrixXd& matrix() const { return dense_; }

  /// A x + w, w ~ N(0, noise_sigma^2) drawn from the operator's noise stream at `noise_index`.
  Eigen::VectorXd apply(const Eigen::VectorXd& x, double noise_sigma = 0.0,
                        std::uint64_t noise_index = 0) const;
  Eigen::VectorXd adjoint(const Eigen::VectorXd& r) const;

  /// JSON header {kind, m, n, seed, flags, ...} plus a sibling little-endian f64
  /// blob `<path>.bin` for dense kinds; FourierMasked stores its mask indices in the header.
  void save(const std::filesystem::path& path) const;
  static SensingOperator load(const std::filesystem::path& path);

 private:
  SensingOperator() = default;
  Eigen::VectorXd fourier_forward(const Eigen::VectorXd& x) const;
  Eigen::VectorXd fourier_adjoint(const Eigen::VectorXd& r) const;
  void materialize_fourier();

  OperatorKind kind_ = OperatorKind::Identity;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::uint64_t seed_ = 0;
  OperatorOptions options_;
  std::vector<std::size_t> mask_;
  std::pair<std::size_t, std::size_t> grid_{1, 1};
  Eigen::MatrixXd dense_;
};

struct SparseSignal {
  std::size_t n = 0;
  std::vector<std::size_t> support;  // strictly increasing
  std::vector<double> values;        // one per support index
  double noise_sigma = 0.0;

  Eigen::VectorXd dense() const;
};

enum class ValueDistribution { Gaussian, Uniform, Rademacher };

/// Uniformly random support of size k; values from `dist`, optionally scaled to unit l2 norm.
SparseSignal generate_ksparse(std::size_t n, std::size_t k, std::uint64_t seed,
                              ValueDistribution dist = ValueDistribution::Gaussian,
                              bool normalize = true);

enum class RipMethod { ExactEnumeration, MonteCarlo };

struct RipEstimate {
  std::size_t order = 0;  // sparsity level of the tested vectors (2k, clipped to n)
  double delta = 0.0;
  RipMethod method = RipMethod::ExactEnumeration;
  std::size_t evaluated = 0;  // supports enumerated or random vectors drawn
  bool lower_bound = false;   // true for MonteCarlo
};

inline constexpr std::size_t kDefaultEnumerationCap = 1'000'000;

/// C(n, k) saturated at SIZE_MAX.
std::size_t binomial(std::size_t n, std::size_t k);

/// Restricted isometry constant of order 2k. ExactEnumeration visits every
/// support of size 2k and refuses (RefusedError) when there are more than
/// `enumeration_cap` of them; MonteCarlo returns a lower bound from `budget`
/// random unit 2k-sparse vectors.
RipEstimate estimate_rip(const SensingOperator& a, std::size_t k, RipMethod method,
                         std::size_t budget = 10'000, std::uint64_t seed = 0,
                         std::size_t enumeration_cap = kDefaultEnumerationCap);

}  // namespace trust
