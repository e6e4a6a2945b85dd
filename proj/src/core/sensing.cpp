#include "sensing.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "error.hpp"
#include "io.hpp"
#include "rng.hpp"

namespace trust {

namespace {

constexpr int kOperatorFormatVersion = 1;

struct KindName {
  OperatorKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {OperatorKind::Identity, "identity"},
    {OperatorKind::OrthonormalSquare, "orthonormal"},
    {OperatorKind::TallOrthonormal, "tall"},
    {OperatorKind::Gaussian, "gaussian"},
    {OperatorKind::FourierMasked, "fourier"},
    {OperatorKind::Dense, "dense"},
};

Eigen::MatrixXd gaussian_matrix(std::size_t m, std::size_t n, double stddev, Rng& rng) {
  Eigen::MatrixXd a(m, n);
  // fill row-major so the draw order does not depend on Eigen's storage order
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = rng.normal(0.0, stddev);
  return a;
}

Eigen::MatrixXd orthonormal_columns(std::size_t m, std::size_t n, Rng& rng) {
  Eigen::MatrixXd g = gaussian_matrix(m, n, 1.0, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m, n);
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (std::size_t j = 0; j < n; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return q;
}

std::pair<std::size_t, std::size_t> grid_for(std::size_t n) {
  const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (s * s == n) return {s, s};
  return {1, n};
}

// Weighted sampling without replacement (exponential keys); low spatial
// frequencies are favoured and DC is always kept.
std::vector<std::size_t> sample_mask(std::size_t h, std::size_t w, std::size_t keep, Rng& rng) {
  const std::size_t n = h * w;
  std::vector<std::pair<double, std::size_t>> keys(n);
  for (std::size_t f = 0; f < n; ++f) {
    const std::size_t u = f / w, v = f % w;
    const double du = static_cast<double>(std::min(u, h - u)) / static_cast<double>(h);
    const double dv = static_cast<double>(std::min(v, w - v)) / static_cast<double>(w);
    const double rho2 = du * du + dv * dv;
    const double weight = 1.0 / (1.0 + rho2 / 0.01);
    const double uni = std::max(rng.uniform(), std::numeric_limits<double>::min());
    double key = std::log(uni) / weight;
    if (f == 0) key = std::numeric_limits<double>::infinity();
    keys[f] = {key, f};
  }
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(keep), keys.end(),
                    [](const auto& a, const auto& b) {
                      return a.first > b.first || (a.first == b.first && a.second < b.second);
                    });
  std::vector<std::size_t> mask(keep);
  for (std::size_t i = 0; i < keep; ++i) mask[i] = keys[i].second;
  std::sort(mask.begin(), mask.end());
  return mask;
}

std::vector<std::complex<double>> twiddles(std::size_t len, double sign) {
  std::vector<std::complex<double>> t(len);
  for (std::size_t j = 0; j < len; ++j) {
    const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(j) /
                       static_cast<double>(len);
    t[j] = {std::cos(ang), std::sin(ang)};
  }
  return t;
}

}  // namespace

std::string to_string(OperatorKind kind) {
  for (const auto& k : kKindNames) {
    if (k.kind == kind) return k.name;
  }
  return "unknown";
}

OperatorKind parse_operator_kind(const std::string& name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (const auto& k : kKindNames) {
    if (lower == k.name) return k.kind;
  }
  if (lower == "orthonormalsquare") return OperatorKind::OrthonormalSquare;
  if (lower == "tallorthonormal") return OperatorKind::TallOrthonormal;
  if (lower == "gaussianfat") return OperatorKind::Gaussian;
  if (lower == "fouriermasked") return OperatorKind::FourierMasked;
  throw ParameterError("unknown operator kind '" + name + "'");
}

SensingOperator SensingOperator::sample(OperatorKind kind, std::size_t m, std::size_t n,
                                        std::uint64_t seed, const OperatorOptions& options) {
  if (n == 0) {
    throw ParameterError("operator needs n >= 1");
  }
  SensingOperator op;
  op.kind_ = kind;
  op.cols_ = n;
  op.seed_ = seed;
  op.options_ = options;
  Rng rng(derive_seed(seed, streams::kOperator));
  auto incompatible = [&](const char* rule) {
    return ParameterError(to_string(kind) + " operator requires " + rule + ", got m=" +
                          std::to_string(m) + ", n=" + std::to_string(n));
  };
  switch (kind) {
    case OperatorKind::Identity:
      if (m != n) throw incompatible("m = n");
      op.rows_ = n;
      op.dense_ = Eigen::MatrixXd::Identity(n, n);
      break;
    case OperatorKind::OrthonormalSquare:
      if (m != n) throw incompatible("m = n");
      op.rows_ = n;
      op.dense_ = orthonormal_columns(n, n, rng);
      break;
    case OperatorKind::TallOrthonormal:
      if (m < n) throw incompatible("m >= n");
      op.rows_ = m;
      op.dense_ = orthonormal_columns(m, n, rng);
      break;
    case OperatorKind::Gaussian: {
      if (m == 0 || m > n) throw incompatible("1 <= m <= n");
      op.rows_ = m;
      op.dense_ = gaussian_matrix(m, n, 1.0 / std::sqrt(static_cast<double>(m)), rng);
      if (options.column_normalized) {
        for (Eigen::Index j = 0; j < op.dense_.cols(); ++j) {
          const double norm = op.dense_.col(j).norm();
          if (norm > 0.0) op.dense_.col(j) /= norm;
        }
      }
      break;
    }
    case OperatorKind::FourierMasked: {
      std::size_t keep = 0;
      if (m == 0) {
        if (!(options.keep_fraction > 0.0 && options.keep_fraction <= 1.0)) {
          throw ParameterError("fourier keep fraction must lie in (0, 1]");
        }
        keep = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(options.keep_fraction * static_cast<double>(n))));
      } else {
        if (m % 2 != 0 || m > 2 * n) throw incompatible("even m <= 2n");
        keep = m / 2;
      }
      op.grid_ = grid_for(n);
      Rng mask_rng(derive_seed(seed, streams::kMask));
      op.mask_ = sample_mask(op.grid_.first, op.grid_.second, keep, mask_rng);
      op.rows_ = 2 * keep;
      if (m != 0) op.options_.keep_fraction = static_cast<double>(keep) / static_cast<double>(n);
      op.materialize_fourier();
      return op;
    }
    case OperatorKind::Dense:
      throw ParameterError("dense operators are built from coefficients, not sampled");
  }
  return op;
}

SensingOperator SensingOperator::from_dense(Eigen::MatrixXd coefficients, std::uint64_t seed) {
  if (coefficients.rows() == 0 || coefficients.cols() == 0) {
    throw ParameterError("dense operator needs a non-empty coefficient matrix");
  }
  SensingOperator op;
  op.kind_ = OperatorKind::Dense;
  op.rows_ = static_cast<std::size_t>(coefficients.rows());
  op.cols_ = static_cast<std::size_t>(coefficients.cols());
  op.seed_ = seed;
  op.dense_ = std::move(coefficients);
  return op;
}

void SensingOperator::materialize_fourier() {
  Eigen::MatrixXd a(rows_, cols_);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cols_));
  for (std::size_t j = 0; j < cols_; ++j) {
    e[static_cast<Eigen::Index>(j)] = 1.0;
    a.col(static_cast<Eigen::Index>(j)) = fourier_forward(e);
    e[static_cast<Eigen::Index>(j)] = 0.0;
  }
  dense_ = std::move(a);
}

Eigen::VectorXd SensingOperator::fourier_forward(const Eigen::VectorXd& x) const {
  const auto [h, w] = grid_;
  const auto tw_w = twiddles(w, -1.0);
  const auto tw_h = twiddles(h, -1.0);
  // row-wise DFT along the fast axis: t[r, v] = sum_c x[r, c] e^{-2 pi i v c / w}
  std::vector<std::complex<double>> t(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t v = 0; v < w; ++v) {
      std::complex<double> acc = 0.0;
      for (std::size_t c = 0; c < w; ++c) acc += x[static_cast<Eigen::Index>(r * w + c)] * tw_w[(v * c) % w];
      t[r * w + v] = acc;
    }
  const double scale = 1.0 / std::sqrt(static_cast<double>(h * w));
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows_));
  for (std::size_t i = 0; i < mask_.size(); ++i) {
    const std::size_t u = mask_[i] / w, v = mask_[i] % w;
    std::complex<double> acc = 0.0;
    for (std::size_t r = 0; r < h; ++r) acc += t[r * w + v] * tw_h[(u * r) % h];
    acc *= scale;
    y[static_cast<Eigen::Index>(2 * i)] = acc.real();
    y[static_cast<Eigen::Index>(2 * i + 1)] = acc.imag();
  }
  return y;
}

Eigen::VectorXd SensingOperator::fourier_adjoint(const Eigen::VectorXd& r) const {
  const auto [h, w] = grid_;
  const auto tw_w = twiddles(w, 1.0);
  const auto tw_h = twiddles(h, 1.0);
  // u[r, v] = sum over kept (u, v) of z e^{+2 pi i u r / h}
  std::vector<std::complex<double>> acc(h * w, 0.0);
  for (std::size_t i = 0; i < mask_.size(); ++i) {
    const std::size_t u = mask_[i] / w, v = mask_[i] % w;
    const std::complex<double> z(r[static_cast<Eigen::Index>(2 * i)],
                                 r[static_cast<Eigen::Index>(2 * i + 1)]);
    for (std::size_t row = 0; row < h; ++row) acc[row * w + v] += z * tw_h[(u * row) % h];
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(h * w));
  Eigen::VectorXd x(static_cast<Eigen::Index>(cols_));
  for (std::size_t row = 0; row < h; ++row)
    for (std::size_t c = 0; c < w; ++c) {
      double re = 0.0;
      for (std::size_t v = 0; v < w; ++v) re += (acc[row * w + v] * tw_w[(v * c) % w]).real();
      x[static_cast<Eigen::Index>(row * w + c)] = re * scale;
    }
  return x;
}

Eigen::VectorXd SensingOperator::apply(const Eigen::VectorXd& x, double noise_sigma,
                                       std::uint64_t noise_index) const {
  if (static_cast<std::size_t>(x.size()) != cols_) {
    throw DimensionError("apply: operator has n=" + std::to_string(cols_) + ", signal has " +
                         std::to_string(x.size()) + " entries");
  }
  if (!(noise_sigma >= 0.0)) {
    throw ParameterError("apply: noise_sigma must be >= 0");
  }
  Eigen::VectorXd y = kind_ == OperatorKind::FourierMasked ? fourier_forward(x)
                                                           : Eigen::VectorXd(dense_ * x);
  if (noise_sigma > 0.0) {
    Rng rng(derive_seed(seed_, streams::kNoise, noise_index));
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += rng.normal(0.0, noise_sigma);
  }
  return y;
}

Eigen::VectorXd SensingOperator::adjoint(const Eigen::VectorXd& r) const {
  if (static_cast<std::size_t>(r.size()) != rows_) {
    throw DimensionError("adjoint: operator has m=" + std::to_string(rows_) + ", input has " +
                         std::to_string(r.size()) + " entries");
  }
  if (kind_ == OperatorKind::FourierMasked) return fourier_adjoint(r);
  return dense_.transpose() * r;
}

void SensingOperator::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format"] = "trust-operator";
  header["version"] = kOperatorFormatVersion;
  header["kind"] = to_string(kind_);
  header["m"] = rows_;
  header["n"] = cols_;
  header["seed"] = seed_;
  header["flags"] = {{"column_normalized", options_.column_normalized},
                     {"keep_fraction", options_.keep_fraction}};
  if (kind_ == OperatorKind::FourierMasked) {
    header["mask"] = mask_;
  } else {
    std::string blob;
    // row-major coefficient order
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = dense_;
    io::append_f64_le(blob, std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())));
    auto blob_path = path;
    blob_path += ".bin";
    io::write_file(blob_path, blob);
    header["blob"] = blob_path.filename().string();
    header["blob_sha256"] = io::sha256_hex(blob);
  }
  io::write_file(path, header.dump(2) + "\n");
}

SensingOperator SensingOperator::load(const std::filesystem::path& path) {
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("operator header " + path.string() + ": " + e.what());
  }
  try {
    if (header.at("format") != "trust-operator" || header.at("version") != kOperatorFormatVersion) {
      throw IoError("unsupported operator format in " + path.string());
    }
    const OperatorKind kind = parse_operator_kind(header.at("kind").get<std::string>());
    const auto m = header.at("m").get<std::size_t>();
    const auto n = header.at("n").get<std::size_t>();
    const auto seed = header.at("seed").get<std::uint64_t>();
    OperatorOptions options;
    options.column_normalized = header.at("flags").at("column_normalized").get<bool>();
    options.keep_fraction = header.at("flags").at("keep_fraction").get<double>();
    if (kind == OperatorKind::FourierMasked) {
      SensingOperator op;
      op.kind_ = kind;
      op.rows_ = m;
      op.cols_ = n;
      op.seed_ = seed;
      op.options_ = options;
      op.grid_ = grid_for(n);
      op.mask_ = header.at("mask").get<std::vector<std::size_t>>();
      if (op.mask_.size() * 2 != m ||
          std::any_of(op.mask_.begin(), op.mask_.end(), [n](std::size_t f) { return f >= n; })) {
        throw IoError("operator mask in " + path.string() + " is inconsistent with m, n");
      }
      op.materialize_fourier();
      return op;
    }
    const std::string blob = io::read_file(path.parent_path() / header.at("blob").get<std::string>());
    if (io::sha256_hex(blob) != header.at("blob_sha256").get<std::string>()) {
      throw IoError("operator blob checksum mismatch for " + path.string());
    }
    auto values = io::parse_f64_le(blob);
    if (values.size() != m * n) {
      throw IoError("operator blob holds " + std::to_string(values.size()) + " values, expected " +
                    std::to_string(m * n));
    }
    Eigen::MatrixXd a = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        values.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    SensingOperator op = from_dense(std::move(a), seed);
    op.kind_ = kind;
    op.options_ = options;
    return op;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("operator header " + path.string() + ": " + e.what());
  }
}

Eigen::VectorXd SparseSignal::dense() const {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < support.size(); ++i) x[static_cast<Eigen::Index>(support[i])] = values[i];
  return x;
}

namespace {

std::vector<std::size_t> random_support(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(perm[i], perm[rng.index(i, n - 1)]);
  }
  std::vector<std::size_t> support(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(support.begin(), support.end());
  return support;
}

}  // namespace

SparseSignal generate_ksparse(std::size_t n, std::size_t k, std::uint64_t seed,
                              ValueDistribution dist, bool normalize) {
  if (k > n) {
    throw ParameterError("generate_ksparse: k=" + std::to_string(k) + " exceeds n=" +
                         std::to_string(n));
  }
  Rng rng(derive_seed(seed, streams::kSignal));
  SparseSignal s;
  s.n = n;
  s.support = random_support(n, k, rng);
  s.values.resize(k);
  for (auto& v : s.values) {
    switch (dist) {
      case ValueDistribution::Gaussian:
        v = rng.normal();
        break;
      case ValueDistribution::Uniform:
        v = rng.uniform(-1.0, 1.0);
        break;
      case ValueDistribution::Rademacher:
        v = rng.uniform() < 0.5 ? -1.0 : 1.0;
        break;
    }
  }
  if (normalize && k > 0) {
    double norm = 0.0;
    for (double v : s.values) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (auto& v : s.values) v /= norm;
    }
  }
  return s;
}

std::size_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::size_t result = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    const std::size_t num = n - k + i;
    // result * num / i stays exact because result * num is divisible by i
    if (result > std::numeric_limits<std::size_t>::max() / num) {
      return std::numeric_limits<std::size_t>::max();
    }
    result = result * num / i;
  }
  return result;
}

RipEstimate estimate_rip(const SensingOperator& a, std::size_t k, RipMethod method,
                         std::size_t budget, std::uint64_t seed, std::size_t enumeration_cap) {
  const std::size_t n = a.cols();
  const std::size_t order = std::min(2 * k, n);
  RipEstimate est;
  est.order = order;
  est.method = method;
  if (order == 0) {
    return est;
  }
  const Eigen::MatrixXd& mat = a.matrix();
  if (method == RipMethod::ExactEnumeration) {
    const std::size_t supports = binomial(n, order);
    if (supports > enumeration_cap) {
      throw RefusedError("exact RIP enumeration needs C(" + std::to_string(n) + ", " +
                         std::to_string(order) + ") supports, above the cap of " +
                         std::to_string(enumeration_cap) + "; use MonteCarlo");
    }
    const Eigen::MatrixXd gram = mat.transpose() * mat;
    std::vector<std::size_t> idx(order);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Eigen::MatrixXd sub(order, order);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
    double delta = 0.0;
    std::size_t count = 0;
    while (true) {
      for (std::size_t i = 0; i < order; ++i)
        for (std::size_t j = 0; j < order; ++j)
          sub(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
              gram(static_cast<Eigen::Index>(idx[i]), static_cast<Eigen::Index>(idx[j]));
      eig.compute(sub, Eigen::EigenvaluesOnly);
      const auto& ev = eig.eigenvalues();
      delta = std::max({delta, std::abs(ev.maxCoeff() - 1.0), std::abs(1.0 - ev.minCoeff())});
      ++count;
      // next combination in lexicographic order
      std::size_t pos = order;
      while (pos > 0 && idx[pos - 1] == n - order + pos - 1) --pos;
      if (pos == 0) break;
      ++idx[pos - 1];
      for (std::size_t j = pos; j < order; ++j) idx[j] = idx[j - 1] + 1;
    }
    est.delta = delta;
    est.evaluated = count;
    return est;
  }
  Rng rng(derive_seed(seed, streams::kTrial));
  double delta = 0.0;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t t = 0; t < budget; ++t) {
    const auto support = random_support(n, order, rng);
    z.setZero();
    double norm2 = 0.0;
    for (auto i : support) {
      const double v = rng.normal();
      z[static_cast<Eigen::Index>(i)] = v;
      norm2 += v * v;
    }
    if (norm2 == 0.0) continue;
    z /= std::sqrt(norm2);
    const double az2 = (mat * z).squaredNorm();
    delta = std::max(delta, std::abs(az2 - 1.0));
  }
  est.delta = delta;
  est.evaluated = budget;
  est.lower_bound = true;
  return est;
}

}  // namespace trust
