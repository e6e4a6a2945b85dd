#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "core/error.hpp"
#include "core/metrics.hpp"
#include "core/rng.hpp"
#include "gradcheck.hpp"

using namespace trust;

namespace {

std::vector<double> random_image(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform();
  return v;
}

// Direct sliding-window SSIM with a uniform window and population moments.
double naive_ssim(const std::vector<double>& a, const std::vector<double>& b, std::size_t h, std::size_t w,
                  std::size_t win) {
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + win <= h; ++r)
    for (std::size_t c = 0; c + win <= w; ++c) {
      double ma = 0, mb = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          ma += a[(r + i) * w + c + j];
          mb += b[(r + i) * w + c + j];
        }
      const double nn = double(win * win);
      ma /= nn;
      mb /= nn;
      double va = 0, vb = 0, cov = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          const double da = a[(r + i) * w + c + j] - ma, db = b[(r + i) * w + c + j] - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      va /= nn;
      vb /= nn;
      cov /= nn;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / double(count);
}

}  // namespace

TEST_CASE("identities") {
  const auto x = random_image(256, 1);
  CHECK(std::abs(ssim(x, x, 16, 16) - 1.0) < 1e-9);
  CHECK(psnr_from_rmse(0.1) == 20.0);
  CHECK(psnr(x, x) == doctest::Approx(240.0));
  CHECK(mse(x, x) == 0.0);
}

TEST_CASE("ssim agrees with a direct window loop") {
  const auto a = random_image(20 * 18, 2), b = random_image(20 * 18, 3);
  CHECK(ssim(a, b, 20, 18) == doctest::Approx(naive_ssim(a, b, 20, 18, 7)).epsilon(1e-12));
  const Tensor ta({20, 18}, a), tb({20, 18}, b);
  CHECK(ssim_tensor(ta, tb).item() == doctest::Approx(ssim(a, b, 20, 18)).epsilon(1e-12));
  CHECK_THROWS_AS(ssim(a, b, 5, 72), ParameterError);  // window larger than the image
}

TEST_CASE("ssim gradient passes a finite-difference check") {
  const Tensor target({9, 9}, random_image(81, 4));
  const auto report = testing::gradient_check(
      [&](const std::vector<Tensor>& v) { return ssim_tensor(v[0], target); },
      {Tensor({9, 9}, random_image(81, 5))});
  CHECK(report.worst < testing::kGradRelTol);
}

TEST_CASE("fpr trivial cases") {
  const std::vector<double> zeros(16, 0.0), ones(16, 1.0), half(16, 0.3);
  CHECK(fpr(zeros, zeros) == 0.0);
  CHECK(fpr(ones, zeros) == 1.0);
  CHECK(fpr(ones, ones) == 0.0);
  CHECK(fpr(half, zeros) == 0.0);  // 0.3 is not above t_high
  std::vector<double> one_hot = zeros;
  one_hot[3] = 0.9;
  CHECK(fpr(one_hot, zeros) == 1.0 / 16.0);
  FprThresholds bad;
  bad.t_high = 0.05;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("aggregates match naive recomputation") {
  MetricReport report;
  for (std::uint64_t i = 0; i < 12; ++i) {
    const auto a = random_image(100, 10 + i), b = random_image(100, 40 + i);
    report.per_image.push_back(compute_metrics(a, b, 10, 10));
  }
  double mean = 0.0;
  for (const auto& m : report.per_image) mean += m.psnr;
  mean /= 12.0;
  double var = 0.0;
  for (const auto& m : report.per_image) var += (m.psnr - mean) * (m.psnr - mean);
  const auto agg = report.aggregate(&ImageMetrics::psnr);
  CHECK(agg.mean == doctest::Approx(mean).epsilon(1e-13));
  CHECK(agg.stddev == doctest::Approx(std::sqrt(var / 12.0)).epsilon(1e-12));
  CHECK(report.to_csv().rfind("index,mse,mae,rmse,psnr,ssim,fpr\n", 0) == 0);
  const auto j = nlohmann::json::parse(report.to_json());
  CHECK(j["metrics"]["fdr"] == j["metrics"]["fpr"]);
  CHECK(j["count"] == 12);
}
