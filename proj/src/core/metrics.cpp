#include "metrics.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "error.hpp"
#include "ops.hpp"

namespace trust {

namespace {

void require_same(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size() || a.empty()) {
    throw DimensionError(std::string(what) + ": image sizes differ (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
  }
}

// Neumaier summation.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void FprThresholds::validate() const {
  if (!(t_low >= 0.0 && t_high <= 1.0 && t_low <= t_high)) {
    throw ParameterError("FPR thresholds need 0 <= t_low <= t_high <= 1, got t_low=" +
                         std::to_string(t_low) + ", t_high=" + std::to_string(t_high));
  }
}

double mse(std::span<const double> xhat, std::span<const double> x) {
  require_same(xhat, x, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (xhat[i] - x[i]) * (xhat[i] - x[i]);
  return s / static_cast<double>(x.size());
}

double mae(std::span<const double> xhat, std::span<const double> x) {
  require_same(xhat, x, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(xhat[i] - x[i]);
  return s / static_cast<double>(x.size());
}

double rmse(std::span<const double> xhat, std::span<const double> x) {
  return std::sqrt(mse(xhat, x));
}

double psnr_from_rmse(double rmse_value, double max_value) {
  return 20.0 * std::log10(max_value / std::max(rmse_value, kRmseFloor));
}

double psnr(std::span<const double> xhat, std::span<const double> x, double max_value) {
  if (!(max_value > 0.0)) {
    throw ParameterError("psnr: MAX must be > 0");
  }
  return psnr_from_rmse(rmse(xhat, x), max_value);
}

Tensor ssim_tensor(const Tensor& xhat, const Tensor& x, const SsimParams& params) {
  if (xhat.shape() != x.shape()) {
    throw DimensionError("ssim: shape mismatch " + shape_string(xhat.shape()) + " vs " +
                         shape_string(x.shape()));
  }
  if (x.rank() != 2 && !(x.rank() == 3 && x.dim(0) == 1)) {
    throw DimensionError("ssim: expected [H, W] or [1, H, W] images, got " + shape_string(x.shape()));
  }
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  if (params.window == 0 || params.window > h || params.window > w) {
    throw ParameterError("ssim: window " + std::to_string(params.window) +
                         " does not fit image " + shape_string(x.shape()));
  }
  const Shape img{1, h, w};
  const Tensor a = reshape(xhat, img);
  const Tensor b = reshape(x, img);
  const double wgt = 1.0 / static_cast<double>(params.window * params.window);
  const Tensor box({1, 1, params.window, params.window}, wgt);
  auto local_mean = [&](const Tensor& t) { return conv2d(t, box); };
  const Tensor mu_a = local_mean(a), mu_b = local_mean(b);
  const Tensor mu_aa = mul(mu_a, mu_a), mu_bb = mul(mu_b, mu_b), mu_ab = mul(mu_a, mu_b);
  const Tensor var_a = sub(local_mean(mul(a, a)), mu_aa);
  const Tensor var_b = sub(local_mean(mul(b, b)), mu_bb);
  const Tensor cov = sub(local_mean(mul(a, b)), mu_ab);
  const Tensor num = mul(add_scalar(scalar_mul(mu_ab, 2.0), params.c1),
                         add_scalar(scalar_mul(cov, 2.0), params.c2));
  const Tensor den = mul(add_scalar(add(mu_aa, mu_bb), params.c1),
                         add_scalar(add(var_a, var_b), params.c2));
  return reduce_mean(div(num, den));
}

double ssim(std::span<const double> xhat, std::span<const double> x, std::size_t height,
            std::size_t width, const SsimParams& params) {
  require_same(xhat, x, "ssim");
  if (x.size() != height * width) {
    throw DimensionError("ssim: " + std::to_string(x.size()) + " pixels for " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  const Tensor a({height, width}, std::vector<double>(xhat.begin(), xhat.end()));
  const Tensor b({height, width}, std::vector<double>(x.begin(), x.end()));
  return ssim_tensor(a, b, params).item();
}

double fpr(std::span<const double> xhat, std::span<const double> x, const FprThresholds& thresholds) {
  require_same(xhat, x, "fpr");
  thresholds.validate();
  std::size_t count = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (xhat[i] > thresholds.t_high && x[i] <= thresholds.t_low) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(x.size());
}

ImageMetrics compute_metrics(std::span<const double> xhat, std::span<const double> x,
                             std::size_t height, std::size_t width, const MetricOptions& options) {
  ImageMetrics m;
  m.mse = mse(xhat, x);
  m.mae = mae(xhat, x);
  m.rmse = std::sqrt(m.mse);
  m.psnr = psnr_from_rmse(m.rmse, options.max_value);
  m.ssim = ssim(xhat, x, height, width, options.ssim);
  m.fpr = fpr(xhat, x, options.thresholds);
  return m;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  if (values.empty()) return r;
  CompensatedSum sum;
  for (double v : values) sum.add(v);
  r.mean = sum.value() / static_cast<double>(values.size());
  CompensatedSum sq;
  for (double v : values) sq.add((v - r.mean) * (v - r.mean));
  r.stddev = std::sqrt(sq.value() / static_cast<double>(values.size()));
  return r;
}

MeanStd MetricReport::aggregate(double ImageMetrics::*field) const {
  std::vector<double> v;
  v.reserve(per_image.size());
  for (const auto& m : per_image) v.push_back(m.*field);
  return mean_std(v);
}

std::string MetricReport::to_csv() const {
  std::string out = "index,mse,mae,rmse,psnr,ssim,fpr\n";
  for (std::size_t i = 0; i < per_image.size(); ++i) {
    const auto& m = per_image[i];
    out += std::to_string(i) + "," + fmt(m.mse) + "," + fmt(m.mae) + "," + fmt(m.rmse) + "," +
           fmt(m.psnr) + "," + fmt(m.ssim) + "," + fmt(m.fpr) + "\n";
  }
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["count"] = per_image.size();
  auto put = [&](const char* name, double ImageMetrics::*field) {
    const MeanStd s = aggregate(field);
    j["metrics"][name] = {{"mean", s.mean}, {"std", s.stddev}};
  };
  put("mse", &ImageMetrics::mse);
  put("mae", &ImageMetrics::mae);
  put("rmse", &ImageMetrics::rmse);
  put("psnr", &ImageMetrics::psnr);
  put("ssim", &ImageMetrics::ssim);
  put("fpr", &ImageMetrics::fpr);
  // the hallucination score appears as FDR in result tables; same quantity
  j["metrics"]["fdr"] = j["metrics"]["fpr"];
  j["std_kind"] = "population";
  j["max_value"] = options.max_value;
  j["ssim_params"] = {{"window", options.ssim.window}, {"c1", options.ssim.c1}, {"c2", options.ssim.c2}};
  j["fpr_thresholds"] = {{"t_high", options.thresholds.t_high}, {"t_low", options.thresholds.t_low}};
  return j.dump(2) + "\n";
}

}  // namespace trust
