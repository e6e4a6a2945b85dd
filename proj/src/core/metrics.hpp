#pragma once

#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace trust {

struct SsimParams {
  std::size_t window = 7;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

struct FprThresholds {
  double t_high = 0.5;
  double t_low = 0.1;
  void validate() const;
};

/// Perfect reconstructions report 20 log10(MAX / kRmseFloor) (240 dB at MAX 1).
inline constexpr double kRmseFloor = 1e-12;

double mse(std::span<const double> xhat, std::span<const double> x);
double mae(std::span<const double> xhat, std::span<const double> x);
double rmse(std::span<const double> xhat, std::span<const double> x);
double psnr_from_rmse(double rmse_value, double max_value = 1.0);
double psnr(std::span<const double> xhat, std::span<const double> x, double max_value = 1.0);

/// Mean SSIM over all valid window positions of a uniform window. Images are height x width.
double ssim(std::span<const double> xhat, std::span<const double> x, std::size_t height,
            std::size_t width, const SsimParams& params = {});
/// Differentiable SSIM of two [H, W] (or [1, H, W]) tensors; returns a scalar tensor.
Tensor ssim_tensor(const Tensor& xhat, const Tensor& x, const SsimParams& params = {});

/// |{i : xhat_i > t_high and x_i <= t_low}| / N. Reported as both FPR and FDR.
double fpr(std::span<const double> xhat, std::span<const double> x,
           const FprThresholds& thresholds = {});

struct ImageMetrics {
  double mse = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double fpr = 0.0;
};

struct MetricOptions {
  double max_value = 1.0;
  SsimParams ssim;
  FprThresholds thresholds;
};

ImageMetrics compute_metrics(std::span<const double> xhat, std::span<const double> x,
                             std::size_t height, std::size_t width, const MetricOptions& options = {});

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
};

/// Neumaier-compensated mean and population standard deviation.
MeanStd mean_std(std::span<const double> values);

struct MetricReport {
  std::vector<ImageMetrics> per_image;
  MetricOptions options;

  MeanStd aggregate(double ImageMetrics::*field) const;
  /// One row per image: index,mse,mae,rmse,psnr,ssim,fpr
  std::string to_csv() const;
  /// Aggregate mean/std per metric plus the thresholds and SSIM window used.
  std::string to_json() const;
};

}  // namespace trust
