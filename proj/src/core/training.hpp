#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace trust {

enum class LossKind { L2, L2_L1, L2_SSIM };

std::string to_string(LossKind kind);
/// Accepts l2, l2l1, l2_l1, l2ssim, l2_ssim (case-insensitive).
LossKind parse_loss_kind(const std::string& name);

/// L2 = mean((xhat - x)^2); L2_L1 adds lambda_l1 * mean|xhat - x|;
/// L2_SSIM adds lambda_ssim * (1 - ssim(xhat, x)). Inputs are [H, W].
Tensor loss(LossKind kind, const Tensor& xhat, const Tensor& x, double lambda_l1 = 0.1,
            double lambda_ssim = 0.5);

struct TrainConfig {
  LossKind loss = LossKind::L2_SSIM;
  double lambda_l1 = 0.1;
  double lambda_ssim = 0.5;
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

class Adam {
 public:
  Adam(const ModelParams& params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  /// One update from the gradients currently stored on the parameters.
  void step(ModelParams& params);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_ssim = 0.0;
  double val_psnr = 0.0;
  double val_fpr = 0.0;
};

/// epoch,train_loss,val_loss,val_ssim,val_psnr,val_fpr with round-trip precision.
std::string epoch_log_csv(const std::vector<EpochRecord>& log);
/// One CSV row of the epoch log, newline-terminated.
std::string epoch_log_row(const EpochRecord& record);

struct Evaluation {
  double loss = 0.0;
  MetricReport report;
  std::vector<std::vector<double>> reconstructions;
};

/// Tape-free pass over pairs; per-image work is sharded over TRUST_THREADS workers and
/// aggregated with compensated sums, so the result does not depend on the worker count.
Evaluation evaluate(const ModelParams& params, const ModelSpec& spec, const std::vector<SamplePair>& pairs,
                    const TrainConfig& config, bool keep_reconstructions = false);

struct TrainResult {
  ModelParams last;
  ModelParams best;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> log;
};

/// Mini-batch Adam on `train`, validated on `val` after every epoch. Single-threaded and
/// deterministic for a fixed seed. A non-finite loss aborts with NumericError naming the
/// first non-finite tensor.
using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const ModelSpec& spec, const TrainConfig& config, const std::vector<SamplePair>& train,
                  const std::vector<SamplePair>& val, ModelParams initial, const EpochCallback& on_epoch = {});
TrainResult train(const ModelSpec& spec, const TrainConfig& config, const std::vector<SamplePair>& train,
                  const std::vector<SamplePair>& val, const EpochCallback& on_epoch = {});

/// JSON manifest at `path` plus little-endian f64 values at `<path>.bin`.
void checkpoint_save(const std::filesystem::path& path, const ModelSpec& spec, const ModelParams& params);

struct Checkpoint {
  ModelSpec spec;
  ModelParams params;
};

/// IoError on format, version, size, or checksum problems; ContractError on shape mismatch.
/// Nothing is returned unless every tensor validated.
Checkpoint checkpoint_load(const std::filesystem::path& path);

}  // namespace trust
