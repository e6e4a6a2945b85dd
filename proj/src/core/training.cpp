#include "training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "error.hpp"
#include "io.hpp"
#include "ops.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace trust {

namespace {

constexpr int kCheckpointVersion = 1;

Tensor image_tensor(const std::vector<double>& values, std::size_t side) {
  return Tensor({side, side}, values);
}

void check_pair_shapes(const ModelSpec& spec, const SamplePair& p) {
  const std::size_t s = spec.image_size(), o = spec.observation_size();
  if (p.x.size() != s * s || p.y.size() != o * o) {
    throw DimensionError("sample pair (x " + std::to_string(p.x.size()) + ", y " + std::to_string(p.y.size()) +
                         " values) does not fit model image " + std::to_string(s) + "x" + std::to_string(s) +
                         " / observation " + std::to_string(o) + "x" + std::to_string(o));
  }
}

std::string describe_non_finite(const ModelParams& params) {
  const std::string name = params.first_non_finite();
  if (!name.empty()) return "first non-finite tensor: " + name;
  for (const auto& [n, t] : params.entries()) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) return "first non-finite tensor: " + n + " (gradient)";
    }
  }
  return "parameters finite; loss itself is non-finite";
}

double compensated_mean(const std::vector<double>& v) { return mean_std(v).mean; }

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::L2: return "l2";
    case LossKind::L2_L1: return "l2l1";
    case LossKind::L2_SSIM: return "l2ssim";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& name) {
  std::string s;
  for (char c : name) {
    if (c != '_' && c != '+') s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (s == "l2") return LossKind::L2;
  if (s == "l2l1") return LossKind::L2_L1;
  if (s == "l2ssim") return LossKind::L2_SSIM;
  throw ParameterError("unknown loss kind '" + name + "' (expected l2, l2l1 or l2ssim)");
}

Tensor loss(LossKind kind, const Tensor& xhat, const Tensor& x, double lambda_l1, double lambda_ssim) {
  if (xhat.shape() != x.shape()) {
    throw DimensionError("loss: shapes " + shape_string(xhat.shape()) + " and " + shape_string(x.shape()) +
                         " differ");
  }
  const Tensor diff = sub(xhat, x);
  const Tensor l2 = reduce_mean(mul(diff, diff));
  switch (kind) {
    case LossKind::L2:
      return l2;
    case LossKind::L2_L1:
      return add(l2, scalar_mul(reduce_mean(absolute(diff)), lambda_l1));
    case LossKind::L2_SSIM:
      return add(l2, scalar_mul(add_scalar(scalar_mul(ssim_tensor(xhat, x), -1.0), 1.0), lambda_ssim));
  }
  throw ParameterError("unknown loss kind");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ParameterError("learning_rate must be finite and non-negative");
  }
  if (batch_size == 0 || epochs == 0) throw ParameterError("batch_size and epochs must be positive");
  if (lambda_l1 < 0.0 || lambda_ssim < 0.0) throw ParameterError("loss weights must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0)) {
    throw ParameterError("Adam needs 0 <= beta < 1 and eps > 0");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"loss", to_string(c.loss)},       {"lambda_l1", c.lambda_l1}, {"lambda_ssim", c.lambda_ssim},
       {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
       {"seed", c.seed},
       {"optimizer", {{"name", "adam"}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.adam_eps}}}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("loss")) c.loss = parse_loss_kind(j.at("loss").get<std::string>());
  c.lambda_l1 = j.value("lambda_l1", c.lambda_l1);
  c.lambda_ssim = j.value("lambda_ssim", c.lambda_ssim);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.beta1 = o.value("beta1", c.beta1);
    c.beta2 = o.value("beta2", c.beta2);
    c.adam_eps = o.value("eps", c.adam_eps);
  }
}

Adam::Adam(const ModelParams& params, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, t] : params.entries()) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

void Adam::step(ModelParams& params) {
  if (params.size() != m_.size()) throw ContractError("Adam: parameter set changed size");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t k = 0;
  for (const auto& [name, t] : params.entries()) {
    auto& impl = *t.impl();
    auto& m = m_[k];
    auto& v = v_[k];
    ++k;
    if (impl.grad.size() != impl.data.size()) continue;
    for (std::size_t i = 0; i < impl.data.size(); ++i) {
      const double g = impl.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      impl.data[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

std::string epoch_log_row(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_loss,
                r.val_ssim, r.val_psnr, r.val_fpr);
  return buf;
}

std::string epoch_log_csv(const std::vector<EpochRecord>& log) {
  std::string out = "epoch,train_loss,val_loss,val_ssim,val_psnr,val_fpr\n";
  for (const auto& r : log) out += epoch_log_row(r);
  return out;
}

Evaluation evaluate(const ModelParams& params, const ModelSpec& spec, const std::vector<SamplePair>& pairs,
                    const TrainConfig& config, bool keep_reconstructions) {
  validate_params(spec, params);
  const std::size_t s = spec.image_size(), o = spec.observation_size();
  Evaluation ev;
  ev.report.per_image.resize(pairs.size());
  std::vector<double> losses(pairs.size());
  if (keep_reconstructions) ev.reconstructions.resize(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    check_pair_shapes(spec, pairs[i]);
    const Tensor xhat = forward(params, spec, image_tensor(pairs[i].y, o));
    const Tensor x = image_tensor(pairs[i].x, s);
    losses[i] = loss(config.loss, xhat, x, config.lambda_l1, config.lambda_ssim).item();
    ev.report.per_image[i] = compute_metrics(xhat.values(), pairs[i].x, s, s, ev.report.options);
    if (keep_reconstructions) ev.reconstructions[i] = xhat.values();
  });
  ev.loss = pairs.empty() ? 0.0 : compensated_mean(losses);
  return ev;
}

TrainResult train(const ModelSpec& spec, const TrainConfig& config, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& val, ModelParams params, const EpochCallback& on_epoch) {
  config.validate();
  validate_params(spec, params);
  if (train_set.empty() || val.empty()) throw ParameterError("train and val splits must be non-empty");
  for (const auto& p : train_set) check_pair_shapes(spec, p);
  const std::size_t s = spec.image_size(), o = spec.observation_size();

  Adam adam(params, config.learning_rate, config.beta1, config.beta2, config.adam_eps);
  TrainResult result;
  double best_loss = 0.0;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, streams::kShuffle, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    std::vector<double> batch_losses;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double weight = 1.0 / static_cast<double>(end - start);
      params.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const SamplePair& pair = train_set[order[b]];
        Tape tape;
        TapeScope scope(tape);
        const Tensor xhat = forward(params, spec, image_tensor(pair.y, o));
        const Tensor l = scalar_mul(
            loss(config.loss, xhat, image_tensor(pair.x, s), config.lambda_l1, config.lambda_ssim), weight);
        if (!std::isfinite(l.item())) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                             std::to_string(order[b]) + "; " + describe_non_finite(params));
        }
        tape.backward(l);
        batch_loss += l.item();
      }
      adam.step(params);
      if (!params.all_finite()) {
        throw NumericError("non-finite parameters after update at epoch " + std::to_string(epoch) + "; " +
                           describe_non_finite(params));
      }
      batch_losses.push_back(batch_loss);
    }
    params.zero_grad();

    const Evaluation ev = evaluate(params, spec, val, config);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = compensated_mean(batch_losses);
    rec.val_loss = ev.loss;
    rec.val_ssim = ev.report.aggregate(&ImageMetrics::ssim).mean;
    rec.val_psnr = ev.report.aggregate(&ImageMetrics::psnr).mean;
    rec.val_fpr = ev.report.aggregate(&ImageMetrics::fpr).mean;
    if (!std::isfinite(rec.val_loss)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch) + "; " +
                         describe_non_finite(params));
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (epoch == 1 || rec.val_loss < best_loss) {
      best_loss = rec.val_loss;
      result.best_epoch = epoch;
      result.best = params.clone();
    }
  }
  result.last = std::move(params);
  return result;
}

TrainResult train(const ModelSpec& spec, const TrainConfig& config, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& val, const EpochCallback& on_epoch) {
  return train(spec, config, train_set, val, init_params(spec), on_epoch);
}

void checkpoint_save(const std::filesystem::path& path, const ModelSpec& spec, const ModelParams& params) {
  validate_params(spec, params);
  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : params.entries()) {
    if (!t.all_finite()) throw NumericError("refusing to checkpoint non-finite tensor '" + name + "'");
    io::append_f64_le(blob, t.values());
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  const std::string blob_name = path.filename().string() + ".bin";
  nlohmann::json manifest = {{"format", "trust-checkpoint"},
                             {"version", kCheckpointVersion},
                             {"model", spec},
                             {"dtype", "float64-le"},
                             {"blob", blob_name},
                             {"blob_bytes", blob.size()},
                             {"blob_sha256", io::sha256_hex(blob)},
                             {"tensors", tensors}};
  io::write_file(path.parent_path() / blob_name, blob);
  io::write_file(path, manifest.dump(2) + "\n");
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  Checkpoint ck;
  std::vector<std::pair<std::string, Shape>> entries;
  std::vector<std::size_t> offsets;
  std::string blob_name, blob_sha;
  std::size_t blob_bytes = 0;
  try {
    if (manifest.at("format") != "trust-checkpoint") throw IoError("not a checkpoint: " + path.string());
    const int version = manifest.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw IoError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
    }
    ck.spec = manifest.at("model").get<ModelSpec>();
    blob_name = manifest.at("blob").get<std::string>();
    blob_sha = manifest.at("blob_sha256").get<std::string>();
    blob_bytes = manifest.at("blob_bytes").get<std::size_t>();
    for (const auto& t : manifest.at("tensors")) {
      entries.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<Shape>());
      offsets.push_back(t.at("offset").get<std::size_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  }
  const std::string blob = io::read_file(path.parent_path() / blob_name);
  if (blob.size() != blob_bytes) {
    throw IoError("checkpoint blob " + blob_name + " has " + std::to_string(blob.size()) + " bytes, manifest says " +
                  std::to_string(blob_bytes));
  }
  if (io::sha256_hex(blob) != blob_sha) throw IoError("checkpoint blob " + blob_name + " checksum mismatch");
  const std::vector<double> values = io::parse_f64_le(blob);
  ModelParams params;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, shape] = entries[i];
    const std::size_t count = shape_size(shape);
    if (offsets[i] + count > values.size()) {
      throw IoError("checkpoint tensor '" + name + "' extends past the end of the blob");
    }
    Tensor t(shape, std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(offsets[i]),
                                        values.begin() + static_cast<std::ptrdiff_t>(offsets[i] + count)));
    t.set_requires_grad(true);
    params.add(name, std::move(t));
  }
  validate_params(ck.spec, params);
  ck.params = std::move(params);
  return ck;
}

}  // namespace trust
