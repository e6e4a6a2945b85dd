#include "dataset.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace trust {

namespace {

constexpr int kManifestVersion = 1;
constexpr const char* kManifestName = "manifest.json";
constexpr const char* kOperatorName = "operator.json";

std::size_t square_side(std::size_t length) {
  auto side = static_cast<std::size_t>(std::sqrt(static_cast<double>(length)));
  while (side * side < length) ++side;
  while (side > 0 && (side - 1) * (side - 1) >= length) --side;
  return side;
}

std::size_t split_count(const DatasetSpec& s, Split split) {
  switch (split) {
    case Split::Train: return s.train;
    case Split::Val: return s.val;
    case Split::Test: return s.test;
  }
  return 0;
}

SensingOperator sample_operator(const DatasetSpec& spec) {
  const std::size_t n = spec.target.image_size * spec.target.image_size;
  std::size_t m = spec.op.m;
  if (m == 0 && spec.op.kind != OperatorKind::FourierMasked) m = n;
  OperatorOptions options;
  options.column_normalized = spec.op.column_normalized;
  options.keep_fraction = spec.op.keep_fraction;
  return SensingOperator::sample(spec.op.kind, m, n, spec.op.seed, options);
}

}  // namespace

void TargetSpec::validate() const {
  if (image_size == 0) throw ParameterError("target image_size must be positive");
  if (min_blobs > max_blobs) throw ParameterError("target blob count range is empty (min > max)");
  if (!(amplitude_min >= 0.0 && amplitude_min <= amplitude_max)) {
    throw ParameterError("target amplitude range must satisfy 0 <= min <= max");
  }
  if (!(sigma_min > 0.0 && sigma_min <= sigma_max)) {
    throw ParameterError("target sigma range must satisfy 0 < min <= max");
  }
  if (!(support_cutoff >= 0.0 && support_cutoff < 1.0)) {
    throw ParameterError("target support_cutoff must lie in [0, 1)");
  }
}

void DatasetSpec::validate() const {
  target.validate();
  if (train == 0 || val == 0 || test == 0) throw ParameterError("split counts must be >= 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ParameterError("noise_sigma must be finite and non-negative");
  }
  if (op.kind == OperatorKind::Dense) throw ParameterError("dataset operator kind cannot be dense");
}

void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = nlohmann::json{
      {"counts", {{"train", s.train}, {"val", s.val}, {"test", s.test}}},
      {"image_size", s.target.image_size},
      {"target",
       {{"num_blobs", {s.target.min_blobs, s.target.max_blobs}},
        {"amplitude", {s.target.amplitude_min, s.target.amplitude_max}},
        {"sigma", {s.target.sigma_min, s.target.sigma_max}},
        {"support_cutoff", s.target.support_cutoff}}},
      {"operator",
       {{"kind", to_string(s.op.kind)},
        {"m", s.op.m},
        {"seed", s.op.seed},
        {"column_normalized", s.op.column_normalized},
        {"keep_fraction", s.op.keep_fraction}}},
      {"noise_sigma", s.noise_sigma},
      {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
  if (j.contains("counts")) {
    const auto& c = j.at("counts");
    s.train = c.value("train", s.train);
    s.val = c.value("val", s.val);
    s.test = c.value("test", s.test);
  }
  s.target.image_size = j.value("image_size", s.target.image_size);
  if (j.contains("target")) {
    const auto& t = j.at("target");
    if (t.contains("num_blobs")) {
      s.target.min_blobs = t.at("num_blobs").at(0).get<std::size_t>();
      s.target.max_blobs = t.at("num_blobs").at(1).get<std::size_t>();
    }
    if (t.contains("amplitude")) {
      s.target.amplitude_min = t.at("amplitude").at(0).get<double>();
      s.target.amplitude_max = t.at("amplitude").at(1).get<double>();
    }
    if (t.contains("sigma")) {
      s.target.sigma_min = t.at("sigma").at(0).get<double>();
      s.target.sigma_max = t.at("sigma").at(1).get<double>();
    }
    s.target.support_cutoff = t.value("support_cutoff", s.target.support_cutoff);
  }
  if (j.contains("operator")) {
    const auto& o = j.at("operator");
    if (o.contains("kind")) s.op.kind = parse_operator_kind(o.at("kind").get<std::string>());
    s.op.m = o.value("m", s.op.m);
    s.op.seed = o.value("seed", s.op.seed);
    s.op.column_normalized = o.value("column_normalized", s.op.column_normalized);
    s.op.keep_fraction = o.value("keep_fraction", s.op.keep_fraction);
  }
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.seed = j.value("seed", s.seed);
}

Eigen::VectorXd SamplePair::raw_observation() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(raw_length));
  for (std::size_t i = 0; i < raw_length; ++i) v[static_cast<Eigen::Index>(i)] = offset + scale * y[i];
  return v;
}

std::vector<double> render_blobs(std::size_t image_size, const std::vector<Blob>& blobs, double support_cutoff) {
  const std::size_t s = image_size;
  std::vector<double> img(s * s, 0.0);
  for (const auto& b : blobs) {
    const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t c = 0; c < s; ++c) {
        const double dy = static_cast<double>(r) - b.row, dx = static_cast<double>(c) - b.col;
        img[r * s + c] += b.amplitude * std::exp(-(dx * dx + dy * dy) * inv);
      }
    }
  }
  for (auto& v : img) {
    v = std::clamp(v, 0.0, 1.0);
    if (v < support_cutoff) v = 0.0;
  }
  return img;
}

std::vector<double> gen_target(const TargetSpec& spec, std::uint64_t seed) {
  spec.validate();
  const double last = static_cast<double>(spec.image_size - 1);
  Rng rng(seed);
  std::vector<Blob> blobs(rng.index(spec.min_blobs, spec.max_blobs));
  for (auto& b : blobs) {
    b.row = rng.uniform(0.0, last);
    b.col = rng.uniform(0.0, last);
    b.amplitude = rng.uniform(spec.amplitude_min, spec.amplitude_max);
    b.sigma = rng.uniform(spec.sigma_min, spec.sigma_max);
  }
  return render_blobs(spec.image_size, blobs, spec.support_cutoff);
}

ObservationModel::ObservationModel(SensingOperator op) : op_(std::move(op)) {}

std::size_t ObservationModel::side() const { return square_side(raw_length()); }

SensingOperator ObservationModel::effective_operator() const {
  if (!adjoint_domain()) return op_;
  const Eigen::MatrixXd& a = op_.matrix();
  return SensingOperator::from_dense(a.transpose() * a, op_.seed());
}

SamplePair ObservationModel::make_pair(const std::vector<double>& x, double noise_sigma,
                                       std::uint64_t noise_index) const {
  if (x.size() != op_.cols()) {
    throw DimensionError("gen_pair: target has " + std::to_string(x.size()) + " pixels, operator expects n=" +
                         std::to_string(op_.cols()));
  }
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  Eigen::VectorXd raw = op_.apply(xv, noise_sigma, noise_index);
  if (adjoint_domain()) raw = op_.adjoint(raw);

  SamplePair pair;
  pair.x = x;
  pair.raw_length = static_cast<std::size_t>(raw.size());
  const double lo = raw.minCoeff(), hi = raw.maxCoeff();
  if (lo < 0.0 || hi > 1.0) {
    pair.offset = lo;
    pair.scale = hi > lo ? hi - lo : 1.0;
  }
  const std::size_t s = side();
  pair.y.assign(s * s, 0.0);
  for (std::size_t i = 0; i < pair.raw_length; ++i) {
    pair.y[i] = (raw[static_cast<Eigen::Index>(i)] - pair.offset) / pair.scale;
  }
  return pair;
}

SamplePair gen_pair(const ObservationModel& model, const std::vector<double>& x, double noise_sigma,
                    std::uint64_t noise_index) {
  return model.make_pair(x, noise_sigma, noise_index);
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ParameterError("unknown split '" + name + "' (expected train, val or test)");
}

std::uint64_t sample_index(Split split, std::size_t i) {
  return (static_cast<std::uint64_t>(split) + 1) << 40 | static_cast<std::uint64_t>(i);
}

DatasetSpec DatasetManifest::spec() const { return json.at("spec").get<DatasetSpec>(); }

std::size_t DatasetManifest::image_size() const { return json.at("image_size").get<std::size_t>(); }

std::size_t DatasetManifest::observation_side() const {
  return json.at("observation").at("side").get<std::size_t>();
}

std::size_t DatasetManifest::count(Split split) const {
  return json.at("splits").at(to_string(split)).at("count").get<std::size_t>();
}

DatasetManifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  const ObservationModel model(sample_operator(spec));
  std::filesystem::create_directories(dir);
  model.op().save(dir / kOperatorName);

  const std::size_t n = model.op().cols();
  nlohmann::json manifest;
  manifest["format"] = "trust-dataset";
  manifest["version"] = kManifestVersion;
  manifest["image_size"] = spec.target.image_size;
  manifest["spec"] = spec;
  manifest["operator"] = {{"kind", to_string(model.op().kind())},
                          {"m", model.op().rows()},
                          {"n", n},
                          {"seed", model.op().seed()},
                          {"file", kOperatorName}};
  if (model.op().kind() == OperatorKind::FourierMasked) {
    manifest["operator"]["mask_fraction"] =
        static_cast<double>(model.op().mask().size()) / static_cast<double>(n);
  }
  manifest["observation"] = {
      {"domain", model.adjoint_domain() ? "adjoint" : "measurement"},
      {"raw_length", model.raw_length()},
      {"side", model.side()},
      {"padding", "zeros after raw_length, row-major"},
      {"normalization", "raw = offset + scale * y; offset 0 and scale 1 when raw already lies in [0, 1]"}};
  manifest["storage"] = {{"pairs", "consecutive (x, y) images, row-major float32 little-endian"},
                         {"norm", "per sample (offset, scale) float64 little-endian"},
                         {"lossy", "float64 values rounded to float32 on write"}};

  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    const std::size_t count = split_count(spec, split);
    std::vector<SamplePair> pairs(count);
    parallel_for(count, [&](std::size_t i) {
      const std::uint64_t idx = sample_index(split, i);
      const auto x = gen_target(spec.target, derive_seed(spec.seed, streams::kTarget, idx));
      pairs[i] = model.make_pair(x, spec.noise_sigma, derive_seed(spec.seed, streams::kNoise, idx));
    });
    std::string blob, norm;
    for (const auto& p : pairs) {
      io::append_f32_le(blob, p.x);
      io::append_f32_le(blob, p.y);
      const double affine[2] = {p.offset, p.scale};
      io::append_f64_le(norm, affine);
    }
    const std::string name = to_string(split);
    io::write_file(dir / (name + ".bin"), blob);
    io::write_file(dir / (name + ".norm.bin"), norm);
    manifest["splits"][name] = {{"count", count},
                                {"file", name + ".bin"},
                                {"sha256", io::sha256_hex(blob)},
                                {"norm_file", name + ".norm.bin"},
                                {"norm_sha256", io::sha256_hex(norm)}};
  }
  io::write_file(dir / kManifestName, manifest.dump(2) + "\n");
  return load_manifest(dir);
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  if (!std::filesystem::exists(path)) throw IoError("dataset manifest not found: " + path.string());
  DatasetManifest m;
  m.root = dir;
  try {
    m.json = nlohmann::json::parse(io::read_file(path));
    if (m.json.at("format") != "trust-dataset") throw IoError("not a dataset manifest: " + path.string());
    if (m.json.at("version").get<int>() != kManifestVersion) {
      throw IoError("unsupported dataset manifest version in " + path.string());
    }
    (void)m.spec();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset manifest " + path.string() + ": " + e.what());
  }
  return m;
}

std::vector<SamplePair> load_split(const DatasetManifest& manifest, Split split) {
  const auto& entry = manifest.json.at("splits").at(to_string(split));
  auto read_checked = [&](const char* file_key, const char* hash_key) {
    const auto path = manifest.root / entry.at(file_key).get<std::string>();
    const std::string bytes = io::read_file(path);
    if (io::sha256_hex(bytes) != entry.at(hash_key).get<std::string>()) {
      throw IoError("checksum mismatch for " + path.string());
    }
    return bytes;
  };
  const std::string blob = read_checked("file", "sha256");
  const std::string norm_bytes = read_checked("norm_file", "norm_sha256");

  const std::size_t count = entry.at("count").get<std::size_t>();
  const std::size_t nx = manifest.image_size() * manifest.image_size();
  const std::size_t side = manifest.observation_side();
  const std::size_t ny = side * side;
  const auto raw_length = manifest.json.at("observation").at("raw_length").get<std::size_t>();
  if (blob.size() != count * (nx + ny) * 4 || norm_bytes.size() != count * 16) {
    throw IoError("split " + to_string(split) + " size does not match its manifest count");
  }
  const auto values = io::parse_f32_le(blob);
  const auto norm = io::parse_f64_le(norm_bytes);
  std::vector<SamplePair> pairs(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto* base = values.data() + i * (nx + ny);
    pairs[i].x.assign(base, base + nx);
    pairs[i].y.assign(base + nx, base + nx + ny);
    pairs[i].offset = norm[2 * i];
    pairs[i].scale = norm[2 * i + 1];
    pairs[i].raw_length = raw_length;
  }
  return pairs;
}

SensingOperator load_dataset_operator(const DatasetManifest& manifest) {
  return SensingOperator::load(manifest.root / manifest.json.at("operator").at("file").get<std::string>());
}

}  // namespace trust
