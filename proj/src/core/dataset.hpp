#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sensing.hpp"

namespace trust {

/// Gaussian-blob targets on a zero background.
struct TargetSpec {
  std::size_t image_size = 32;
  std::size_t min_blobs = 1;
  std::size_t max_blobs = 5;
  double amplitude_min = 0.5;
  double amplitude_max = 1.0;
  double sigma_min = 0.5;
  double sigma_max = 1.5;
  /// Pixels below this value are set to exactly zero so targets have finite support.
  double support_cutoff = 1e-3;

  void validate() const;
};

struct OperatorSpec {
  OperatorKind kind = OperatorKind::Gaussian;
  std::size_t m = 0;  // 0 means n (square); FourierMasked derives it from keep_fraction
  std::uint64_t seed = 0;
  bool column_normalized = false;
  double keep_fraction = 0.25;
};

struct DatasetSpec {
  std::size_t train = 2000;
  std::size_t val = 400;
  std::size_t test = 400;
  TargetSpec target;
  OperatorSpec op;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, DatasetSpec& s);

/// Target and observation images plus the affine map back to the raw observation.
struct SamplePair {
  std::vector<double> x;  // image_size^2, in [0, 1]
  std::vector<double> y;  // observation_side^2, in [0, 1]; zero padding past the raw length
  double offset = 0.0;
  double scale = 1.0;
  std::size_t raw_length = 0;

  /// offset + scale * y over the first raw_length entries.
  Eigen::VectorXd raw_observation() const;
};

struct Blob {
  double row = 0.0;
  double col = 0.0;
  double amplitude = 1.0;
  double sigma = 1.0;
};

/// Sum of isotropic Gaussians, clipped to [0, 1], with values below support_cutoff zeroed.
std::vector<double> render_blobs(std::size_t image_size, const std::vector<Blob>& blobs, double support_cutoff);

std::vector<double> gen_target(const TargetSpec& spec, std::uint64_t seed);

/// Maps a target to the raw observation vector. FourierMasked observations are the
/// zero-filled image-domain reconstruction A^T(Ax + w); other kinds are Ax + w.
class ObservationModel {
 public:
  explicit ObservationModel(SensingOperator op);

  const SensingOperator& op() const { return op_; }
  bool adjoint_domain() const { return op_.kind() == OperatorKind::FourierMasked; }
  std::size_t raw_length() const { return adjoint_domain() ? op_.cols() : op_.rows(); }
  /// Side of the zero-padded square observation image.
  std::size_t side() const;
  /// Noiseless linear map x -> raw observation as an explicit matrix (A or A^T A).
  SensingOperator effective_operator() const;

  SamplePair make_pair(const std::vector<double>& x, double noise_sigma, std::uint64_t noise_index) const;

 private:
  SensingOperator op_;
};

/// y = normalize(reshape(A vec(x) + w)); raises DimensionError when n != image_size^2.
SamplePair gen_pair(const ObservationModel& model, const std::vector<double>& x, double noise_sigma,
                    std::uint64_t noise_index = 0);

enum class Split { Train, Val, Test };
std::string to_string(Split split);
Split parse_split(const std::string& name);

/// Per-sample seeds: target stream and noise index are tagged by split, so splits never share seeds.
std::uint64_t sample_index(Split split, std::size_t i);

struct DatasetManifest {
  nlohmann::json json;
  std::filesystem::path root;

  DatasetSpec spec() const;
  std::size_t image_size() const;
  std::size_t observation_side() const;
  std::size_t count(Split split) const;
};

/// Writes manifest.json, operator.json(+.bin), and per split <split>.bin and <split>.norm.bin.
DatasetManifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir);
/// Reads manifest.json; IoError when absent or malformed.
DatasetManifest load_manifest(const std::filesystem::path& dir);
/// Verifies checksums (IoError naming the file) and decodes all pairs of a split.
std::vector<SamplePair> load_split(const DatasetManifest& manifest, Split split);
SensingOperator load_dataset_operator(const DatasetManifest& manifest);

}  // namespace trust
