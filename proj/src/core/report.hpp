#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace trust {

/// Provenance written as run.json next to the outputs of every command.
struct RunRecord {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::string input_hash;
  nlohmann::json outputs = nlohmann::json::object();
  double duration_seconds = 0.0;
  int exit_status = 0;

  nlohmann::json to_json() const;
};

/// Git-style content hash over the resolved configuration and the given input files or
/// directories (each file hashed as a git blob, then combined as a sorted listing).
std::string hash_inputs(const nlohmann::json& config, const std::vector<std::filesystem::path>& inputs);

void write_run_record(const std::filesystem::path& dir, const RunRecord& record);

struct ReportRow {
  std::string run;
  std::string command;
  std::string model;
  std::optional<std::size_t> param_count;
  std::size_t count = 0;
  // mean and population std per metric, in column order mse, mae, psnr, ssim, fpr
  std::vector<std::pair<double, double>> metrics;
};

struct ComparisonTable {
  std::vector<ReportRow> rows;

  std::string to_markdown() const;
  std::string to_csv() const;
};

/// One row per immediate subdirectory of `runs_dir` whose run.json points at a metrics report.
ComparisonTable build_report(const std::filesystem::path& runs_dir);

}  // namespace trust
