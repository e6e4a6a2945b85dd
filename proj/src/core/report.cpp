#include "report.hpp"

#include <algorithm>
#include <cstdio>

#include "error.hpp"
#include "io.hpp"

namespace trust {

namespace {

constexpr const char* kMetricKeys[] = {"mse", "mae", "psnr", "ssim", "fpr"};
constexpr const char* kMetricTitles[] = {"MSE", "MAE", "PSNR", "SSIM", "FPR"};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::vector<std::filesystem::path> expand(const std::filesystem::path& p) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(p)) {
    for (const auto& e : std::filesystem::recursive_directory_iterator(p)) {
      if (e.is_regular_file() && e.path().filename() != "run.json") files.push_back(e.path());
    }
  } else if (std::filesystem::is_regular_file(p)) {
    files.push_back(p);
  } else {
    throw IoError("input not found: " + p.string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

nlohmann::json RunRecord::to_json() const {
  return {{"command", command},       {"config", config},
          {"input_hash", input_hash}, {"outputs", outputs},
          {"duration_seconds", duration_seconds}, {"exit_status", exit_status}};
}

std::string hash_inputs(const nlohmann::json& config, const std::vector<std::filesystem::path>& inputs) {
  std::string listing = "config " + io::git_blob_hash(config.dump()) + "\n";
  for (const auto& input : inputs) {
    for (const auto& f : expand(input)) {
      const auto rel = std::filesystem::is_directory(input) ? f.lexically_relative(input) : f.filename();
      listing += rel.generic_string() + " " + io::git_blob_hash(io::read_file(f)) + "\n";
    }
  }
  return io::git_blob_hash(listing);
}

void write_run_record(const std::filesystem::path& dir, const RunRecord& record) {
  io::write_file(dir / "run.json", record.to_json().dump(2) + "\n");
}

std::string ComparisonTable::to_markdown() const {
  std::string out = "| run | command | model | params | n |";
  for (const char* t : kMetricTitles) out += std::string(" ") + t + " |";
  out += "\n|---|---|---|---:|---:|";
  for (std::size_t i = 0; i < std::size(kMetricTitles); ++i) out += "---:|";
  out += "\n";
  for (const auto& r : rows) {
    out += "| " + r.run + " | " + r.command + " | " + r.model + " | " +
           (r.param_count ? std::to_string(*r.param_count) : "-") + " | " + std::to_string(r.count) + " |";
    for (const auto& [mean, sd] : r.metrics) out += " " + fmt(mean) + " ± " + fmt(sd) + " |";
    out += "\n";
  }
  return out;
}

std::string ComparisonTable::to_csv() const {
  std::string out = "run,command,model,param_count,count";
  for (const char* k : kMetricKeys) out += std::string(",") + k + "_mean," + k + "_std";
  out += "\n";
  char buf[64];
  for (const auto& r : rows) {
    out += r.run + "," + r.command + "," + r.model + "," + (r.param_count ? std::to_string(*r.param_count) : "") +
           "," + std::to_string(r.count);
    for (const auto& [mean, sd] : r.metrics) {
      std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", mean, sd);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

ComparisonTable build_report(const std::filesystem::path& runs_dir) {
  if (!std::filesystem::is_directory(runs_dir)) throw IoError("runs directory not found: " + runs_dir.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(runs_dir)) {
    if (e.is_directory() && std::filesystem::exists(e.path() / "run.json")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  ComparisonTable table;
  for (const auto& dir : dirs) {
    nlohmann::json run;
    try {
      run = nlohmann::json::parse(io::read_file(dir / "run.json"));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed run record " + (dir / "run.json").string() + ": " + e.what());
    }
    const auto& outputs = run.value("outputs", nlohmann::json::object());
    if (!outputs.contains("metrics_json")) continue;
    const auto metrics =
        nlohmann::json::parse(io::read_file(dir / outputs.at("metrics_json").get<std::string>()));
    ReportRow row;
    row.run = dir.filename().string();
    row.command = run.value("command", std::string());
    const auto& config = run.value("config", nlohmann::json::object());
    row.model = config.value("model", config.value("method", std::string("-")));
    if (outputs.contains("param_count")) row.param_count = outputs.at("param_count").get<std::size_t>();
    row.count = metrics.at("count").get<std::size_t>();
    for (const char* k : kMetricKeys) {
      const auto& m = metrics.at("metrics").at(k);
      row.metrics.emplace_back(m.at("mean").get<double>(), m.at("std").get<double>());
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace trust
