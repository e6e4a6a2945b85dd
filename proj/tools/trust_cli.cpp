#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trust/trust.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ApiError : std::runtime_error {
  ApiError(trust_status s, const std::string& what) : std::runtime_error(what), status(s) {}
  trust_status status;
};

void check(trust_status s, const char* call) {
  if (s != TRUST_OK) throw ApiError(s, std::string(call) + ": " + trust_last_error());
}

std::string take(char* s) {
  std::string out = s ? s : "";
  trust_string_free(s);
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
}

std::string hash_inputs(const json& config, const std::vector<std::string>& paths) {
  std::vector<const char*> ptrs;
  for (const auto& p : paths) ptrs.push_back(p.c_str());
  char* hash = nullptr;
  check(trust_hash_inputs(config.dump().c_str(), ptrs.data(), ptrs.size(), &hash), "trust_hash_inputs");
  return take(hash);
}

void require_dataset(const std::string& dir) {
  if (dir.empty() || !fs::exists(fs::path(dir) / "manifest.json")) {
    throw UsageError("dataset not found: " + (dir.empty() ? std::string("(none given)") : dir));
  }
}

json dataset_manifest(const std::string& dir) {
  require_dataset(dir);
  char* text = nullptr;
  check(trust_dataset_verify(dir.c_str(), &text), "trust_dataset_verify");
  return json::parse(take(text));
}

/// Shared run bookkeeping: resolved config, outputs, timing, run.json.
struct Run {
  std::string command;
  json config = json::object();
  json outputs = json::object();
  std::vector<std::string> inputs;
  fs::path dir;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void finish(int status) const {
    if (dir.empty()) return;
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json record = {{"command", command},
                   {"config", config},
                   {"input_hash", hash_inputs(config, inputs)},
                   {"outputs", outputs},
                   {"duration_seconds", seconds},
                   {"exit_status", status}};
    write_text(dir / "run.json", record.dump(2) + "\n");
  }
};

template <class T>
void override_if(CLI::App* app, const char* flag, json& j, const char* key, const T& value) {
  if (app->count(flag) > 0) j[key] = value;
}

int run_gen_data(const std::string& manifest_path, const std::string& out, const json& flags) {
  Run run;
  run.command = "gen-data";
  json spec = manifest_path.empty() ? json::object() : read_json_file(manifest_path);
  for (const auto& [k, v] : flags.items()) {
    if (v.is_object()) {
      for (const auto& [k2, v2] : v.items()) spec[k][k2] = v2;
    } else {
      spec[k] = v;
    }
  }
  if (out.empty()) throw UsageError("gen-data needs --out");
  run.config = spec;
  run.dir = out;
  char* manifest = nullptr;
  check(trust_dataset_generate(spec.dump().c_str(), out.c_str(), &manifest), "trust_dataset_generate");
  const json m = json::parse(take(manifest));
  run.config = m.at("spec");
  run.outputs = {{"manifest", "manifest.json"}, {"operator", "operator.json"}};
  for (const auto& [split, entry] : m.at("splits").items()) {
    run.outputs[split] = entry.at("file");
    run.outputs[split + "_norm"] = entry.at("norm_file");
  }
  run.finish(kExitOk);
  std::cout << "dataset written to " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse recovery toolkit: data generation, bound verification, solvers, training, evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(trust_version()));

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic observation/target dataset");
  std::string gen_manifest, gen_out;
  std::size_t gen_train = 0, gen_val = 0, gen_test = 0, gen_image = 0, gen_m = 0;
  std::uint64_t gen_seed = 0, gen_op_seed = 0;
  std::string gen_operator;
  double gen_keep = 0.0, gen_noise = 0.0;
  bool gen_colnorm = false;
  gen->add_option("--manifest,--config", gen_manifest, "JSON dataset spec; flags override it");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Global seed");
  gen->add_option("--train", gen_train, "Train pairs");
  gen->add_option("--val", gen_val, "Validation pairs");
  gen->add_option("--test", gen_test, "Test pairs");
  gen->add_option("--image-size", gen_image, "Target side length");
  gen->add_option("--operator", gen_operator, "identity|orthonormal|tall|gaussian|fourier");
  gen->add_option("--m", gen_m, "Measurement count (0 = square)");
  gen->add_option("--keep", gen_keep, "Fourier keep fraction");
  gen->add_option("--noise", gen_noise, "Measurement noise sigma");
  gen->add_option("--operator-seed", gen_op_seed, "Operator seed");
  gen->add_flag("--column-normalized", gen_colnorm, "Unit-norm Gaussian columns");

  // verify-bound
  auto* vb = app.add_subcommand("verify-bound", "Check attention-similarity deviation against the RIP constant");
  std::string vb_config, vb_grid, vb_kinds, vb_out;
  std::size_t vb_trials = 100, vb_cap = 1000000, vb_budget = 20000;
  std::uint64_t vb_seed = 0;
  bool vb_colnorm = false;
  vb->add_option("--config", vb_config, "JSON sweep config; flags override it");
  vb->add_option("--grid", vb_grid, "Cells as MxNxK[,MxNxK...]");
  vb->add_option("--kinds", vb_kinds, "Comma-separated operator kinds");
  vb->add_option("--trials", vb_trials, "Random pairs per cell");
  vb->add_option("--seed", vb_seed, "Sweep seed");
  vb->add_option("--cap", vb_cap, "Largest support count enumerated exactly");
  vb->add_option("--budget", vb_budget, "Monte-Carlo vectors when enumeration is refused");
  vb->add_flag("--column-normalized", vb_colnorm, "Unit-norm Gaussian columns");
  vb->add_option("--out", vb_out, "CSV output path")->required();

  // solve
  auto* sv = app.add_subcommand("solve", "Classical sparse recovery over a dataset split");
  std::string sv_config, sv_method = "omp", sv_dataset, sv_operator = "known", sv_split = "test", sv_out;
  std::size_t sv_sparsity = 0, sv_iters = 1000;
  double sv_lambda = 0.0, sv_tol = 1e-6, sv_ridge = 0.0;
  sv->add_option("--config", sv_config, "JSON solver config; flags override it");
  sv->add_option("--method", sv_method, "omp|ista|fista");
  sv->add_option("--dataset", sv_dataset, "Dataset directory");
  sv->add_option("--operator", sv_operator, "known|estimated");
  sv->add_option("--split", sv_split, "train|val|test");
  sv->add_option("--sparsity", sv_sparsity, "OMP atom budget (0 = min(m, n))");
  sv->add_option("--lambda", sv_lambda, "l1 weight for ISTA/FISTA");
  sv->add_option("--max-iter", sv_iters, "Iteration cap");
  sv->add_option("--tol", sv_tol, "OMP residual tolerance");
  sv->add_option("--ridge", sv_ridge, "Ridge weight for operator estimation");
  sv->add_option("--out", sv_out, "Output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a reconstruction network");
  std::string tr_config, tr_model = "trust", tr_dataset, tr_loss, tr_skips = "all", tr_out, tr_model_config;
  double tr_lr = 1e-4, tr_l1 = 0.1, tr_lssim = 0.5;
  std::size_t tr_epochs = 20, tr_batch = 16;
  std::uint64_t tr_seed = 0;
  tr->add_option("--config", tr_config, "JSON training config; flags override it");
  tr->add_option("--model", tr_model, "trust|unet");
  tr->add_option("--model-config", tr_model_config, "JSON model spec file");
  tr->add_option("--dataset", tr_dataset, "Dataset directory");
  tr->add_option("--loss", tr_loss, "l2|l2l1|l2ssim");
  tr->add_option("--skips", tr_skips, "all|none|bit mask such as 10");
  tr->add_option("--lr", tr_lr, "Adam learning rate");
  tr->add_option("--epochs", tr_epochs, "Epochs");
  tr->add_option("--batch", tr_batch, "Batch size");
  tr->add_option("--seed", tr_seed, "Initialization and shuffle seed");
  tr->add_option("--lambda-l1", tr_l1, "Weight of the l1 term");
  tr->add_option("--lambda-ssim", tr_lssim, "Weight of the SSIM term");
  tr->add_option("--out", tr_out, "Output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::string ev_ckpt, ev_dataset, ev_split = "test", ev_out, ev_images;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint manifest")->required();
  ev->add_option("--dataset", ev_dataset, "Dataset directory");
  ev->add_option("--split", ev_split, "train|val|test");
  ev->add_option("--emit-images", ev_images, "Directory for PGM triplets (y, x, xhat)");
  ev->add_option("--out", ev_out, "Output directory")->required();

  // report
  auto* rp = app.add_subcommand("report", "Comparison table over run directories");
  std::string rp_runs, rp_out;
  rp->add_option("--runs", rp_runs, "Directory of run directories")->required();
  rp->add_option("--out", rp_out, "Output directory (default: the runs directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) {
      json flags = json::object();
      override_if(gen, "--seed", flags, "seed", gen_seed);
      if (gen->count("--train")) flags["counts"]["train"] = gen_train;
      if (gen->count("--val")) flags["counts"]["val"] = gen_val;
      if (gen->count("--test")) flags["counts"]["test"] = gen_test;
      override_if(gen, "--image-size", flags, "image_size", gen_image);
      override_if(gen, "--noise", flags, "noise_sigma", gen_noise);
      if (gen->count("--operator")) flags["operator"]["kind"] = gen_operator;
      if (gen->count("--m")) flags["operator"]["m"] = gen_m;
      if (gen->count("--keep")) flags["operator"]["keep_fraction"] = gen_keep;
      if (gen->count("--operator-seed")) flags["operator"]["seed"] = gen_op_seed;
      if (gen_colnorm) flags["operator"]["column_normalized"] = true;
      return run_gen_data(gen_manifest, gen_out, flags);
    }

    if (*vb) {
      Run run;
      run.command = "verify-bound";
      json c = vb_config.empty() ? json::object() : read_json_file(vb_config);
      override_if(vb, "--grid", c, "grid", vb_grid);
      override_if(vb, "--trials", c, "trials", vb_trials);
      override_if(vb, "--seed", c, "seed", vb_seed);
      override_if(vb, "--cap", c, "enumeration_cap", vb_cap);
      override_if(vb, "--budget", c, "monte_carlo_budget", vb_budget);
      if (vb_colnorm) c["column_normalized"] = true;
      if (vb->count("--kinds")) {
        c["kinds"] = json::array();
        std::stringstream ss(vb_kinds);
        for (std::string k; std::getline(ss, k, ',');) {
          if (!k.empty()) c["kinds"].push_back(k);
        }
      }
      if (!c.contains("grid")) throw UsageError("verify-bound needs --grid");
      run.config = c;
      char* csv = nullptr;
      int violation = 0;
      check(trust_verify_bound(c.dump().c_str(), &csv, &violation), "trust_verify_bound");
      const fs::path out(vb_out);
      write_text(out, take(csv));
      run.dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
      run.outputs = {{"csv", out.filename().string()}, {"violation", violation != 0}};
      const int status = violation ? kExitFailure : kExitOk;
      run.finish(status);
      std::cout << (violation ? "bound violated in at least one exact-delta cell\n" : "bound holds in every cell\n");
      return status;
    }

    if (*sv) {
      Run run;
      run.command = "solve";
      json c = sv_config.empty() ? json::object() : read_json_file(sv_config);
      override_if(sv, "--method", c, "method", sv_method);
      override_if(sv, "--dataset", c, "dataset", sv_dataset);
      override_if(sv, "--operator", c, "operator", sv_operator);
      override_if(sv, "--split", c, "split", sv_split);
      override_if(sv, "--sparsity", c, "sparsity", sv_sparsity);
      override_if(sv, "--lambda", c, "lambda", sv_lambda);
      override_if(sv, "--max-iter", c, "max_iterations", sv_iters);
      override_if(sv, "--tol", c, "residual_tolerance", sv_tol);
      override_if(sv, "--ridge", c, "ridge", sv_ridge);
      if (!c.contains("method")) c["method"] = sv_method;
      if (!c.contains("operator")) c["operator"] = sv_operator;
      if (!c.contains("split")) c["split"] = sv_split;
      const std::string dataset = c.value("dataset", std::string());
      require_dataset(dataset);
      run.config = c;
      run.dir = sv_out;
      run.inputs = {dataset};
      char* report = nullptr;
      char* rows = nullptr;
      check(trust_solve_dataset(dataset.c_str(), c.dump().c_str(), sv_out.c_str(), &report, &rows),
            "trust_solve_dataset");
      take(rows);
      const json r = json::parse(take(report));
      run.outputs = {{"metrics_json", "metrics.json"},
                     {"metrics_csv", "metrics.csv"},
                     {"reconstructions", "reconstructions.bin"}};
      run.finish(kExitOk);
      std::printf("psnr %.4f dB, ssim %.4f over %zu images\n", r["metrics"]["psnr"]["mean"].get<double>(),
                  r["metrics"]["ssim"]["mean"].get<double>(), r["count"].get<std::size_t>());
      return kExitOk;
    }

    if (*tr) {
      Run run;
      run.command = "train";
      json c = tr_config.empty() ? json::object() : read_json_file(tr_config);
      override_if(tr, "--model", c, "model", tr_model);
      override_if(tr, "--dataset", c, "dataset", tr_dataset);
      override_if(tr, "--loss", c, "loss", tr_loss);
      override_if(tr, "--skips", c, "skips", tr_skips);
      override_if(tr, "--lr", c, "learning_rate", tr_lr);
      override_if(tr, "--epochs", c, "epochs", tr_epochs);
      override_if(tr, "--batch", c, "batch_size", tr_batch);
      override_if(tr, "--seed", c, "seed", tr_seed);
      override_if(tr, "--lambda-l1", c, "lambda_l1", tr_l1);
      override_if(tr, "--lambda-ssim", c, "lambda_ssim", tr_lssim);
      if (!c.contains("model")) c["model"] = tr_model;
      const std::string dataset = c.value("dataset", std::string());
      const json manifest = dataset_manifest(dataset);
      const std::size_t image = manifest.at("image_size").get<std::size_t>();
      const std::size_t side = manifest.at("observation").at("side").get<std::size_t>();

      json spec = tr_model_config.empty() ? json::object() : read_json_file(tr_model_config);
      spec["kind"] = c.at("model");
      const std::uint64_t seed = c.value("seed", std::uint64_t{0});
      if (spec["kind"] == "unet") {
        if (side != image) throw UsageError("unet needs observations with the target geometry");
        spec["unet"]["image_size"] = image;
        spec["unet"]["seed"] = seed;
      } else {
        spec["trust"]["image_size"] = image;
        spec["trust"]["input_size"] = side;
        spec["trust"]["seed"] = seed;
        const std::string mask = c.value("skips", std::string("all"));
        json skips = spec["trust"].contains("skips") ? spec["trust"]["skips"]
                                                     : json::array({{{"block", 4}, {"stage", 1}},
                                                                    {{"block", 2}, {"stage", 3}}});
        if (mask == "none" || mask == "all") {
          for (auto& s : skips) s["enabled"] = mask == "all";
        } else {
          if (mask.size() != skips.size() || mask.find_first_not_of("01") != std::string::npos) {
            throw UsageError("--skips must be all, none, or " + std::to_string(skips.size()) + " bits");
          }
          for (std::size_t i = 0; i < skips.size(); ++i) skips[i]["enabled"] = mask[i] == '1';
        }
        spec["trust"]["skips"] = skips;
      }
      c["model_spec"] = spec;
      run.config = c;
      run.dir = tr_out;
      run.inputs = {dataset};
      trust_model* model = nullptr;
      check(trust_model_create(spec.dump().c_str(), &model), "trust_model_create");
      char* log = nullptr;
      std::cout << "epoch,train_loss,val_loss,val_ssim,val_psnr,val_fpr" << std::endl;
      const auto print_row = [](const char* row, void*) { std::cout << row << std::flush; };
      const trust_status s =
          trust_model_train(model, dataset.c_str(), c.dump().c_str(), tr_out.c_str(), print_row, nullptr, &log);
      trust_model_free(model);
      check(s, "trust_model_train");
      take(log);
      std::size_t params = 0;
      check(trust_model_param_count(spec.dump().c_str(), &params, nullptr), "trust_model_param_count");
      run.outputs = {{"best", "best.ckpt"}, {"last", "last.ckpt"}, {"epoch_log", "epochs.csv"},
                     {"param_count", params}};
      run.finish(kExitOk);
      return kExitOk;
    }

    if (*ev) {
      Run run;
      run.command = "eval";
      require_dataset(ev_dataset);
      if (!fs::exists(ev_ckpt)) throw UsageError("checkpoint not found: " + ev_ckpt);
      trust_model* model = nullptr;
      check(trust_model_load(ev_ckpt.c_str(), &model), "trust_model_load");
      char* spec_text = nullptr;
      const trust_status spec_status = trust_model_spec(model, &spec_text);
      const json spec = spec_status == TRUST_OK ? json::parse(take(spec_text)) : json::object();
      json options = {{"split", ev_split}};
      if (!ev_images.empty()) options["emit_images"] = ev_images;
      char* report = nullptr;
      char* rows = nullptr;
      const trust_status s =
          trust_model_evaluate(model, ev_dataset.c_str(), options.dump().c_str(), &report, &rows);
      trust_model_free(model);
      check(spec_status, "trust_model_spec");
      check(s, "trust_model_evaluate");
      const std::string report_text = take(report);
      write_text(fs::path(ev_out) / "metrics.json", report_text);
      write_text(fs::path(ev_out) / "metrics.csv", take(rows));
      std::size_t params = 0;
      check(trust_model_param_count(spec.dump().c_str(), &params, nullptr), "trust_model_param_count");
      run.config = {{"checkpoint", ev_ckpt}, {"dataset", ev_dataset}, {"split", ev_split},
                    {"model", spec.at("kind")}, {"model_spec", spec}};
      if (!ev_images.empty()) run.config["emit_images"] = ev_images;
      run.dir = ev_out;
      run.inputs = {ev_ckpt, ev_dataset};
      run.outputs = {{"metrics_json", "metrics.json"}, {"metrics_csv", "metrics.csv"}, {"param_count", params}};
      run.finish(kExitOk);
      const json r = json::parse(report_text);
      std::printf("psnr %.4f dB, ssim %.4f, fpr %.6f over %zu images\n",
                  r["metrics"]["psnr"]["mean"].get<double>(), r["metrics"]["ssim"]["mean"].get<double>(),
                  r["metrics"]["fpr"]["mean"].get<double>(), r["count"].get<std::size_t>());
      return kExitOk;
    }

    if (*rp) {
      if (!fs::is_directory(rp_runs)) throw UsageError("runs directory not found: " + rp_runs);
      char* md = nullptr;
      char* csv = nullptr;
      std::size_t rows = 0;
      check(trust_report_runs(rp_runs.c_str(), &md, &csv, &rows), "trust_report_runs");
      const std::string markdown = take(md), table = take(csv);
      if (rows == 0) {
        std::cerr << "no runs with metrics under " << rp_runs << "\n";
        return kExitFailure;
      }
      const fs::path out = rp_out.empty() ? fs::path(rp_runs) : fs::path(rp_out);
      write_text(out / "report.md", markdown);
      write_text(out / "report.csv", table);
      std::cout << markdown;
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ApiError& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.status) {
      case TRUST_ERROR_PARAMETER:
      case TRUST_ERROR_DIMENSION:
      case TRUST_ERROR_CONTRACT:
      case TRUST_ERROR_IO:
        return kExitUsage;
      default:
        return kExitFailure;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
