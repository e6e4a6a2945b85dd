#include "trust/trust.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "core/bound_lab.hpp"
#include "core/dataset.hpp"
#include "core/error.hpp"
#include "core/io.hpp"
#include "core/metrics.hpp"
#include "core/model.hpp"
#include "core/parallel.hpp"
#include "core/report.hpp"
#include "core/sensing.hpp"
#include "core/solvers.hpp"
#include "core/training.hpp"

struct trust_operator {
  trust::SensingOperator op;
};

struct trust_model {
  trust::ModelSpec spec;
  trust::ModelParams params;
};

namespace {

thread_local std::string last_error;

trust_status status_of(trust::ErrorKind kind) {
  switch (kind) {
    case trust::ErrorKind::Dimension: return TRUST_ERROR_DIMENSION;
    case trust::ErrorKind::Parameter: return TRUST_ERROR_PARAMETER;
    case trust::ErrorKind::Contract: return TRUST_ERROR_CONTRACT;
    case trust::ErrorKind::Io: return TRUST_ERROR_IO;
    case trust::ErrorKind::Numeric: return TRUST_ERROR_NUMERIC;
    case trust::ErrorKind::Singular: return TRUST_ERROR_SINGULAR;
    case trust::ErrorKind::Refused: return TRUST_ERROR_REFUSED;
  }
  return TRUST_ERROR_INTERNAL;
}

template <class Fn>
trust_status guarded(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return TRUST_OK;
  } catch (const trust::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    last_error = std::string("invalid JSON: ") + e.what();
    return TRUST_ERROR_PARAMETER;
  } catch (const std::filesystem::filesystem_error& e) {
    last_error = e.what();
    return TRUST_ERROR_IO;
  } catch (const std::exception& e) {
    last_error = e.what();
    return TRUST_ERROR_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return TRUST_ERROR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put(char** out, const std::string& s) {
  if (out != nullptr) *out = dup_string(s);
}

template <class T>
void require(const T* p, const char* what) {
  if (p == nullptr) throw trust::ParameterError(std::string(what) + " must not be NULL");
}

nlohmann::json parse_config(const char* text) {
  if (text == nullptr || *text == '\0') return nlohmann::json::object();
  auto j = nlohmann::json::parse(text);
  if (!j.is_object()) throw trust::ParameterError("configuration must be a JSON object");
  return j;
}

void check_length(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw trust::DimensionError(std::string(what) + " has length " + std::to_string(got) + ", expected " +
                                std::to_string(want));
  }
}

trust::SolverConfig solver_config(const nlohmann::json& j) {
  trust::SolverConfig c;
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.residual_tolerance = j.value("residual_tolerance", c.residual_tolerance);
  c.sparsity = j.value("sparsity", c.sparsity);
  if (j.contains("lambda") && !j.at("lambda").is_null()) c.lambda = j.at("lambda").get<double>();
  c.change_tolerance = j.value("change_tolerance", c.change_tolerance);
  c.seed = j.value("seed", c.seed);
  return c;
}

trust::RecoveryResult run_solver(const std::string& method, const trust::SensingOperator& op,
                                 const Eigen::VectorXd& y, const trust::SolverConfig& c) {
  if (method == "omp") return trust::omp(op, y, c);
  if (method == "ista") return trust::ista(op, y, c);
  if (method == "fista") return trust::fista(op, y, c);
  throw trust::ParameterError("unknown solver method '" + method + "' (expected omp, ista or fista)");
}

void write_metric_files(const std::filesystem::path& dir, const trust::MetricReport& report) {
  trust::io::write_file(dir / "metrics.json", report.to_json());
  trust::io::write_file(dir / "metrics.csv", report.to_csv());
}

}  // namespace

extern "C" {

const char* trust_version(void) { return "0.1.0"; }

const char* trust_last_error(void) { return last_error.c_str(); }

void trust_string_free(char* s) { std::free(s); }

trust_status trust_operator_sample(const char* kind, size_t m, size_t n, uint64_t seed, const char* options_json,
                                   trust_operator** out) {
  return guarded([&] {
    require(kind, "kind");
    require(out, "out");
    const auto j = parse_config(options_json);
    trust::OperatorOptions options;
    options.column_normalized = j.value("column_normalized", options.column_normalized);
    options.keep_fraction = j.value("keep_fraction", options.keep_fraction);
    auto op = trust::SensingOperator::sample(trust::parse_operator_kind(kind), m, n, seed, options);
    *out = new trust_operator{std::move(op)};
  });
}

trust_status trust_operator_load(const char* path, trust_operator** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new trust_operator{trust::SensingOperator::load(path)};
  });
}

trust_status trust_operator_save(const trust_operator* op, const char* path) {
  return guarded([&] {
    require(op, "operator");
    require(path, "path");
    op->op.save(path);
  });
}

void trust_operator_free(trust_operator* op) { delete op; }

trust_status trust_operator_shape(const trust_operator* op, size_t* m, size_t* n) {
  return guarded([&] {
    require(op, "operator");
    if (m) *m = op->op.rows();
    if (n) *n = op->op.cols();
  });
}

trust_status trust_operator_apply(const trust_operator* op, const double* x, size_t n, double noise_sigma,
                                  uint64_t noise_index, double* y, size_t m) {
  return guarded([&] {
    require(op, "operator");
    require(x, "x");
    require(y, "y");
    check_length(n, op->op.cols(), "x");
    check_length(m, op->op.rows(), "y");
    const Eigen::VectorXd r =
        op->op.apply(Eigen::Map<const Eigen::VectorXd>(x, static_cast<Eigen::Index>(n)), noise_sigma, noise_index);
    Eigen::Map<Eigen::VectorXd>(y, static_cast<Eigen::Index>(m)) = r;
  });
}

trust_status trust_operator_adjoint(const trust_operator* op, const double* r, size_t m, double* out, size_t n) {
  return guarded([&] {
    require(op, "operator");
    require(r, "r");
    require(out, "out");
    check_length(m, op->op.rows(), "r");
    check_length(n, op->op.cols(), "out");
    Eigen::Map<Eigen::VectorXd>(out, static_cast<Eigen::Index>(n)) =
        op->op.adjoint(Eigen::Map<const Eigen::VectorXd>(r, static_cast<Eigen::Index>(m)));
  });
}

trust_status trust_operator_rip(const trust_operator* op, size_t k, const char* method, size_t budget, uint64_t seed,
                                char** json_out) {
  return guarded([&] {
    require(op, "operator");
    const std::string name = method ? method : "exact";
    trust::RipMethod rm;
    if (name == "exact") {
      rm = trust::RipMethod::ExactEnumeration;
    } else if (name == "montecarlo" || name == "monte_carlo") {
      rm = trust::RipMethod::MonteCarlo;
    } else {
      throw trust::ParameterError("unknown RIP method '" + name + "' (expected exact or montecarlo)");
    }
    const auto est = trust::estimate_rip(op->op, k, rm, budget, seed);
    const nlohmann::json j = {{"order", est.order},
                              {"delta", est.delta},
                              {"method", est.method == trust::RipMethod::ExactEnumeration ? "exact" : "montecarlo"},
                              {"evaluated", est.evaluated},
                              {"lower_bound", est.lower_bound}};
    put(json_out, j.dump());
  });
}

trust_status trust_solve(const trust_operator* op, const double* y, size_t m, const char* config_json, double* x_out,
                         size_t n, char** info_json_out) {
  return guarded([&] {
    require(op, "operator");
    require(y, "y");
    require(x_out, "x_out");
    check_length(m, op->op.rows(), "y");
    check_length(n, op->op.cols(), "x_out");
    const auto j = parse_config(config_json);
    const auto result = run_solver(j.value("method", std::string("omp")), op->op,
                                   Eigen::Map<const Eigen::VectorXd>(y, static_cast<Eigen::Index>(m)),
                                   solver_config(j));
    Eigen::Map<Eigen::VectorXd>(x_out, static_cast<Eigen::Index>(n)) = result.x;
    put(info_json_out, result.to_json());
  });
}

trust_status trust_solve_dataset(const char* dataset_dir, const char* config_json, const char* out_dir,
                                 char** report_json_out, char** per_image_csv_out) {
  return guarded([&] {
    require(dataset_dir, "dataset_dir");
    require(out_dir, "out_dir");
    const auto j = parse_config(config_json);
    const std::string method = j.value("method", std::string("omp"));
    const std::string which = j.value("operator", std::string("known"));
    const auto split = trust::parse_split(j.value("split", std::string("test")));
    const auto manifest = trust::load_manifest(dataset_dir);
    const trust::ObservationModel model(trust::load_dataset_operator(manifest));

    trust::SensingOperator op = model.effective_operator();
    if (which == "estimated") {
      std::vector<trust::SignalPair> pairs;
      for (const auto& p : trust::load_split(manifest, trust::Split::Train)) {
        pairs.emplace_back(Eigen::Map<const Eigen::VectorXd>(p.x.data(), static_cast<Eigen::Index>(p.x.size())),
                           p.raw_observation());
      }
      std::optional<double> ridge;
      if (j.contains("ridge") && !j.at("ridge").is_null()) ridge = j.at("ridge").get<double>();
      op = trust::estimate_operator(pairs, ridge);
    } else if (which != "known") {
      throw trust::ParameterError("operator must be 'known' or 'estimated', got '" + which + "'");
    }

    const auto test = trust::load_split(manifest, split);
    const std::size_t side = manifest.image_size();
    const auto config = solver_config(j);
    trust::MetricReport report;
    report.per_image.resize(test.size());
    std::vector<std::vector<double>> recon(test.size());
    trust::parallel_for(test.size(), [&](std::size_t i) {
      const auto result = run_solver(method, op, test[i].raw_observation(), config);
      recon[i].assign(result.x.data(), result.x.data() + result.x.size());
      report.per_image[i] = trust::compute_metrics(recon[i], test[i].x, side, side, report.options);
    });
    std::string blob;
    for (const auto& r : recon) trust::io::append_f32_le(blob, r);
    const std::filesystem::path out(out_dir);
    trust::io::write_file(out / "reconstructions.bin", blob);
    write_metric_files(out, report);
    put(report_json_out, report.to_json());
    put(per_image_csv_out, report.to_csv());
  });
}

trust_status trust_verify_bound(const char* config_json, char** csv_out, int* violation) {
  return guarded([&] {
    const auto j = parse_config(config_json);
    trust::SweepConfig c;
    if (!j.contains("grid")) throw trust::ParameterError("verify-bound needs a grid");
    c.grid = trust::parse_grid(j.at("grid").get<std::string>());
    if (j.contains("kinds")) {
      c.kinds.clear();
      for (const auto& k : j.at("kinds")) c.kinds.push_back(trust::parse_operator_kind(k.get<std::string>()));
    }
    c.trials = j.value("trials", c.trials);
    c.seed = j.value("seed", c.seed);
    c.column_normalized = j.value("column_normalized", c.column_normalized);
    c.enumeration_cap = j.value("enumeration_cap", c.enumeration_cap);
    c.monte_carlo_budget = j.value("monte_carlo_budget", c.monte_carlo_budget);
    const auto result = trust::attention_similarity_sweep(c);
    if (violation) *violation = result.any_violation() ? 1 : 0;
    put(csv_out, result.csv());
  });
}

trust_status trust_metrics(const double* xhat, const double* x, size_t h, size_t w, char** json_out) {
  return guarded([&] {
    require(xhat, "xhat");
    require(x, "x");
    const auto m = trust::compute_metrics({xhat, h * w}, {x, h * w}, h, w);
    const nlohmann::json j = {{"mse", m.mse},   {"mae", m.mae},   {"rmse", m.rmse},
                              {"psnr", m.psnr}, {"ssim", m.ssim}, {"fpr", m.fpr}};
    put(json_out, j.dump());
  });
}

trust_status trust_dataset_generate(const char* spec_json, const char* dir, char** manifest_json_out) {
  return guarded([&] {
    require(dir, "dir");
    const auto spec = parse_config(spec_json).get<trust::DatasetSpec>();
    const auto manifest = trust::generate_dataset(spec, dir);
    put(manifest_json_out, manifest.json.dump(2));
  });
}

trust_status trust_dataset_verify(const char* dir, char** manifest_json_out) {
  return guarded([&] {
    require(dir, "dir");
    const auto manifest = trust::load_manifest(dir);
    for (auto split : {trust::Split::Train, trust::Split::Val, trust::Split::Test}) {
      const auto pairs = trust::load_split(manifest, split);
      check_length(pairs.size(), manifest.count(split), "split");
    }
    put(manifest_json_out, manifest.json.dump(2));
  });
}

trust_status trust_model_create(const char* spec_json, trust_model** out) {
  return guarded([&] {
    require(out, "out");
    const auto spec = parse_config(spec_json).get<trust::ModelSpec>();
    auto params = trust::init_params(spec);
    *out = new trust_model{spec, std::move(params)};
  });
}

trust_status trust_model_load(const char* checkpoint_path, trust_model** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    auto ck = trust::checkpoint_load(checkpoint_path);
    *out = new trust_model{ck.spec, std::move(ck.params)};
  });
}

trust_status trust_model_save(const trust_model* model, const char* checkpoint_path) {
  return guarded([&] {
    require(model, "model");
    require(checkpoint_path, "checkpoint_path");
    trust::checkpoint_save(checkpoint_path, model->spec, model->params);
  });
}

void trust_model_free(trust_model* model) { delete model; }

trust_status trust_model_spec(const trust_model* model, char** json_out) {
  return guarded([&] {
    require(model, "model");
    put(json_out, nlohmann::json(model->spec).dump());
  });
}

trust_status trust_model_param_count(const char* spec_json, size_t* parameters, size_t* multiply_adds) {
  return guarded([&] {
    const auto cost = trust::param_count(parse_config(spec_json).get<trust::ModelSpec>());
    if (parameters) *parameters = cost.parameters;
    if (multiply_adds) *multiply_adds = cost.multiply_adds;
  });
}

trust_status trust_model_forward(const trust_model* model, const double* observation, size_t len, double* out,
                                 size_t out_len) {
  return guarded([&] {
    require(model, "model");
    require(observation, "observation");
    require(out, "out");
    const std::size_t o = model->spec.observation_size(), s = model->spec.image_size();
    check_length(len, o * o, "observation");
    check_length(out_len, s * s, "out");
    const trust::Tensor y({o, o}, std::vector<double>(observation, observation + len));
    const auto xhat = trust::forward(model->params, model->spec, y);
    std::copy(xhat.values().begin(), xhat.values().end(), out);
  });
}

trust_status trust_model_train(trust_model* model, const char* dataset_dir, const char* train_json,
                               const char* out_dir, trust_epoch_callback on_epoch, void* user,
                               char** epoch_log_csv_out) {
  return guarded([&] {
    require(model, "model");
    require(dataset_dir, "dataset_dir");
    require(out_dir, "out_dir");
    const auto config = parse_config(train_json).get<trust::TrainConfig>();
    const auto manifest = trust::load_manifest(dataset_dir);
    const auto train_set = trust::load_split(manifest, trust::Split::Train);
    const auto val_set = trust::load_split(manifest, trust::Split::Val);
    trust::EpochCallback callback;
    if (on_epoch) {
      callback = [on_epoch, user](const trust::EpochRecord& r) { on_epoch(trust::epoch_log_row(r).c_str(), user); };
    }
    auto result = trust::train(model->spec, config, train_set, val_set, model->params.clone(), callback);
    const std::filesystem::path out(out_dir);
    const std::string log = trust::epoch_log_csv(result.log);
    trust::checkpoint_save(out / "best.ckpt", model->spec, result.best);
    trust::checkpoint_save(out / "last.ckpt", model->spec, result.last);
    trust::io::write_file(out / "epochs.csv", log);
    model->params = std::move(result.last);
    put(epoch_log_csv_out, log);
  });
}

trust_status trust_model_evaluate(const trust_model* model, const char* dataset_dir, const char* options_json,
                                  char** report_json_out, char** per_image_csv_out) {
  return guarded([&] {
    require(model, "model");
    require(dataset_dir, "dataset_dir");
    const auto j = parse_config(options_json);
    const auto config = j.get<trust::TrainConfig>();
    const auto manifest = trust::load_manifest(dataset_dir);
    const auto pairs = trust::load_split(manifest, trust::parse_split(j.value("split", std::string("test"))));
    const std::string emit = j.value("emit_images", std::string());
    const auto ev = trust::evaluate(model->params, model->spec, pairs, config, !emit.empty());
    if (!emit.empty()) {
      const std::filesystem::path dir(emit);
      const std::size_t s = model->spec.image_size(), o = manifest.observation_side();
      char name[64];
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        std::snprintf(name, sizeof(name), "%05zu", i);
        trust::io::write_pgm(dir / (std::string(name) + "_y.pgm"), pairs[i].y, o, o);
        trust::io::write_pgm(dir / (std::string(name) + "_x.pgm"), pairs[i].x, s, s);
        trust::io::write_pgm(dir / (std::string(name) + "_xhat.pgm"), ev.reconstructions[i], s, s);
      }
    }
    put(report_json_out, ev.report.to_json());
    put(per_image_csv_out, ev.report.to_csv());
  });
}

trust_status trust_hash_inputs(const char* config_json, const char* const* paths, size_t count, char** hash_out) {
  return guarded([&] {
    std::vector<std::filesystem::path> inputs;
    for (size_t i = 0; i < count; ++i) {
      require(paths[i], "path");
      inputs.emplace_back(paths[i]);
    }
    put(hash_out, trust::hash_inputs(config_json ? nlohmann::json::parse(config_json) : nlohmann::json::object(),
                                     inputs));
  });
}

trust_status trust_report_runs(const char* runs_dir, char** markdown_out, char** csv_out, size_t* rows) {
  return guarded([&] {
    require(runs_dir, "runs_dir");
    const auto table = trust::build_report(runs_dir);
    if (rows) *rows = table.rows.size();
    put(markdown_out, table.to_markdown());
    put(csv_out, table.to_csv());
  });
}

}  // extern "C"
