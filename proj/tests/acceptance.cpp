// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on stderr.
// Usage: acceptance [--only name[,name...]] [--expect-fail name[,name...]] [--list] [--results file]
// --expect-fail keeps the named criteria's FAIL lines but leaves them out of the exit status;
// an exception inside one still counts.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/bound_lab.hpp"
#include "core/dataset.hpp"
#include "core/metrics.hpp"
#include "core/model.hpp"
#include "core/rng.hpp"
#include "core/solvers.hpp"
#include "core/training.hpp"
#include "grad_suite.hpp"

using namespace trust;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances and scales ----
constexpr double kTheoremSlack = 1e-9;
constexpr double kTheoremSeconds = 60.0;
constexpr double kOrthoTol = 1e-10;
constexpr double kPolarTol = 1e-10;
constexpr double kGradSeconds = 300.0;
constexpr double kOmpRate = 0.95;
constexpr double kOmpLsTol = 1e-8;
constexpr double kFistaGap = 1e-6;
constexpr std::size_t kIstaOracleIters = 100'000;
constexpr double kSsimTol = 1e-9;
constexpr double kAggregateRelTol = 1e-12;
constexpr double kDeskReduction = 0.5;
constexpr double kDeskHours = 2.0;
// trend runs: default model, reduced data and epochs
constexpr std::size_t kTrendTrain = 400;
constexpr std::size_t kTrendVal = 100;
constexpr std::size_t kTrendEpochs = 5;
constexpr double kTrendLr = 1e-4;
// a trend win only counts when the full model beats the all-zero predictor's val loss by this fraction
constexpr double kInformativeMargin = 0.01;
constexpr unsigned long long kTrendSeeds[3] = {1, 2, 3};

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void progress(const std::string& s) { std::fprintf(stderr, "  .. %s\n", s.c_str()); }

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "trust_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// ---- bound lab ----

Outcome theorem() {
  const auto t0 = std::chrono::steady_clock::now();
  SweepConfig c;
  c.kinds = {OperatorKind::Gaussian};
  c.grid = parse_grid("8x12x2");
  c.trials = 10'000;
  c.seed = 2024;
  const auto r = attention_similarity_sweep(c);
  const auto& cell = r.cells.at(0);
  const double secs = seconds_since(t0);
  const bool ok = cell.delta_exact && cell.trials == 10'000 && cell.max_dev <= cell.delta + kTheoremSlack &&
                  secs < kTheoremSeconds;
  return {ok, fmt("n=12 m=8 k=2, exact delta_2k=%.6f over C(12,4)=%zu supports, max deviation %.6f over %zu pairs, "
                  "%.1fs (limit %.0fs, slack %.0e)",
                  cell.delta, binomial(12, 4), cell.max_dev, cell.trials, secs, kTheoremSeconds, kTheoremSlack)};
}

Outcome orthonormal() {
  SweepConfig c;
  c.kinds = {OperatorKind::OrthonormalSquare, OperatorKind::TallOrthonormal};
  c.grid = parse_grid("12x12x2,16x12x2");
  c.trials = 1'000;
  c.seed = 7;
  double worst = 0.0;
  std::size_t cells = 0;
  try {
    for (auto kind : c.kinds) {
      SweepConfig one = c;
      one.kinds = {kind};
      one.grid = {kind == OperatorKind::OrthonormalSquare ? c.grid[0] : c.grid[1]};
      for (const auto& cell : attention_similarity_sweep(one).cells) {
        worst = std::max(worst, cell.max_dev);
        ++cells;
      }
    }
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
  return {cells == 2 && worst < kOrthoTol,
          fmt("square 12x12 and tall 16x12, k=2, 1000 pairs each: max deviation %.3e (tol %.0e)", worst, kOrthoTol)};
}

Outcome polarization() {
  const auto a = SensingOperator::sample(OperatorKind::Gaussian, 16, 32, 11);
  double worst_a = 0.0, worst_i = 0.0;
  for (std::uint64_t t = 0; t < 10'000; ++t) {
    const auto x = generate_ksparse(32, 3, 2 * t + 1).dense();
    const auto xp = generate_ksparse(32, 3, 2 * t + 2).dense();
    const auto chk = check_polarization(a, x, xp);
    worst_a = std::max(worst_a, chk.residual_operator);
    worst_i = std::max(worst_i, chk.residual_identity);
  }
  return {worst_a < kPolarTol && worst_i < kPolarTol,
          fmt("10000 pairs, n=32 m=16 k=3: max residual with A %.3e, with identity %.3e (tol %.0e)", worst_a, worst_i,
              kPolarTol)};
}

// ---- gradients ----

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  auto cases = testing::primitive_grad_cases();
  for (auto& c : testing::model_grad_cases()) cases.push_back(std::move(c));
  double worst = 0.0;
  std::string worst_name;
  std::size_t failed = 0;
  for (const auto& c : cases) {
    const auto r = testing::run_grad_case(c);
    if (r.worst >= testing::kGradRelTol) ++failed;
    if (r.worst >= worst) {
      worst = r.worst;
      worst_name = c.name + (r.worst_input.empty() ? "" : "/" + r.worst_input);
    }
  }
  const double secs = seconds_since(t0);
  return {failed == 0 && secs < kGradSeconds,
          fmt("%zu cases (primitives, losses, reduced TRUST and U-Net), worst rel err %.2e at %s, h=%.0e, "
              "tol %.0e, %.1fs (limit %.0fs)",
              cases.size(), worst, worst_name.c_str(), testing::kFdStep, testing::kGradRelTol, secs, kGradSeconds)};
}

// ---- solvers ----

Outcome omp_recovery() {
  constexpr std::size_t n = 128, m = 64, k = 5, trials = 200;
  std::size_t exact = 0;
  double worst_ls = 0.0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    const auto a = SensingOperator::sample(OperatorKind::Gaussian, m, n, 1000 + t);
    const auto s = generate_ksparse(n, k, 5000 + t);
    const Eigen::VectorXd y = a.apply(s.dense());
    SolverConfig c;
    c.sparsity = k;
    const auto r = omp(a, y, c);
    auto support = r.support;
    std::sort(support.begin(), support.end());
    if (support != s.support) continue;
    ++exact;
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) sub.col(Eigen::Index(i)) = a.matrix().col(Eigen::Index(s.support[i]));
    const Eigen::VectorXd ls = sub.colPivHouseholderQr().solve(y);
    for (std::size_t i = 0; i < k; ++i) {
      worst_ls = std::max(worst_ls, std::abs(r.x[Eigen::Index(s.support[i])] - ls[Eigen::Index(i)]));
    }
  }
  const double rate = double(exact) / double(trials);
  return {rate >= kOmpRate && worst_ls < kOmpLsTol,
          fmt("n=128 m=64 k=5, %zu/%zu exact supports (%.1f%%, need %.0f%%), max |x - LS| %.2e (tol %.0e)", exact,
              trials, 100.0 * rate, 100.0 * kOmpRate, worst_ls, kOmpLsTol)};
}

std::size_t first_within(const std::vector<double>& history, double target) {
  for (std::size_t i = 0; i < history.size(); ++i)
    if (history[i] <= target) return i + 1;
  return history.size() + 1;
}

Outcome fista_vs_ista() {
  constexpr std::size_t problems = 50;
  std::size_t fista_wins = 0;
  for (std::uint64_t p = 0; p < problems; ++p) {
    const auto a = SensingOperator::sample(OperatorKind::Gaussian, 32, 64, 300 + p);
    const auto s = generate_ksparse(64, 5, 700 + p);
    const Eigen::VectorXd y = a.apply(s.dense(), 0.01, p);
    SolverConfig oracle;
    oracle.max_iterations = kIstaOracleIters;
    oracle.change_tolerance = 0.0;
    const auto long_run = ista(a, y, oracle);
    const double f_star = long_run.objective_history.back();
    const std::size_t ista_iters = first_within(long_run.objective_history, f_star + kFistaGap);
    SolverConfig fc = oracle;
    fc.max_iterations = ista_iters;
    const auto fr = fista(a, y, fc);
    const std::size_t fista_iters = first_within(fr.objective_history, f_star + kFistaGap);
    fista_wins += fista_iters < ista_iters;
  }
  return {2 * fista_wins > problems,
          fmt("%zu/%zu problems (32x64) where FISTA reaches F*+%.0e in fewer iterations, F* from %zu ISTA iterations",
              fista_wins, problems, kFistaGap, kIstaOracleIters)};
}

// ---- metrics ----

Outcome metric_identities() {
  Rng rng(5);
  std::vector<double> x(32 * 32);
  for (auto& v : x) v = rng.uniform();
  const double s = ssim(x, x, 32, 32);
  const double p = psnr_from_rmse(0.1);
  const std::vector<double> zeros(64, 0.0), ones(64, 1.0);
  std::vector<double> one_hot = zeros;
  one_hot[9] = 0.9;
  const bool fpr_ok = fpr(zeros, zeros) == 0.0 && fpr(ones, zeros) == 1.0 && fpr(ones, ones) == 0.0 &&
                      fpr(one_hot, zeros) == 1.0 / 64.0;

  MetricReport report;
  for (std::uint64_t i = 0; i < 20; ++i) {
    std::vector<double> a(256), b(256);
    for (auto& v : a) v = rng.uniform();
    for (auto& v : b) v = rng.uniform();
    report.per_image.push_back(compute_metrics(a, b, 16, 16));
  }
  double worst_rel = 0.0;
  for (auto field : {&ImageMetrics::mse, &ImageMetrics::mae, &ImageMetrics::psnr, &ImageMetrics::ssim,
                     &ImageMetrics::fpr}) {
    double mean = 0.0, var = 0.0;
    for (const auto& m : report.per_image) mean += m.*field;
    mean /= double(report.per_image.size());
    for (const auto& m : report.per_image) var += (m.*field - mean) * (m.*field - mean);
    const double sd = std::sqrt(var / double(report.per_image.size()));
    const auto agg = report.aggregate(field);
    worst_rel = std::max(worst_rel, std::abs(agg.mean - mean) / std::max(std::abs(mean), 1e-300));
    if (sd > 0) worst_rel = std::max(worst_rel, std::abs(agg.stddev - sd) / sd);
  }
  const bool ok = std::abs(s - 1.0) <= kSsimTol && p == 20.0 && fpr_ok && worst_rel < kAggregateRelTol;
  return {ok, fmt("ssim(x,x)-1=%.1e (tol %.0e), psnr(rmse 0.1)=%.17g, fpr cases %s, aggregate rel err %.1e (tol %.0e)",
                  s - 1.0, kSsimTol, p, fpr_ok ? "ok" : "wrong", worst_rel, kAggregateRelTol)};
}

// ---- training ----

struct Splits {
  std::vector<SamplePair> train, val;
};

Splits dataset_splits(const DatasetSpec& spec, const std::string& name) {
  const auto dir = work_dir() / name;
  const auto manifest = generate_dataset(spec, dir);
  return {load_split(manifest, Split::Train), load_split(manifest, Split::Val)};
}

ModelSpec default_trust(std::uint64_t seed) {
  ModelSpec s;
  s.trust.seed = seed;
  return s;
}

EpochCallback log_epochs(const std::string& tag) {
  return [tag](const EpochRecord& e) {
    progress(fmt("%s epoch %zu train %.6f val %.6f ssim %.4f", tag.c_str(), e.epoch, e.train_loss, e.val_loss,
                 e.val_ssim));
  };
}

Outcome desk_training() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = dataset_splits(DatasetSpec{}, "desk");
  TrainConfig cfg;  // defaults: L2+SSIM, lr 1e-4, batch 16, 20 epochs
  const auto r = train(default_trust(0), cfg, data.train, data.val, log_epochs("desk"));
  const double hours = seconds_since(t0) / 3600.0;
  const double first = r.log.front().val_loss, last = r.log.back().val_loss;
  const double reduction = 1.0 - last / first;
  return {reduction >= kDeskReduction && hours < kDeskHours,
          fmt("default TRUST, %zu train / %zu val, %zu epochs, lr %.0e: val loss %.5f -> %.5f (%.1f%% reduction, "
              "need %.0f%%), %.2f h (limit %.0f h)",
              data.train.size(), data.val.size(), cfg.epochs, cfg.learning_rate, first, last, 100.0 * reduction,
              100.0 * kDeskReduction, hours, kDeskHours)};
}

struct TrendRuns {
  double full_l2ssim[3], noskip_l2ssim[3], full_l2[3];
  bool full_l2ssim_informative[3], full_l2_informative[3];
  double zero_l2ssim, zero_l2;
};

// Mean validation loss of a constant all-zero reconstruction.
double zero_prediction_loss(const std::vector<SamplePair>& val, const TrainConfig& cfg) {
  std::vector<double> losses;
  for (const auto& p : val) {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(p.x.size()))));
    Tensor x({side, side}), zero({side, side});
    std::copy(p.x.begin(), p.x.end(), x.mutable_data().begin());
    losses.push_back(loss(cfg.loss, zero, x, cfg.lambda_l1, cfg.lambda_ssim).item());
  }
  return mean_std(losses).mean;
}

const TrendRuns& trend_runs() {
  static const TrendRuns runs = [] {
    DatasetSpec spec;
    spec.train = kTrendTrain;
    spec.val = kTrendVal;
    spec.test = 1;
    const auto data = dataset_splits(spec, "trend");
    TrendRuns out{};
    TrainConfig base;
    out.zero_l2ssim = zero_prediction_loss(data.val, base);
    base.loss = LossKind::L2;
    out.zero_l2 = zero_prediction_loss(data.val, base);
    for (std::size_t i = 0; i < 3; ++i) {
      const unsigned long long seed = kTrendSeeds[i];
      TrainConfig cfg;
      cfg.epochs = kTrendEpochs;
      cfg.learning_rate = kTrendLr;
      cfg.seed = seed;
      auto full = default_trust(seed);
      auto none = full;
      for (auto& s : none.trust.skips) s.enabled = false;
      const auto a = train(full, cfg, data.train, data.val, log_epochs(fmt("seed %llu full l2ssim", seed)));
      const auto b = train(none, cfg, data.train, data.val, log_epochs(fmt("seed %llu noskip l2ssim", seed)));
      TrainConfig l2 = cfg;
      l2.loss = LossKind::L2;
      const auto c = train(full, l2, data.train, data.val, log_epochs(fmt("seed %llu full l2", seed)));
      out.full_l2ssim[i] = a.log.back().val_ssim;
      out.noskip_l2ssim[i] = b.log.back().val_ssim;
      out.full_l2[i] = c.log.back().val_ssim;
      out.full_l2ssim_informative[i] = a.log.back().val_loss < (1.0 - kInformativeMargin) * out.zero_l2ssim;
      out.full_l2_informative[i] = c.log.back().val_loss < (1.0 - kInformativeMargin) * out.zero_l2;
    }
    return out;
  }();
  return runs;
}

std::string triple(const double* v) { return fmt("%.4f/%.4f/%.4f", v[0], v[1], v[2]); }

Outcome skip_trend() {
  const auto& r = trend_runs();
  int wins = 0, informative = 0;
  for (int i = 0; i < 3; ++i) {
    informative += r.full_l2ssim_informative[i];
    wins += r.full_l2ssim_informative[i] && r.full_l2ssim[i] >= r.noskip_l2ssim[i];
  }
  return {wins >= 2, fmt("val SSIM full-skip %s vs no-skip %s over seeds 1/2/3: full >= none in %d/3 (need 2); "
                         "full model beats all-zero val loss %.5f by %.0f%% in %d/3; %zu train, %zu epochs, lr %.0e",
                         triple(r.full_l2ssim).c_str(), triple(r.noskip_l2ssim).c_str(), wins, r.zero_l2ssim,
                         100.0 * kInformativeMargin, informative, kTrendTrain, kTrendEpochs, kTrendLr)};
}

Outcome loss_trend() {
  const auto& r = trend_runs();
  int wins = 0, informative = 0;
  for (int i = 0; i < 3; ++i) {
    const bool both = r.full_l2ssim_informative[i] && r.full_l2_informative[i];
    informative += both;
    wins += both && r.full_l2ssim[i] >= r.full_l2[i];
  }
  return {wins >= 2, fmt("val SSIM L2+SSIM %s vs L2 %s over seeds 1/2/3: L2+SSIM >= L2 in %d/3 (need 2); "
                         "both runs beat their all-zero val loss (%.5f, %.5f) by %.0f%% in %d/3; "
                         "%zu train, %zu epochs, lr %.0e",
                         triple(r.full_l2ssim).c_str(), triple(r.full_l2).c_str(), wins, r.zero_l2ssim, r.zero_l2,
                         100.0 * kInformativeMargin, informative, kTrendTrain, kTrendEpochs, kTrendLr)};
}

// ---- determinism through the command-line tool ----

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(const std::string& args) {
  const std::string cmd = "TRUST_THREADS=0 " + std::string(TRUST_CLI_PATH) + " " + args + " >>" +
                          (work_dir() / "cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Compares every output file; run.json is compared without its wall-clock duration.
bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
  files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    if (!fs::exists(b / rel)) return false;
    ++files;
    if (rel.filename() == "run.json") {
      auto ja = nlohmann::json::parse(slurp(e.path())), jb = nlohmann::json::parse(slurp(b / rel));
      ja.erase("duration_seconds");
      jb.erase("duration_seconds");
      if (ja != jb) return false;
    } else if (slurp(e.path()) != slurp(b / rel)) {
      return false;
    }
  }
  std::size_t other = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) other += e.is_regular_file();
  return files > 0 && other == files;
}

Outcome determinism() {
  const auto root = work_dir() / "determinism";
  const auto data = root / "data", run = root / "train", eval = root / "eval";
  const std::string steps[3] = {
      "gen-data --seed 7 --train 48 --val 16 --test 16 --out " + data.string(),
      "train --dataset " + data.string() + " --epochs 2 --lr 1e-3 --seed 3 --out " + run.string(),
      "eval --checkpoint " + (run / "best.ckpt").string() + " --dataset " + data.string() + " --split test --out " +
          eval.string()};
  const fs::path outs[3] = {data, run, eval};
  std::string detail;
  bool ok = true;
  for (int pass = 0; pass < 2; ++pass) {
    for (int i = 0; i < 3; ++i) {
      if (cli(steps[i]) != 0) return {false, "command failed: trust " + steps[i]};
    }
    if (pass == 0)
      for (const auto& o : outs) fs::rename(o, o.string() + ".first");
  }
  const char* names[3] = {"gen-data", "train", "eval"};
  for (int i = 0; i < 3; ++i) {
    std::size_t files = 0;
    const bool same = same_tree(outs[i].string() + ".first", outs[i], files);
    ok = ok && same;
    detail += fmt("%s %s (%zu files)%s", names[i], same ? "identical" : "DIFFERS", files, i < 2 ? ", " : "");
  }
  return {ok, detail + "; run.json compared without duration_seconds; TRUST_THREADS=0"};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"bound_theorem", theorem},        {"orthonormal_exact", orthonormal},
      {"polarization", polarization},    {"gradient_suite", gradients},
      {"omp_recovery", omp_recovery},    {"fista_vs_ista", fista_vs_ista},
      {"metric_identities", metric_identities}, {"desk_training", desk_training},
      {"skip_trend", skip_trend},        {"loss_trend", loss_trend},
      {"determinism", determinism},
  };
  std::vector<std::string> only, expect_fail;
  fs::path results;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--list") {
      for (const auto& c : criteria) std::printf("%s\n", c.name);
      return 0;
    } else if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string item; std::getline(ss, item, ',');) only.push_back(item);
    } else if (arg == "--expect-fail" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string item; std::getline(ss, item, ',');) expect_fail.push_back(item);
    } else if (arg == "--results" && i + 1 < argc) {
      results = argv[++i];
    } else {
      std::fprintf(stderr,
                   "usage: acceptance [--only name[,name...]] [--expect-fail name[,name...]] [--list] [--results file]\n");
      return 2;
    }
  }
  std::vector<std::string> named = only;
  named.insert(named.end(), expect_fail.begin(), expect_fail.end());
  for (const auto& name : named) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const Criterion& c) { return name == c.name; })) {
      std::fprintf(stderr, "unknown criterion: %s\n", name.c_str());
      return 2;
    }
  }

  std::string lines;
  int failed = 0, expected_failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    std::fprintf(stderr, "running %s\n", c.name);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    bool threw = false;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
      threw = true;
    }
    const bool expected = std::find(expect_fail.begin(), expect_fail.end(), c.name) != expect_fail.end();
    const std::string line =
        fmt("%s %-18s ", o.pass ? "PASS" : "FAIL", c.name) + o.detail + fmt(" [%.1fs]", seconds_since(t0));
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    lines += line + "\n";
    if (!o.pass && expected && !threw) {
      ++expected_failures;
    } else {
      failed += !o.pass;
    }
  }
  if (expected_failures > 0) {
    std::printf("%d criteria failed as expected (--expect-fail), %d unexpected failures\n", expected_failures, failed);
  }
  if (!results.empty()) std::ofstream(results) << lines;
  return failed == 0 ? 0 : 1;
}
