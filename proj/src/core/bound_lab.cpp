#include "bound_lab.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "error.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace trust {

namespace {

void require_unit(const Eigen::VectorXd& v, const char* name, std::size_t n) {
  if (static_cast<std::size_t>(v.size()) != n) {
    throw DimensionError(std::string(name) + " has " + std::to_string(v.size()) +
                         " entries, operator expects " + std::to_string(n));
  }
  if (std::abs(v.norm() - 1.0) > 1e-10) {
    throw ContractError(std::string(name) + " must be unit-norm, got ||.|| = " +
                        std::to_string(v.norm()));
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double softmax_pair_dev(const Eigen::VectorXd& x, const Eigen::VectorXd& xp,
                        const Eigen::VectorXd& ax, const Eigen::VectorXd& axp) {
  auto rows = [](double g00, double g01, double g11) {
    auto sm = [](double a, double b) {
      const double mx = std::max(a, b);
      const double ea = std::exp(a - mx), eb = std::exp(b - mx);
      return std::pair{ea / (ea + eb), eb / (ea + eb)};
    };
    return std::pair{sm(g00, g01), sm(g01, g11)};
  };
  const auto [rx0, rx1] = rows(x.dot(x), x.dot(xp), xp.dot(xp));
  const auto [ry0, ry1] = rows(ax.dot(ax), ax.dot(axp), axp.dot(axp));
  return std::max({std::abs(rx0.first - ry0.first), std::abs(rx0.second - ry0.second),
                   std::abs(rx1.first - ry1.first), std::abs(rx1.second - ry1.second)});
}

}  // namespace

double inner_product_deviation(const SensingOperator& a, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& xp) {
  require_unit(x, "x", a.cols());
  require_unit(xp, "x'", a.cols());
  return std::abs(a.apply(x).dot(a.apply(xp)) - x.dot(xp));
}

double polarized_deviation(const SensingOperator& a, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& xp) {
  require_unit(x, "x", a.cols());
  require_unit(xp, "x'", a.cols());
  const Eigen::VectorXd s = x + xp, d = x - xp;
  const double transformed = a.apply(s).squaredNorm() - a.apply(d).squaredNorm();
  const double original = s.squaredNorm() - d.squaredNorm();
  return std::abs(transformed - original) / 4.0;
}

PolarizationCheck check_polarization(const SensingOperator& a, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& xp, double tolerance) {
  if (static_cast<std::size_t>(x.size()) != a.cols() || x.size() != xp.size()) {
    throw DimensionError("check_polarization: signal lengths do not match the operator");
  }
  const Eigen::VectorXd ax = a.apply(x), axp = a.apply(xp);
  PolarizationCheck c;
  c.lhs_operator = a.apply(x + xp).squaredNorm() - a.apply(x - xp).squaredNorm();
  c.residual_operator = c.lhs_operator - 4.0 * ax.dot(axp);
  c.residual_identity = (x + xp).squaredNorm() - (x - xp).squaredNorm() - 4.0 * x.dot(xp);
  c.holds = std::abs(c.residual_operator) <= tolerance && std::abs(c.residual_identity) <= tolerance;
  return c;
}

bool verify_polarization(const SensingOperator& a, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& xp, double tolerance) {
  return check_polarization(a, x, xp, tolerance).holds;
}

std::vector<GridPoint> parse_grid(const std::string& text) {
  std::vector<GridPoint> grid;
  if (!text.empty() && text.back() == ',') {
    throw ParameterError("malformed grid '" + text + "' (trailing comma)");
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    GridPoint p;
    char x1 = 0, x2 = 0;
    std::istringstream is(item);
    long long m = -1, n = -1, k = -1;
    if (!(is >> m >> x1 >> n >> x2 >> k) || x1 != 'x' || x2 != 'x' || m <= 0 || n <= 0 || k <= 0 || k > n) {
      throw ParameterError("malformed grid entry '" + item + "' (expected MxNxK with 1 <= k <= n)");
    }
    is >> std::ws;
    if (!is.eof()) {
      throw ParameterError("malformed grid entry '" + item + "' (expected MxNxK)");
    }
    p.m = static_cast<std::size_t>(m);
    p.n = static_cast<std::size_t>(n);
    p.k = static_cast<std::size_t>(k);
    grid.push_back(p);
  }
  if (grid.empty()) {
    throw ParameterError("empty grid");
  }
  return grid;
}

bool SweepResult::any_violation() const {
  for (const auto& c : cells) {
    if (c.violated) return true;
  }
  return false;
}

std::string SweepResult::csv() const {
  std::string out =
      "kind,m,n,k,mean_dev,max_dev,delta,trials,delta_method,softmax_row_dev_nontheorem\n";
  for (const auto& c : cells) {
    out += to_string(c.kind) + "," + std::to_string(c.point.m) + "," + std::to_string(c.point.n) +
           "," + std::to_string(c.point.k) + "," + fmt(c.mean_dev) + "," + fmt(c.max_dev) + "," +
           fmt(c.delta) + "," + std::to_string(c.trials) + "," +
           (c.delta_exact ? "exact" : "montecarlo_lower_bound") + "," + fmt(c.softmax_row_dev) +
           "\n";
  }
  return out;
}

std::string SweepResult::gnuplot_matrix() const {
  std::map<std::pair<std::string, std::size_t>, std::vector<const SweepCell*>> blocks;
  for (const auto& c : cells) blocks[{to_string(c.kind), c.point.k}].push_back(&c);
  std::string out;
  for (const auto& [key, list] : blocks) {
    out += "# kind=" + key.first + " k=" + std::to_string(key.second) +
           "\n# m n mean_dev max_dev delta\n";
    for (const SweepCell* c : list) {
      out += std::to_string(c->point.m) + " " + std::to_string(c->point.n) + " " +
             fmt(c->mean_dev) + " " + fmt(c->max_dev) + " " + fmt(c->delta) + "\n";
    }
    out += "\n\n";
  }
  return out;
}

SweepResult attention_similarity_sweep(const SweepConfig& config) {
  if (config.trials == 0) {
    throw ParameterError("sweep needs trials >= 1");
  }
  struct Job {
    OperatorKind kind;
    GridPoint point;
  };
  std::vector<Job> jobs;
  for (auto kind : config.kinds)
    for (const auto& p : config.grid) jobs.push_back({kind, p});

  SweepResult result;
  result.cells.resize(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    const Job& job = jobs[j];
    const GridPoint& p = job.point;
    if (p.k > p.n) {
      throw ParameterError("grid cell " + std::to_string(p.m) + "x" + std::to_string(p.n) + "x" +
                           std::to_string(p.k) + " has k > n");
    }
    OperatorOptions opts;
    opts.column_normalized = config.column_normalized;
    const auto op = SensingOperator::sample(job.kind, p.m, p.n,
                                            derive_seed(config.seed, streams::kOperator, j), opts);
    SweepCell cell;
    cell.kind = job.kind;
    cell.point = p;
    cell.trials = config.trials;
    const bool exact = binomial(p.n, std::min(2 * p.k, p.n)) <= config.enumeration_cap;
    const auto rip = estimate_rip(op, p.k, exact ? RipMethod::ExactEnumeration : RipMethod::MonteCarlo,
                                  config.monte_carlo_budget, derive_seed(config.seed, streams::kTrial, j),
                                  config.enumeration_cap);
    cell.delta = rip.delta;
    cell.delta_exact = !rip.lower_bound;
    double sum = 0.0, sum_sm = 0.0;
    for (std::size_t t = 0; t < config.trials; ++t) {
      const std::uint64_t base = derive_seed(config.seed, streams::kSignal, j * 1'000'003 + t);
      const auto x = generate_ksparse(p.n, p.k, base).dense();
      const auto xp = generate_ksparse(p.n, p.k, mix64(base)).dense();
      double dev = 0.0, sm = 0.0;
      if (p.k > 0) {
        dev = inner_product_deviation(op, x, xp);
        sm = softmax_pair_dev(x, xp, op.apply(x), op.apply(xp));
      }
      sum += dev;
      sum_sm += sm;
      cell.max_dev = std::max(cell.max_dev, dev);
    }
    cell.mean_dev = sum / static_cast<double>(config.trials);
    cell.softmax_row_dev = sum_sm / static_cast<double>(config.trials);
    cell.violated = cell.delta_exact && cell.max_dev > cell.delta + kBoundSlack;
    result.cells[j] = cell;
  });
  return result;
}

}  // namespace trust
