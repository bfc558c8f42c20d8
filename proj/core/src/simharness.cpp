#include "cellmr/simharness.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <limits>

#include "cellmr/errors.hpp"
#include "cellmr/parallel.hpp"
#include "cellmr/regression.hpp"
#include "cellmr/rng.hpp"
#include "cellmr/stats.hpp"

namespace cellmr {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_config(const ScenarioConfig& cfg) {
  if (cfg.n < 4 || cfg.p < 1 || cfg.q < 1 || cfg.test_n < 1 || cfg.reps < 1)
    throw InvalidConfigError("scenario: sizes out of range");
  if (!(cfg.epsilon >= 0.0 && cfg.epsilon < 0.5))
    throw InvalidConfigError("scenario: epsilon must lie in [0, 0.5)");
  if (cfg.gamma < 0.0) throw InvalidConfigError("scenario: gamma must be >= 0");
  if ((cfg.kind == ScenarioKind::clean) != (cfg.gamma == 0.0))
    throw InvalidConfigError("scenario: gamma must be 0 exactly for the clean kind");
  if (!(cfg.na_fraction >= 0.0 && cfg.na_fraction < 1.0))
    throw InvalidConfigError("scenario: na_fraction must lie in [0, 1)");
  if (!(cfg.snr > 0.0)) throw InvalidConfigError("scenario: snr must be positive");
  if (!(cfg.level > 0.0 && cfg.level < 1.0))
    throw InvalidConfigError("scenario: level must lie in (0, 1)");
  if (cfg.B < 1 || cfg.H < 1) throw InvalidConfigError("scenario: B and H must be >= 1");
}

Matrix ar_covariance(long p) {
  Matrix s(p, p);
  for (long j = 0; j < p; ++j)
    for (long l = 0; l < p; ++l) s(j, l) = std::pow(-0.4, std::abs(j - l));
  return s;
}

struct Resampled {
  Vector lower, upper;
  long failures = 0;
};

// Classical percentile bootstrap over the same row-resampling scheme; the
// interval targets every coefficient entry, column-major.
Resampled ols_percentile(const DataMatrix& x, const DataMatrix& y, int B,
                         double level, std::uint64_t seed) {
  const long n = x.rows(), p = x.cols(), q = y.cols();
  const long n_coef = p * q;
  Matrix samples(B, n_coef);
  Resampled out;
  long accepted = 0;
  std::uint64_t attempt = 0;
  const std::uint64_t max_attempts = 2 * static_cast<std::uint64_t>(B);
  while (accepted < B && attempt < max_attempts) {
    auto rng = make_rng(seed, "olsboot", attempt);
    std::uniform_int_distribution<long> pick(0, n - 1);
    std::vector<long> idx(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = pick(rng);
    ++attempt;
    try {
      const PluginFit fit = classical_fit(x.select_rows(idx), y.select_rows(idx), 0.0);
      for (long l = 0; l < q; ++l)
        samples.row(accepted).segment(l * p, p) = fit.B.col(l).transpose();
      ++accepted;
    } catch (const Error&) {
      ++out.failures;
    }
  }
  if (accepted < B) throw Error("ols bootstrap: too many failed replicates");
  const double alpha = 1.0 - level;
  out.lower.resize(n_coef);
  out.upper.resize(n_coef);
  for (long c = 0; c < n_coef; ++c) {
    std::vector<double> s(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) s[static_cast<std::size_t>(b)] = samples(b, c);
    out.lower[c] = quantile_ceil(s, alpha / 2.0);
    out.upper[c] = quantile_ceil(s, 1.0 - alpha / 2.0);
  }
  return out;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char ch : text) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  return h;
}

nlohmann::json config_json(const ScenarioConfig& cfg) {
  nlohmann::json j;
  j["n"] = cfg.n;
  j["p"] = cfg.p;
  j["q"] = cfg.q;
  j["epsilon"] = cfg.epsilon;
  j["gamma"] = cfg.gamma;
  j["kind"] = scenario_kind_name(cfg.kind);
  j["na_fraction"] = cfg.na_fraction;
  j["snr"] = cfg.snr;
  j["seed"] = cfg.seed;
  j["reps"] = cfg.reps;
  j["test_n"] = cfg.test_n;
  j["k"] = cfg.k;
  j["lambda"] = cfg.lambda;
  j["B"] = cfg.B;
  j["H"] = cfg.H;
  j["level"] = cfg.level;
  return j;
}

}  // namespace

const char* scenario_kind_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::clean: return "clean";
    case ScenarioKind::cellwise: return "cellwise";
    case ScenarioKind::casewise: return "casewise";
    case ScenarioKind::mixed: return "mixed";
  }
  return "clean";
}

ScenarioKind scenario_kind_from_name(const std::string& name) {
  if (name == "clean") return ScenarioKind::clean;
  if (name == "cellwise") return ScenarioKind::cellwise;
  if (name == "casewise") return ScenarioKind::casewise;
  if (name == "mixed") return ScenarioKind::mixed;
  throw InvalidConfigError("unknown scenario kind '" + name + "'");
}

GeneratedData generate(const ScenarioConfig& cfg, std::uint64_t rep) {
  check_config(cfg);
  const long n = cfg.n, p = cfg.p, q = cfg.q, d = p + q;

  GeneratedData out;
  const Matrix sigma_x = ar_covariance(p);
  {
    auto rng = make_rng(cfg.seed, "truth", rep);
    std::normal_distribution<double> gauss(0.0, 0.2);
    out.B_true.resize(p, q);
    for (long i = 0; i < p; ++i)
      for (long j = 0; j < q; ++j) out.B_true(i, j) = gauss(rng);
  }
  out.b_true = Vector::Zero(q);
  const Matrix bsb = out.B_true.transpose() * sigma_x * out.B_true;
  out.sigma_eps_true =
      Matrix::Identity(q, q) * (bsb.trace() / static_cast<double>(q)) / cfg.snr;

  out.sigma_joint.resize(d, d);
  out.sigma_joint.topLeftCorner(p, p) = sigma_x;
  out.sigma_joint.topRightCorner(p, q) = sigma_x * out.B_true;
  out.sigma_joint.bottomLeftCorner(q, p) = out.B_true.transpose() * sigma_x;
  out.sigma_joint.bottomRightCorner(q, q) = bsb + out.sigma_eps_true;

  const Matrix chol_x_t = Matrix(Eigen::LLT<Matrix>(sigma_x).matrixL()).transpose();
  const Vector eps_sd = out.sigma_eps_true.diagonal().cwiseSqrt();

  auto draw_block = [&](std::mt19937_64& rng, long rows, Matrix& xs, Matrix& ys) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    xs.resize(rows, p);
    ys.resize(rows, q);
    Vector u(p);
    for (long i = 0; i < rows; ++i) {
      for (long j = 0; j < p; ++j) u[j] = gauss(rng);
      xs.row(i) = (chol_x_t.transpose() * u).transpose();
      for (long j = 0; j < q; ++j) ys(i, j) = eps_sd[j] * gauss(rng);
      ys.row(i) += xs.row(i) * out.B_true;
    }
  };

  Matrix x_train, y_train, x_test, y_test;
  {
    auto rng = make_rng(cfg.seed, "train", rep);
    draw_block(rng, n, x_train, y_train);
  }
  {
    auto rng = make_rng(cfg.seed, "test", rep);
    draw_block(rng, cfg.test_n, x_test, y_test);
  }

  out.replaced = MaskMatrix::Zero(n, d);
  const double case_rate = cfg.kind == ScenarioKind::casewise ? cfg.epsilon
                           : cfg.kind == ScenarioKind::mixed  ? cfg.epsilon / 2.0
                                                              : 0.0;
  const double cell_rate = cfg.kind == ScenarioKind::cellwise ? cfg.epsilon
                           : cfg.kind == ScenarioKind::mixed  ? cfg.epsilon / 2.0
                                                              : 0.0;

  if (case_rate > 0.0) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(out.sigma_joint);
    if (es.info() != Eigen::Success)
      throw NonFiniteInputError("scenario: joint covariance eigendecomposition failed");
    Vector e = es.eigenvectors().col(0);
    const double quad = e.dot(out.sigma_joint.ldlt().solve(e));
    const Vector mean = 0.2 * cfg.gamma * static_cast<double>(d) *
                        std::sqrt(static_cast<double>(d)) / std::sqrt(quad) * e;
    const Matrix chol_j_t =
        Matrix(Eigen::LLT<Matrix>(out.sigma_joint).matrixL()).transpose();
    auto rng = make_rng(cfg.seed, "casewise", rep);
    std::bernoulli_distribution hit(case_rate);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector u(d);
    for (long i = 0; i < n; ++i) {
      if (!hit(rng)) continue;
      for (long j = 0; j < d; ++j) u[j] = gauss(rng);
      const Vector row = mean + chol_j_t.transpose() * u;
      for (long j = 0; j < p; ++j) x_train(i, j) = row[j];
      for (long j = 0; j < q; ++j) y_train(i, j) = row[p + j];
      out.replaced.row(i).setOnes();
    }
  }

  if (cell_rate > 0.0) {
    auto rng = make_rng(cfg.seed, "cellwise", rep);
    std::bernoulli_distribution hit(cell_rate);
    for (long i = 0; i < n; ++i) {
      for (long j = 0; j < d; ++j) {
        if (!hit(rng)) continue;
        const double value = cfg.gamma * out.sigma_joint(j, j);
        if (j < p)
          x_train(i, j) = value;
        else
          y_train(i, j - p) = value;
        out.replaced(i, j) = 1;
      }
    }
  }

  MaskMatrix mask = MaskMatrix::Ones(n, d);
  if (cfg.na_fraction > 0.0) {
    auto rng = make_rng(cfg.seed, "na", rep);
    std::bernoulli_distribution hit(cfg.na_fraction);
    for (long i = 0; i < n; ++i) {
      for (long j = 0; j < d; ++j)
        if (hit(rng)) mask(i, j) = 0;
      if (mask.row(i).sum() == 0) {
        std::uniform_int_distribution<long> pick(0, d - 1);
        mask(i, pick(rng)) = 1;
      }
    }
  }

  auto pack = [&](Matrix values, long first, long count) {
    DataMatrix m;
    m.values = std::move(values);
    m.mask = mask.middleCols(first, count);
    for (long i = 0; i < m.values.rows(); ++i)
      for (long j = 0; j < count; ++j)
        if (!m.mask(i, j)) m.values(i, j) = kNaN;
    m.column_names.reserve(static_cast<std::size_t>(count));
    for (long j = 0; j < count; ++j)
      m.column_names.push_back((first == 0 ? "x" : "y") + std::to_string(j + 1));
    return m;
  };
  out.x_train = pack(std::move(x_train), 0, p);
  out.y_train = pack(std::move(y_train), p, q);
  out.x_test = DataMatrix::complete(x_test);
  out.y_test = DataMatrix::complete(y_test);
  for (long j = 0; j < p; ++j) out.x_test.column_names[static_cast<std::size_t>(j)] = "x" + std::to_string(j + 1);
  for (long j = 0; j < q; ++j) out.y_test.column_names[static_cast<std::size_t>(j)] = "y" + std::to_string(j + 1);
  return out;
}

MseTable run_mse(const ScenarioConfig& cfg, unsigned threads) {
  check_config(cfg);
  MseTable table;
  table.cfg = cfg;
  MethodSummary robust{"cellmr", 0, 0, 0, 0, {}};
  MethodSummary ridge{"ridge", 0, 0, 0, 0, {}};
  const double bad = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> robust_mse(static_cast<std::size_t>(cfg.reps), bad);
  std::vector<double> ridge_mse(static_cast<std::size_t>(cfg.reps), bad);

  auto test_mse = [](const Matrix& B, const Vector& b, const GeneratedData& g) {
    const Matrix pred =
        (g.x_test.values * B).rowwise() + b.transpose();
    return (g.y_test.values - pred).squaredNorm() /
           static_cast<double>(g.y_test.rows());
  };

  parallel_for(cfg.reps, threads, [&](long rep) {
    const GeneratedData g = generate(cfg, static_cast<std::uint64_t>(rep));
    try {
      const RegressionFitResult fit =
          cellmr_fit(g.x_train, g.y_train, cfg.k, cfg.lambda);
      robust_mse[static_cast<std::size_t>(rep)] =
          test_mse(fit.model.B, fit.model.b, g);
    } catch (const Error&) {
    }
    try {
      const PluginFit fit = classical_fit(g.x_train, g.y_train, cfg.lambda);
      ridge_mse[static_cast<std::size_t>(rep)] = test_mse(fit.B, fit.b, g);
    } catch (const Error&) {
    }
  });

  auto summarize = [&](MethodSummary& s, const std::vector<double>& values) {
    for (double v : values) {
      if (std::isnan(v)) {
        ++s.failures;
        continue;
      }
      s.per_rep.push_back(v);
    }
    s.reps_used = static_cast<long>(s.per_rep.size());
    if (!s.per_rep.empty()) {
      double acc = 0.0;
      for (double v : s.per_rep) acc += v;
      s.mse_mean = acc / static_cast<double>(s.per_rep.size());
      s.mse_median = median(s.per_rep);
    }
  };
  summarize(robust, robust_mse);
  summarize(ridge, ridge_mse);
  table.rows = {std::move(robust), std::move(ridge)};
  return table;
}

CoverageTable run_coverage(const ScenarioConfig& cfg, unsigned threads) {
  check_config(cfg);
  CoverageTable table;
  table.cfg = cfg;
  const long p = cfg.p, q = cfg.q, n_coef = p * q;

  std::vector<Vector> contrasts;
  contrasts.reserve(static_cast<std::size_t>(n_coef));
  for (long l = 0; l < q; ++l)
    for (long j = 0; j < p; ++j) contrasts.push_back(contrast_coef(p, q, j, l));

  CoverageRow robust{"cellboot", 0.0, 0.0, 0, 0};
  CoverageRow ols{"ols", 0.0, 0.0, 0, 0};
  long robust_hits = 0, robust_cells = 0;
  long ols_hits = 0, ols_cells = 0;
  double robust_width = 0.0, ols_width = 0.0;

  for (long rep = 0; rep < cfg.reps; ++rep) {
    const GeneratedData g = generate(cfg, static_cast<std::uint64_t>(rep));
    Vector truth(n_coef);
    for (long l = 0; l < q; ++l)
      truth.segment(l * p, p) = g.B_true.col(l);

    try {
      const RegressionFitResult fit =
          cellmr_fit(g.x_train, g.y_train, cfg.k, cfg.lambda);
      BootstrapOptions opts;
      opts.B = cfg.B;
      opts.H = cfg.H;
      opts.level = cfg.level;
      opts.seed = derive_seed(cfg.seed, "coverage", static_cast<std::uint64_t>(rep));
      opts.threads = threads;
      const BootstrapResult boot =
          cellboot(g.x_train, g.y_train, fit.model, contrasts, opts);
      for (long c = 0; c < n_coef; ++c) {
        robust_hits += truth[c] >= boot.lower[c] && truth[c] <= boot.upper[c];
        robust_width += boot.upper[c] - boot.lower[c];
        ++robust_cells;
      }
      ++robust.reps_used;
    } catch (const Error&) {
      ++robust.failures;
    }

    try {
      const Resampled ci = ols_percentile(
          g.x_train, g.y_train, cfg.B, cfg.level,
          derive_seed(cfg.seed, "ols_coverage", static_cast<std::uint64_t>(rep)));
      for (long c = 0; c < n_coef; ++c) {
        ols_hits += truth[c] >= ci.lower[c] && truth[c] <= ci.upper[c];
        ols_width += ci.upper[c] - ci.lower[c];
        ++ols_cells;
      }
      ++ols.reps_used;
    } catch (const Error&) {
      ++ols.failures;
    }
  }

  if (robust_cells > 0) {
    robust.coverage = static_cast<double>(robust_hits) / static_cast<double>(robust_cells);
    robust.mean_width = robust_width / static_cast<double>(robust_cells);
  }
  if (ols_cells > 0) {
    ols.coverage = static_cast<double>(ols_hits) / static_cast<double>(ols_cells);
    ols.mean_width = ols_width / static_cast<double>(ols_cells);
  }
  table.rows = {std::move(robust), std::move(ols)};
  return table;
}

double trim_rmse(const Matrix& residuals, double alpha) {
  const long n = residuals.rows(), q = residuals.cols();
  if (n == 0 || q == 0) throw EmptyInputError("trim_rmse: empty residual matrix");
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw InvalidConfigError("trim_rmse: alpha must lie in (0, 1]");
  const long h = static_cast<long>(std::ceil(alpha * static_cast<double>(n)));
  double acc = 0.0;
  std::vector<double> sq(static_cast<std::size_t>(n));
  for (long j = 0; j < q; ++j) {
    for (long i = 0; i < n; ++i) {
      const double r = residuals(i, j);
      sq[static_cast<std::size_t>(i)] = r * r;
    }
    std::sort(sq.begin(), sq.end());
    for (long i = 0; i < h; ++i) acc += sq[static_cast<std::size_t>(i)];
  }
  return std::sqrt(acc / (static_cast<double>(q) * static_cast<double>(h)));
}

namespace {

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.precision(17);
  out << "scenario,gamma,method,metric,value,reps,failures\n";
  return out;
}

}  // namespace

void write_mse_csv(const std::string& path, const MseTable& table) {
  auto out = open_csv(path);
  for (const MethodSummary& row : table.rows) {
    out << scenario_kind_name(table.cfg.kind) << ',' << table.cfg.gamma << ','
        << row.method << ",mse_mean," << row.mse_mean << ',' << row.reps_used << ','
        << row.failures << '\n';
    out << scenario_kind_name(table.cfg.kind) << ',' << table.cfg.gamma << ','
        << row.method << ",mse_median," << row.mse_median << ',' << row.reps_used
        << ',' << row.failures << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

void write_coverage_csv(const std::string& path, const CoverageTable& table) {
  auto out = open_csv(path);
  for (const CoverageRow& row : table.rows) {
    out << scenario_kind_name(table.cfg.kind) << ',' << table.cfg.gamma << ','
        << row.method << ",coverage," << row.coverage << ',' << row.reps_used << ','
        << row.failures << '\n';
    out << scenario_kind_name(table.cfg.kind) << ',' << table.cfg.gamma << ','
        << row.method << ",mean_width," << row.mean_width << ',' << row.reps_used
        << ',' << row.failures << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

void write_manifest(const std::string& path, const ScenarioConfig& cfg,
                    const std::string& command) {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config_json(cfg);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(fnv1a(j.dump())));
  j["content_hash"] = std::string(hex);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace cellmr
