// Command line front end: fit, predict, diagnose, bootstrap, influence,
// simulate.  Exit codes: 0 success, 1 usage error, 2 data/model error.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cellmr/diagnostics.hpp"
#include "cellmr/errors.hpp"
#include "cellmr/inference.hpp"
#include "cellmr/regression.hpp"
#include "cellmr/sensitivity.hpp"
#include "cellmr/serialize.hpp"
#include "cellmr/simharness.hpp"

namespace fs = std::filesystem;
using cellmr::DataMatrix;

namespace {

// Configuration mistakes that should exit 1 rather than 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::string input;
  std::string model;
  std::string out = ".";
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0 = all logical cores
  std::vector<std::string> response;
  std::optional<int> k;
  std::optional<double> lambda;
  int folds = 10;
  int B = 1000;
  int H = 50;
  double level = 0.90;
};

unsigned effective_threads(unsigned requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

fs::path ensure_out_dir(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw cellmr::IoError("cannot create output directory '" + out + "'");
  return dir;
}

long find_column(const std::vector<std::string>& names, const std::string& token) {
  for (std::size_t j = 0; j < names.size(); ++j)
    if (names[j] == token) return static_cast<long>(j);
  // Numeric tokens address columns 1-based.
  try {
    std::size_t pos = 0;
    const long idx = std::stol(token, &pos);
    if (pos == token.size() && idx >= 1 && idx <= static_cast<long>(names.size()))
      return idx - 1;
  } catch (const std::exception&) {
  }
  throw UsageError("unknown column '" + token + "'");
}

DataMatrix select_columns(const DataMatrix& data, const std::vector<long>& idx) {
  DataMatrix out;
  out.values.resize(data.rows(), static_cast<long>(idx.size()));
  out.mask.resize(data.rows(), static_cast<long>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) {
    out.values.col(static_cast<long>(c)) = data.values.col(idx[c]);
    out.mask.col(static_cast<long>(c)) = data.mask.col(idx[c]);
    out.column_names.push_back(data.column_names[static_cast<std::size_t>(idx[c])]);
  }
  return out;
}

struct Split {
  DataMatrix x, y;
};

Split split_response(const DataMatrix& data, const std::vector<std::string>& response) {
  if (response.empty()) throw UsageError("--response is required");
  std::vector<long> y_idx;
  for (const std::string& token : response) y_idx.push_back(find_column(data.column_names, token));
  std::vector<bool> is_y(static_cast<std::size_t>(data.cols()), false);
  for (long j : y_idx) {
    if (is_y[static_cast<std::size_t>(j)])
      throw UsageError("response column listed twice: '" +
                       data.column_names[static_cast<std::size_t>(j)] + "'");
    is_y[static_cast<std::size_t>(j)] = true;
  }
  std::vector<long> x_idx;
  for (long j = 0; j < data.cols(); ++j)
    if (!is_y[static_cast<std::size_t>(j)]) x_idx.push_back(j);
  if (x_idx.empty()) throw UsageError("no predictor columns remain");
  return Split{select_columns(data, x_idx), select_columns(data, y_idx)};
}

// Picks the model's predictor (and optionally response) columns out of a CSV
// that may carry extra columns, falling back to positional matching.
DataMatrix columns_for(const DataMatrix& data, const std::vector<std::string>& names) {
  std::vector<long> idx;
  for (const std::string& name : names) {
    bool found = false;
    for (std::size_t j = 0; j < data.column_names.size(); ++j) {
      if (data.column_names[j] == name) {
        idx.push_back(static_cast<long>(j));
        found = true;
        break;
      }
    }
    if (!found) {
      if (data.cols() == static_cast<long>(names.size())) return data;  // positional
      throw UsageError("input is missing column '" + name + "'");
    }
  }
  return select_columns(data, idx);
}

int cmd_fit(const CommonFlags& f) {
  const DataMatrix data = cellmr::read_csv(f.input);
  const Split split = split_response(data, f.response);
  const fs::path dir = ensure_out_dir(f.out);
  const long n = split.x.rows(), p = split.x.cols(), q = split.y.cols();
  const unsigned threads = effective_threads(f.threads);

  int k = f.k.value_or(-1);
  double lambda = f.lambda.value_or(-1.0);
  if (!f.k || !f.lambda) {
    std::vector<int> k_grid =
        f.k ? std::vector<int>{*f.k} : cellmr::default_k_grid(n, p + q);
    std::vector<double> lambda_grid;
    if (f.lambda) {
      lambda_grid = {*f.lambda};
    } else {
      int kx = static_cast<int>(std::min<long>({k_grid.back(), p - 1, n - 1}));
      const cellmr::CellCovResult prelim = cellmr::cellcov(split.x, std::max(kx, 0));
      lambda_grid = cellmr::default_lambda_grid(prelim.cov.sigma, p);
    }
    const cellmr::CvReport report =
        cellmr::cross_validate(split.x, split.y, k_grid, lambda_grid, f.folds,
                               f.seed, cellmr::RegressionOptions(), threads);
    k = report.best_k;
    lambda = report.best_lambda;
    std::ofstream cv(dir / "cv_report.csv");
    if (!cv) throw cellmr::IoError("cannot open cv_report.csv for writing");
    cv.precision(17);
    cv << "k,lambda,cv,selected\n";
    for (std::size_t ki = 0; ki < report.k_grid.size(); ++ki)
      for (std::size_t li = 0; li < report.lambda_grid.size(); ++li) {
        const bool sel = report.k_grid[ki] == k && report.lambda_grid[li] == lambda;
        cv << report.k_grid[ki] << ',' << report.lambda_grid[li] << ','
           << report.cv_values(static_cast<long>(ki), static_cast<long>(li)) << ','
           << (sel ? 1 : 0) << '\n';
      }
  }

  const cellmr::RegressionFitResult fit = cellmr::cellmr_fit(split.x, split.y, k, lambda);
  cellmr::save_model((dir / "model.json").string(), fit.model);
  std::cout << "fit: n=" << n << " p=" << p << " q=" << q << " k=" << k
            << " lambda=" << lambda << " -> " << (dir / "model.json").string() << "\n";
  return 0;
}

int cmd_predict(const CommonFlags& f) {
  const cellmr::RegressionModel model = cellmr::load_model(f.model);
  const DataMatrix data = cellmr::read_csv(f.input);
  const DataMatrix x = columns_for(data, model.x_names);
  const fs::path dir = ensure_out_dir(f.out);
  const Eigen::MatrixXd pred = cellmr::cellmr_predict(model, x);
  DataMatrix out = DataMatrix::complete(pred);
  out.column_names = model.y_names;
  cellmr::write_csv((dir / "predictions.csv").string(), out);
  std::cout << "predict: " << pred.rows() << " rows -> "
            << (dir / "predictions.csv").string() << "\n";
  return 0;
}

Split split_for_model(const cellmr::RegressionModel& model, const DataMatrix& data,
                      const std::vector<std::string>& response_flag) {
  if (!response_flag.empty()) return split_response(data, response_flag);
  std::vector<std::string> joint = model.x_names;
  joint.insert(joint.end(), model.y_names.begin(), model.y_names.end());
  const DataMatrix picked = columns_for(data, joint);
  return Split{picked.select_cols(0, model.p), picked.select_cols(model.p, model.q)};
}

int cmd_diagnose(const CommonFlags& f) {
  const cellmr::RegressionModel model = cellmr::load_model(f.model);
  const DataMatrix data = cellmr::read_csv(f.input);
  const Split split = split_for_model(model, data, f.response);
  const fs::path dir = ensure_out_dir(f.out);
  const long n = split.x.rows();
  const double cutoff_t = cellmr::simulate_t_cutoff(
      std::max<long>(n, 50), model.p + model.q, model.k, 500, f.seed);
  const cellmr::DiagnosticsReport rep = cellmr::diagnose(model, split.x, split.y, cutoff_t);
  cellmr::write_outlier_map((dir / "outlier_map.csv").string(), rep);
  cellmr::write_cellmap_x((dir / "cellmap_X.csv").string(), rep, model.x_names);
  cellmr::write_cellmap_y((dir / "cellmap_Y.csv").string(), rep, model.y_names);
  std::cout << "diagnose: " << n << " rows, cutoffs rd=" << rep.cutoff_rd
            << " pd=" << rep.cutoff_pd << " t=" << rep.cutoff_t << " -> "
            << dir.string() << "\n";
  return 0;
}

int cmd_bootstrap(const CommonFlags& f) {
  const cellmr::RegressionModel model = cellmr::load_model(f.model);
  const DataMatrix data = cellmr::read_csv(f.input);
  const Split split = split_for_model(model, data, f.response);
  const fs::path dir = ensure_out_dir(f.out);
  const long p = model.p, q = model.q;

  std::vector<Eigen::VectorXd> contrasts;
  std::vector<std::string> names;
  std::vector<std::string> files;
  for (long l = 0; l < q; ++l) {
    contrasts.push_back(cellmr::contrast_intercept(p, q, l));
    names.push_back("b[" + model.y_names[static_cast<std::size_t>(l)] + "]");
    files.push_back("boot_b_" + std::to_string(l + 1) + ".csv");
  }
  for (long l = 0; l < q; ++l)
    for (long j = 0; j < p; ++j) {
      contrasts.push_back(cellmr::contrast_coef(p, q, j, l));
      names.push_back("B[" + model.x_names[static_cast<std::size_t>(j)] + "->" +
                      model.y_names[static_cast<std::size_t>(l)] + "]");
      files.push_back("boot_B_" + std::to_string(j + 1) + "_" + std::to_string(l + 1) +
                      ".csv");
    }

  cellmr::BootstrapOptions opts;
  opts.B = f.B;
  opts.H = f.H;
  opts.level = f.level;
  opts.seed = f.seed;
  opts.threads = effective_threads(f.threads);
  const cellmr::BootstrapResult result =
      cellmr::cellboot(split.x, split.y, model, contrasts, opts);

  for (std::size_t c = 0; c < contrasts.size(); ++c)
    cellmr::write_bootstrap_samples((dir / files[c]).string(), result,
                                    static_cast<long>(c));
  cellmr::write_bootstrap_summary((dir / "bootstrap_summary.json").string(), result,
                                  names);
  std::cout << "bootstrap: B=" << f.B << " H=" << f.H << " level=" << f.level
            << " failures=" << result.failures << " -> " << dir.string() << "\n";
  return 0;
}

int cmd_influence(const CommonFlags& f) {
  const DataMatrix data = cellmr::read_csv(f.input);
  const Split split = split_response(data, f.response);
  const fs::path dir = ensure_out_dir(f.out);
  const long p = split.x.cols(), q = split.y.cols();
  const unsigned threads = effective_threads(f.threads);
  const int k = f.k.value_or(1);
  const double lambda = f.lambda.value_or(0.0);

  cellmr::ContaminationSpec spec;
  spec.c_point = Eigen::VectorXd::Zero(p + q);
  spec.seed = f.seed;
  const std::vector<double> grid = cellmr::linspace(-10.0, 10.0, 21);

  const cellmr::FitFunctional robust = cellmr::cellmr_coef_functional(k, lambda);
  const cellmr::FitFunctional classical = cellmr::classical_coef_functional();
  const struct {
    const char* file;
    cellmr::ContaminationKind kind;
    const cellmr::FitFunctional* fn;
  } runs[] = {
      {"if_cellmr_casewise.csv", cellmr::ContaminationKind::casewise, &robust},
      {"if_cellmr_cellwise.csv", cellmr::ContaminationKind::cellwise, &robust},
      {"if_ols_casewise.csv", cellmr::ContaminationKind::casewise, &classical},
      {"if_ols_cellwise.csv", cellmr::ContaminationKind::cellwise, &classical},
  };
  for (const auto& run : runs) {
    cellmr::ContaminationSpec local = spec;
    local.kind = run.kind;
    const Eigen::MatrixXd surface =
        cellmr::if_grid(split.x, split.y, *run.fn, local, grid, grid, 0, p, threads);
    cellmr::write_if_surface((dir / run.file).string(), grid, grid, surface);
  }
  std::cout << "influence: 21x21 grid, sweep (x1, y1) -> " << dir.string() << "\n";
  return 0;
}

cellmr::ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  cellmr::ScenarioConfig cfg;
  cfg.n = j.value("n", cfg.n);
  cfg.p = j.value("p", cfg.p);
  cfg.q = j.value("q", cfg.q);
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.kind = cellmr::scenario_kind_from_name(
      j.value("kind", std::string(cellmr::scenario_kind_name(cfg.kind))));
  cfg.na_fraction = j.value("na_fraction", cfg.na_fraction);
  cfg.snr = j.value("snr", cfg.snr);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.reps = j.value("reps", cfg.reps);
  cfg.test_n = j.value("test_n", cfg.test_n);
  cfg.k = j.value("k", cfg.k);
  cfg.lambda = j.value("lambda", cfg.lambda);
  cfg.B = j.value("B", cfg.B);
  cfg.H = j.value("H", cfg.H);
  cfg.level = j.value("level", cfg.level);
  return cfg;
}

int cmd_simulate(const CommonFlags& f) {
  std::ifstream in(f.input);
  if (!in) throw cellmr::IoError("cannot open scenario file '" + f.input + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw cellmr::IoError(std::string("scenario file: invalid JSON: ") + e.what());
  }
  cellmr::ScenarioConfig cfg = scenario_from_json(j);
  const std::string mode = j.value("mode", std::string("mse"));
  const fs::path dir = ensure_out_dir(f.out);
  const unsigned threads = effective_threads(f.threads);

  if (mode == "mse") {
    const cellmr::MseTable table = cellmr::run_mse(cfg, threads);
    cellmr::write_mse_csv((dir / "results.csv").string(), table);
  } else if (mode == "coverage") {
    const cellmr::CoverageTable table = cellmr::run_coverage(cfg, threads);
    cellmr::write_coverage_csv((dir / "results.csv").string(), table);
  } else {
    throw UsageError("scenario mode must be 'mse' or 'coverage'");
  }
  cellmr::write_manifest((dir / "manifest.json").string(), cfg, "simulate:" + mode);
  std::cout << "simulate: " << mode << " " << cellmr::scenario_kind_name(cfg.kind)
            << " gamma=" << cfg.gamma << " reps=" << cfg.reps << " -> "
            << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cellwise+casewise robust multivariate regression toolkit"};
  app.require_subcommand(1);

  CommonFlags f;
  auto add_common = [&](CLI::App* cmd, bool needs_input, bool needs_model) {
    auto* in = cmd->add_option("--input", f.input, "input CSV (or scenario JSON)");
    if (needs_input) in->required();
    auto* model = cmd->add_option("--model", f.model, "model JSON file");
    if (needs_model) model->required();
    cmd->add_option("--out", f.out, "output directory")->capture_default_str();
    cmd->add_option("--seed", f.seed, "random seed")->capture_default_str();
    cmd->add_option("--threads", f.threads, "worker threads (0 = all cores)");
    cmd->add_option("--response", f.response,
                    "response columns (names or 1-based indices)")
        ->delimiter(',');
    cmd->add_option("--k", f.k, "principal subspace rank");
    cmd->add_option("--lambda", f.lambda, "ridge penalty");
    cmd->add_option("--folds", f.folds, "cross-validation folds")->capture_default_str();
    cmd->add_option("--B", f.B, "bootstrap replicates")->capture_default_str();
    cmd->add_option("--H", f.H, "simulated replicates per bias-correction step")
        ->capture_default_str();
    cmd->add_option("--level", f.level, "confidence level")
        ->check(CLI::Range(1e-6, 1.0 - 1e-6))
        ->capture_default_str();
  };

  add_common(app.add_subcommand("fit", "fit a model, selecting k and lambda by CV "
                                       "unless both are fixed"),
             true, false);
  add_common(app.add_subcommand("predict", "predict responses for new predictors"),
             true, true);
  add_common(app.add_subcommand("diagnose", "outlier map and cellmap tables"), true,
             true);
  add_common(app.add_subcommand("bootstrap", "confidence intervals for all "
                                             "coefficients"),
             true, true);
  add_common(app.add_subcommand("influence", "empirical influence surfaces"), true,
             false);
  add_common(app.add_subcommand("simulate", "run a simulation scenario file"), true,
             false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand("fit")) return cmd_fit(f);
    if (app.got_subcommand("predict")) return cmd_predict(f);
    if (app.got_subcommand("diagnose")) return cmd_diagnose(f);
    if (app.got_subcommand("bootstrap")) return cmd_bootstrap(f);
    if (app.got_subcommand("influence")) return cmd_influence(f);
    if (app.got_subcommand("simulate")) return cmd_simulate(f);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const cellmr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
