#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <omp.h>

#include "mssm/bootstrap.hpp"
#include "mssm/em.hpp"
#include "mssm/errors.hpp"
#include "mssm/init.hpp"
#include "mssm/io.hpp"
#include "mssm/kim.hpp"
#include "mssm/simulate.hpp"
#include "mssm/stationary.hpp"
#include "mssm/study.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mssm;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct CommonOpts {
  std::string kind = "dyn";
  int M = 2, p = 1, r = 1, N = 1, T = 0;
  std::uint64_t seed = 0;
  std::string out = ".";
  int jobs = 0;
};

void add_model_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--kind", o.kind, "Model kind: dyn|var|obs")
      ->check(CLI::IsMember({"dyn", "var", "obs"}));
  cmd->add_option("--M", o.M, "Number of regimes");
  cmd->add_option("--p", o.p, "Autoregressive order");
  cmd->add_option("--r", o.r, "State dimension (ignored for var)");
  cmd->add_option("--seed", o.seed, "RNG seed");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--jobs", o.jobs, "Worker threads (0 = library default)");
}

ModelSpec make_spec(const CommonOpts& o, int N) {
  ModelSpec spec;
  spec.kind = kind_from_string(o.kind);
  spec.M = o.M;
  spec.p = o.p;
  spec.N = N;
  spec.r = spec.kind == ModelKind::Var ? N : o.r;
  spec.constraints.stable_A = true;
  if (spec.M < 1 || spec.p < 1 || spec.r < 1 || spec.r > spec.N)
    throw CLI::ValidationError("model", "need M >= 1, p >= 1, 1 <= r <= N");
  return spec;
}

std::vector<std::string> channel_names(int N) {
  std::vector<std::string> names;
  for (int i = 1; i <= N; ++i) names.push_back("ch" + std::to_string(i));
  return names;
}

void write_series(const fs::path& dir, const Matrix& y) {
  write_csv(dir / "y.csv", y.transpose(), channel_names(static_cast<int>(y.rows())));
}

void write_regimes(const fs::path& dir, const RegimeSequence& S,
                   const Matrix* W_smooth) {
  std::vector<std::string> header{"regime"};
  if (W_smooth)
    for (int j = 1; j <= W_smooth->rows(); ++j)
      header.push_back("W" + std::to_string(j));
  std::vector<std::vector<std::string>> rows;
  for (size_t t = 0; t < S.size(); ++t) {
    std::vector<std::string> row{std::to_string(S[t] + 1)};
    if (W_smooth)
      for (int j = 0; j < W_smooth->rows(); ++j)
        row.push_back(csv_double((*W_smooth)(j, t)));
    rows.push_back(std::move(row));
  }
  write_csv_rows(dir / "regimes.csv", header, rows);
}

void write_scores(const fs::path& path, const SelectionScores& s) {
  json j{{"loglik", s.loglik}, {"aic", s.aic},       {"bic", s.bic},
         {"mape", s.mape},     {"n_free", s.n_free}};
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

ThetaParams cold_init(const Matrix& y, const ModelSpec& spec, std::uint64_t seed) {
  InitOptions io;
  io.seed = seed ^ 0x1A17ULL;
  switch (spec.kind) {
    case ModelKind::Var: return init_var(y, spec, io);
    case ModelKind::Obs: return init_obs(y, spec, io);
    default: return init_dyn(y, spec, io);
  }
}

// ---------------------------------------------------------------- simulate
int cmd_simulate(const CommonOpts& o, int N_flag, const std::string& params_path) {
  fs::create_directories(o.out);
  ModelSpec spec;
  ThetaParams theta;
  if (!params_path.empty()) {
    ParamsFile pf = read_params(params_path);
    spec = pf.spec;
    theta = pf.theta;
  } else {
    spec = make_spec(o, N_flag);
    Rng rng(o.seed);
    theta = make_study_theta(spec, rng);
  }
  if (o.T <= 0) throw CLI::ValidationError("--T", "series length must be positive");

  Rng rng = Rng::substream(o.seed, 0x51AULL);
  SimOutput sim = simulate_model(theta, spec, o.T, rng);
  write_series(o.out, sim.y);
  write_regimes(o.out, sim.S, nullptr);
  ParamsFile pf{spec, theta, o.seed, std::nullopt, o.T};
  write_params(fs::path(o.out) / "params.json", pf);
  return 0;
}

// --------------------------------------------------------------------- fit
int cmd_fit(const CommonOpts& o, const std::string& input, const std::string& em_mode,
            const std::vector<double>& daem_schedule, int max_iter, double tol,
            bool scores_only) {
  fs::create_directories(o.out);
  Matrix y = read_csv(input).transpose();  // rows = time in the file
  if (y.cols() == 0 || y.rows() == 0)
    throw CLI::ValidationError("--input", "empty series");
  ModelSpec spec = make_spec(o, static_cast<int>(y.rows()));

  FitOptions fo;
  fo.max_iter = max_iter;
  fo.tol_rel = tol;
  fo.seed = o.seed;
  if (em_mode == "daem")
    fo.daem_schedule = daem_schedule.empty() ? std::vector<double>{0.5, 0.8, 1.0}
                                             : daem_schedule;
  if (em_mode == "accel") fo.accelerate = true;

  ThetaParams theta0 = cold_init(y, spec, o.seed);
  FitResult fit = em_fit(y, spec, theta0, fo);

  write_scores(fs::path(o.out) / "scores.json", fit.scores);
  if (scores_only) return 0;

  ParamsFile pf{spec, fit.theta, o.seed, dwell_times(fit.stats),
                static_cast<int>(y.cols())};
  write_params(fs::path(o.out) / "params.json", pf);
  write_regimes(o.out, fit.S_hat, &fit.stats.W_smooth);
  Matrix trace(fit.loglik_trace.size(), 2);
  for (size_t k = 0; k < fit.loglik_trace.size(); ++k) {
    trace(k, 0) = static_cast<double>(k + 1);
    trace(k, 1) = fit.loglik_trace[k];
  }
  write_csv(fs::path(o.out) / "loglik_trace.csv", trace, {"iter", "loglik"});
  return 0;
}

// --------------------------------------------------------------- bootstrap
int cmd_bootstrap(const CommonOpts& o, const std::string& params_path, int B,
                  double level, const std::vector<std::string>& methods,
                  const std::vector<std::string>& targets,
                  const std::string& match_key) {
  fs::create_directories(o.out);
  ParamsFile pf = read_params(params_path);
  int T = o.T > 0 ? o.T : pf.T.value_or(0);
  if (T <= 0)
    throw CLI::ValidationError("--T", "series length missing from flags and file");
  if (B < 2) throw CLI::ValidationError("--B", "need at least 2 replicates");

  FitOptions fo;
  fo.accelerate = true;
  fo.seed = o.seed;
  BootstrapEnsemble ens = parametric_bootstrap(pf.theta, pf.spec, T, B, fo, o.seed);
  MatchKey key = match_key == "A"     ? MatchKey::A
                 : match_key == "cov" ? MatchKey::Cov
                                      : MatchKey::Pi;
  ens = match_replicates(std::move(ens), pf.theta, pf.spec, key);

  // ensemble.json: matched replicates with their filter log-likelihoods
  json reps = json::array();
  for (int b = 0; b < ens.B; ++b) {
    fs::path tmp = fs::path(o.out) / ".rep.json";
    ParamsFile rp{pf.spec, ens.replicates[b], o.seed, std::nullopt, T};
    write_params(tmp, rp);
    std::ifstream in(tmp);
    json one;
    in >> one;
    one["loglik"] = ens.logliks[b];
    reps.push_back(std::move(one));
  }
  fs::remove(fs::path(o.out) / ".rep.json");
  json ej{{"B", ens.B}, {"seed", o.seed}, {"replicates", std::move(reps)}};
  std::ofstream(fs::path(o.out) / "ensemble.json") << ej.dump(2) << "\n";

  for (const std::string& method : methods) {
    CiMethod m = method == "basic"    ? CiMethod::Basic
                 : method == "normal" ? CiMethod::Normal
                                      : CiMethod::Percentile;
    auto bands = confidence_intervals(ens, pf.theta, pf.spec, targets, level, m);
    std::vector<std::vector<std::string>> rows;
    for (const auto& b : bands)
      rows.push_back({b.target, std::to_string(b.index), csv_double(b.lower),
                      csv_double(b.estimate), csv_double(b.upper)});
    write_csv_rows(fs::path(o.out) / ("ci_" + method + ".csv"),
                   {"target", "index", "lower", "estimate", "upper"}, rows);
  }
  return 0;
}

// ----------------------------------------------------------------- extract
int cmd_extract(const CommonOpts& o, const std::vector<std::string>& params_paths,
                int max_lag) {
  fs::create_directories(o.out);
  std::vector<ParamsFile> pfs;
  for (const auto& path : params_paths) pfs.push_back(read_params(path));

  std::vector<std::vector<Vector>> all_feats;
  std::vector<Vector> all_weights;
  for (size_t k = 0; k < pfs.size(); ++k) {
    const ParamsFile& pf = pfs[k];
    StationaryMeasures sm = stationary_measures(pf.theta, pf.spec, max_lag);
    std::string tag = pfs.size() > 1 ? "_set" + std::to_string(k + 1) : "";
    std::vector<std::vector<std::string>> feat_rows;
    std::vector<Vector> feats;
    for (int j = 0; j < pf.spec.M; ++j) {
      std::string suffix = tag + "_" + std::to_string(j + 1);
      write_csv(fs::path(o.out) / ("cov" + suffix + ".csv"), sm.cov_y[j]);
      write_csv(fs::path(o.out) / ("corr" + suffix + ".csv"), sm.corr_y[j]);
      write_csv(fs::path(o.out) / ("acf" + suffix + ".csv"), sm.acf[j]);
      write_csv(fs::path(o.out) / ("pcorr" + suffix + ".csv"), sm.pcorr[j]);
      feats.push_back(fc_feature(sm, j));
      std::vector<std::string> row{"set" + std::to_string(k + 1),
                                   std::to_string(j + 1)};
      for (int i = 0; i < feats.back().size(); ++i)
        row.push_back(csv_double(feats.back()(i)));
      feat_rows.push_back(std::move(row));
    }
    std::vector<std::string> header{"set", "regime"};
    for (int i = 1; i <= feats[0].size(); ++i) header.push_back("f" + std::to_string(i));
    write_csv_rows(fs::path(o.out) / ("fc_features" + tag + ".csv"), header,
                   feat_rows);
    all_feats.push_back(std::move(feats));
    Vector w = pf.dwell ? *pf.dwell
                        : Vector::Constant(pf.spec.M, 1.0 / pf.spec.M);
    all_weights.push_back(w);
  }

  if (pfs.size() > 1) {
    const int K = static_cast<int>(pfs.size());
    Matrix dist = Matrix::Zero(K, K);
    for (int a = 0; a < K; ++a)
      for (int b = 0; b < K; ++b)
        if (a != b)
          dist(a, b) = weighted_fc_distance(all_feats[a], all_weights[a],
                                            all_feats[b], all_weights[b]);
    write_csv(fs::path(o.out) / "fc_distance.csv", dist);
    Matrix var(K, 1);
    for (int a = 0; a < K; ++a)
      var(a, 0) = weighted_fc_variance(all_feats[a], all_weights[a]);
    write_csv(fs::path(o.out) / "fc_variance.csv", var);
  }
  return 0;
}

// ------------------------------------------------------------------- study
int cmd_study(const CommonOpts& o, int N_flag, int n_sims, bool accel) {
  fs::create_directories(o.out);
  StudyConfig cfg;
  cfg.kind = kind_from_string(o.kind);
  cfg.N = N_flag;
  cfg.T = o.T > 0 ? o.T : 400;
  cfg.M = o.M;
  cfg.p = o.p;
  cfg.r = o.r;
  cfg.n_sims = n_sims;
  cfg.seed = o.seed;
  cfg.fit.accelerate = accel;
  cfg.fit.seed = o.seed;

  std::vector<StudyRow> rows = run_study(cfg);

  std::vector<std::vector<std::string>> rate_rows, err_rows;
  for (const StudyRow& row : rows) {
    rate_rows.push_back({o.kind, std::to_string(cfg.N), std::to_string(cfg.T),
                         std::to_string(row.sim + 1), row.estimator,
                         csv_double(row.classification_rate)});
    for (const auto& [target, value] : row.rel_errors)
      err_rows.push_back({o.kind, std::to_string(cfg.N), std::to_string(cfg.T),
                          std::to_string(row.sim + 1), row.estimator, target,
                          csv_double(value)});
  }
  write_csv_rows(fs::path(o.out) / "classification_rate.csv",
                 {"kind", "N", "T", "sim", "estimator", "rate"}, rate_rows);
  write_csv_rows(fs::path(o.out) / "relative_error.csv",
                 {"kind", "N", "T", "sim", "estimator", "target", "value"}, err_rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Markov-switching state-space models: estimation, bootstrap "
               "inference, and stationary connectivity structure"};
  app.require_subcommand(1);
  app.set_config("--config");

  CommonOpts sim_o, fit_o, boot_o, ext_o, study_o;
  int sim_N = 4;
  std::string sim_params;
  auto* sim = app.add_subcommand("simulate", "Generate data from the model");
  add_model_flags(sim, sim_o);
  sim->add_option("--N", sim_N, "Observation dimension");
  sim->add_option("--T", sim_o.T, "Series length")->required();
  sim->add_option("--params", sim_params, "Parameter file (else study generators)");

  std::string fit_input, fit_em = "plain";
  std::vector<double> fit_daem;
  int fit_max_iter = 500;
  double fit_tol = 1e-6;
  auto* fit = app.add_subcommand("fit", "Estimate parameters by EM");
  add_model_flags(fit, fit_o);
  fit->add_option("--input", fit_input, "Input CSV (rows = time)")->required();
  fit->add_option("--em", fit_em, "plain|daem|accel")
      ->check(CLI::IsMember({"plain", "daem", "accel"}));
  fit->add_option("--daem-schedule", fit_daem, "Annealing betas (last must be 1)");
  fit->add_option("--max-iter", fit_max_iter, "EM iteration cap");
  fit->add_option("--tol", fit_tol, "Relative log-likelihood tolerance");

  auto* sel = app.add_subcommand("select", "Fit and emit selection scores only");
  CommonOpts sel_o;
  std::string sel_input, sel_em = "plain";
  int sel_max_iter = 500;
  double sel_tol = 1e-6;
  add_model_flags(sel, sel_o);
  sel->add_option("--input", sel_input, "Input CSV (rows = time)")->required();
  sel->add_option("--em", sel_em, "plain|daem|accel");
  sel->add_option("--max-iter", sel_max_iter, "EM iteration cap");
  sel->add_option("--tol", sel_tol, "Relative log-likelihood tolerance");

  std::string boot_params, boot_match = "pi";
  int boot_B = 100;
  double boot_level = 0.9;
  std::vector<std::string> boot_methods{"percentile", "basic", "normal"};
  std::vector<std::string> boot_targets{"cov", "corr", "acf", "Z"};
  auto* boot = app.add_subcommand("bootstrap", "Parametric bootstrap of the MLE");
  add_model_flags(boot, boot_o);
  boot->add_option("--params", boot_params, "params.json from fit")->required();
  boot->add_option("--B", boot_B, "Bootstrap replicates");
  boot->add_option("--T", boot_o.T, "Series length (default: from params meta)");
  boot->add_option("--level", boot_level, "Pointwise confidence level");
  boot->add_option("--methods", boot_methods,
                   "Any of percentile, basic, normal")
      ->delimiter(',');
  boot->add_option("--targets", boot_targets,
                   "Any of cov,corr,acf,pcorr,Z,A,Q,R,CCt")
      ->delimiter(',');
  boot->add_option("--match", boot_match, "Replicate matching key: pi|A|cov")
      ->check(CLI::IsMember({"pi", "A", "cov"}));

  std::vector<std::string> ext_params;
  int ext_max_lag = 5;
  auto* ext = app.add_subcommand("extract", "Stationary covariance structure");
  add_model_flags(ext, ext_o);
  ext->add_option("--params", ext_params, "One or more params.json files")
      ->required();
  ext->add_option("--max-lag", ext_max_lag, "Autocorrelation lags");

  int study_N = 10, study_sims = 50;
  bool study_accel = true;
  auto* study = app.add_subcommand("study", "Simulation-study harness");
  add_model_flags(study, study_o);
  study->add_option("--N", study_N, "Observation dimension");
  study->add_option("--T", study_o.T, "Series length");
  study->add_option("--sims", study_sims, "Replications per cell");
  study->add_flag("--accel,!--no-accel", study_accel, "Accelerated ML fits");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (sim->parsed()) {
      if (sim_o.jobs > 0) omp_set_num_threads(sim_o.jobs);
      return cmd_simulate(sim_o, sim_N, sim_params);
    }
    if (fit->parsed()) {
      if (fit_o.jobs > 0) omp_set_num_threads(fit_o.jobs);
      return cmd_fit(fit_o, fit_input, fit_em, fit_daem, fit_max_iter, fit_tol,
                     false);
    }
    if (sel->parsed()) {
      if (sel_o.jobs > 0) omp_set_num_threads(sel_o.jobs);
      return cmd_fit(sel_o, sel_input, sel_em, {}, sel_max_iter, sel_tol, true);
    }
    if (boot->parsed()) {
      if (boot_o.jobs > 0) omp_set_num_threads(boot_o.jobs);
      return cmd_bootstrap(boot_o, boot_params, boot_B, boot_level, boot_methods,
                           boot_targets, boot_match);
    }
    if (ext->parsed()) return cmd_extract(ext_o, ext_params, ext_max_lag);
    if (study->parsed()) {
      if (study_o.jobs > 0) omp_set_num_threads(study_o.jobs);
      return cmd_study(study_o, study_N, study_sims, study_accel);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NotStationaryError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const SingularMomentError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}
