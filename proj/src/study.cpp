#include "mssm/study.hpp"

#include <Eigen/Cholesky>
#include <iostream>

#include "mssm/init.hpp"
#include "mssm/numerics.hpp"
#include "mssm/simulate.hpp"
#include "mssm/stationary.hpp"

namespace mssm {

namespace {

/// Undo the basis ambiguity before comparing state-space parameters:
/// B maps the estimated state basis onto the true one, A -> B^{-1} A B,
/// Q -> B^{-1} Q B^{-T}.
struct Alignment {
  Matrix B, Binv;
};

Alignment align_basis(const Matrix& C_hat, const Matrix& C_true) {
  Alignment a;
  Matrix G = C_hat.transpose() * C_hat;
  a.B = G.ldlt().solve(C_hat.transpose() * C_true);
  a.Binv = a.B.partialPivLu().solve(Matrix::Identity(a.B.rows(), a.B.cols()));
  return a;
}

struct Metrics {
  double rate = 0.0;
  std::map<std::string, double> errors;
};

/// Match by classification rate, permute, align, and compute the relative
/// L1,1 errors for every comparable target of `est` against the truth.
Metrics evaluate(const ThetaParams& est_raw, const RegimeSequence& S_hat,
                 const SimOutput& truth_sim, const ThetaParams& truth,
                 const ModelSpec& spec, bool has_params) {
  Metrics out;
  auto [sigma, rate] = match_regimes_by_classification(S_hat, truth_sim.S, spec.M);
  out.rate = rate;
  if (!has_params) return out;

  ThetaParams est = permute_regimes(est_raw, sigma);
  const int M = spec.M;

  std::vector<Matrix> Zs{est.Z}, Zt{truth.Z};
  out.errors["Z"] = rel_l11_error(Zs, Zt);

  // per-regime basis alignment (identity for Var where C = I)
  std::vector<Alignment> align(M);
  for (int j = 0; j < M; ++j) align[j] = align_basis(est.C[j], truth.C[j]);

  std::vector<Matrix> Ae, At, Qe, Qt;
  for (int j = 0; j < M; ++j)
    for (int l = 0; l < spec.p; ++l) {
      Ae.push_back(align[j].Binv * est.A[j][l] * align[j].B);
      At.push_back(truth.A[j][l]);
    }
  for (int j = 0; j < M; ++j) {
    Qe.push_back(align[j].Binv * est.Q[j] * align[j].Binv.transpose());
    Qt.push_back(truth.Q[j]);
  }
  out.errors["A"] = rel_l11_error(Ae, At);
  out.errors["Q"] = rel_l11_error(Qe, Qt);

  if (spec.kind != ModelKind::Var) {
    std::vector<Matrix> Ce, Ct;
    for (int j = 0; j < M; ++j) {
      Matrix Ge = est.C[j].transpose() * est.C[j];
      Ce.push_back(est.C[j] * Ge.ldlt().solve(est.C[j].transpose()));
      Ct.push_back(truth.C[j] * truth.C[j].transpose());  // orthonormal truth
      if (spec.kind == ModelKind::Dyn) break;
    }
    out.errors["C"] = rel_l11_error(Ce, Ct);
    out.errors["R"] = rel_l11_error({est.R[0]}, {truth.R[0]});
  }

  try {
    StationaryMeasures me = stationary_measures(est, spec);
    StationaryMeasures mt = stationary_measures(truth, spec);
    out.errors["cov"] = rel_l11_error(me.cov_y, mt.cov_y);
    out.errors["corr"] = rel_l11_error(me.corr_y, mt.corr_y);
    out.errors["acf"] = rel_l11_error(me.acf, mt.acf);
  } catch (const std::exception&) {
    // unstable estimate: stationary targets unavailable for this run
  }
  return out;
}

ThetaParams cold_init(const Matrix& y, const ModelSpec& spec, const InitOptions& io) {
  switch (spec.kind) {
    case ModelKind::Var: return init_var(y, spec, io);
    case ModelKind::Obs: return init_obs(y, spec, io);
    default: return init_dyn(y, spec, io);
  }
}

}  // namespace

double rel_l11_error(const std::vector<Matrix>& est, const std::vector<Matrix>& truth) {
  double num = 0.0, den = 0.0;
  for (size_t k = 0; k < truth.size(); ++k) {
    num += (est[k] - truth[k]).cwiseAbs().sum();
    den += truth[k].cwiseAbs().sum();
  }
  return den > 0 ? num / den : 0.0;
}

std::vector<StudyRow> run_study(const StudyConfig& config) {
  ModelSpec spec;
  spec.kind = config.kind;
  spec.M = config.M;
  spec.p = config.p;
  spec.r = config.kind == ModelKind::Var ? config.N : config.r;
  spec.N = config.N;
  spec.constraints.stable_A = true;

  std::vector<std::vector<StudyRow>> per_sim(config.n_sims);

#pragma omp parallel for schedule(dynamic)
  for (int sim = 0; sim < config.n_sims; ++sim) {
    try {
      Rng rng = Rng::substream(config.seed, sim);
      ThetaParams truth = make_study_theta(spec, rng);
      SimOutput data = simulate_model(truth, spec, config.T, rng);
      std::vector<StudyRow> rows;

      InitOptions io;
      io.seed = config.seed ^ (0x5151u + sim);

      // SW-KM: windowed covariances + K-means
      {
        auto [S_sw, covs] = sliding_window_km(data.y, spec.M, config.sw_window,
                                              config.sw_stride, io.seed);
        auto [sigma, rate] =
            match_regimes_by_classification(S_sw, data.S, spec.M);
        StudyRow row{sim, "SW-KM", rate, {}};
        StationaryMeasures mt = stationary_measures(truth, spec);
        std::vector<Matrix> cov_e(spec.M), cov_t(spec.M);
        for (int j = 0; j < spec.M; ++j) {
          cov_e[sigma[j]] = covs[j];
          cov_t[j] = mt.cov_y[j];
        }
        row.rel_errors["cov"] = rel_l11_error(cov_e, cov_t);
        rows.push_back(row);
      }

      // SSM-OLS: the initializer, regimes decoded from one smoother pass
      ThetaParams theta0 = cold_init(data.y, spec, io);
      {
        SmoothedStats s0 = kim_smoother(data.y, theta0, spec);
        Metrics m = evaluate(theta0, decode_regimes(s0), data, truth, spec, true);
        rows.push_back({sim, "SSM-OLS", m.rate, m.errors});
      }

      // SSM-ML: full EM from the cold start
      {
        FitResult fit = config.fit.accelerate
                            ? accelerated_fit(data.y, spec, theta0, config.fit)
                            : em_fit(data.y, spec, theta0, config.fit);
        Metrics m = evaluate(fit.theta, fit.S_hat, data, truth, spec, true);
        rows.push_back({sim, "SSM-ML", m.rate, m.errors});
      }

      // OR-OLS: per-regime fits at the true regime labels
      ThetaParams oracle0 = init_with_labels(data.y, spec, data.S, io);
      {
        Metrics m = evaluate(oracle0, data.S, data, truth, spec, true);
        rows.push_back({sim, "OR-OLS", m.rate, m.errors});
      }

      // OR-ML: fixed-regime EM at the true labels
      {
        FitOptions fo = config.fit;
        fo.max_iter = std::max(fo.max_iter, 200);
        ThetaParams theta_or = fixed_regime_em(data.y, spec, data.S, oracle0, fo);
        Metrics m = evaluate(theta_or, data.S, data, truth, spec, true);
        rows.push_back({sim, "OR-ML", m.rate, m.errors});
      }

      per_sim[sim] = std::move(rows);
    } catch (const std::exception& e) {
#pragma omp critical
      std::cerr << "study: simulation " << sim + 1 << " failed: " << e.what()
                << "\n";
    }
  }

  std::vector<StudyRow> out;
  for (auto& rows : per_sim)
    for (auto& row : rows) out.push_back(std::move(row));
  return out;
}

}  // namespace mssm
