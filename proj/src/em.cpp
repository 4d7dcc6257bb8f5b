#include "mssm/em.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "mssm/errors.hpp"

namespace mssm {

namespace {

double rel_improvement(double cur, double prev) {
  return (cur - prev) / std::max(1.0, std::abs(prev));
}

struct LoopResult {
  ThetaParams theta_last;
  ThetaParams theta_best;
  SmoothedStats stats_best;
  double best_L = -std::numeric_limits<double>::infinity();
  std::vector<double> trace;
  int n_passes = 0;
};

/// Core E/M loop shared by the plain, DAEM, and accelerated drivers.
LoopResult em_loop(const Matrix& y, const ModelSpec& spec, const ThetaParams& theta0,
                   int max_iter, double tol_rel, int patience, double beta) {
  LoopResult out;
  out.theta_last = theta0;
  out.theta_best = theta0;
  int no_improve = 0;

  for (int k = 0; k < max_iter; ++k) {
    SmoothedStats stats;
    try {
      stats = kim_smoother(y, out.theta_last, spec);
    } catch (const NumericalFailure& e) {
      if (out.trace.empty()) throw;
      throw NumericalFailure(std::string(e.what()) + " (EM iteration " +
                                 std::to_string(k + 1) + ")",
                             e.time_index, k);
    }
    ++out.n_passes;
    out.trace.push_back(stats.loglik);
    if (stats.loglik > out.best_L) {
      out.best_L = stats.loglik;
      out.theta_best = out.theta_last;
      out.stats_best = stats;
    }
    if (k > 0) {
      double rel = rel_improvement(stats.loglik, out.trace[k - 1]);
      no_improve = rel < tol_rel ? no_improve + 1 : 0;
      if (no_improve >= patience) break;
    }
    if (k + 1 == max_iter) break;

    SmoothedStats tempered = temper_stats(stats, beta);
    SufficientMoments m = accumulate_moments(tempered, y, spec);
    out.theta_last = m_step(out.theta_last, m, spec);
  }
  return out;
}

FitResult finish(const Matrix& y, const ModelSpec& spec, LoopResult&& loop,
                 const FitOptions& opts) {
  FitResult fit;
  fit.theta = std::move(loop.theta_best);
  fit.stats = std::move(loop.stats_best);
  fit.loglik_trace = std::move(loop.trace);
  fit.S_hat = decode_regimes(fit.stats);
  fit.n_smoother_passes = loop.n_passes;
  fit.scores = selection_scores(fit, spec, y, opts);
  return fit;
}

}  // namespace

FitResult em_fit(const Matrix& y, const ModelSpec& spec, const ThetaParams& theta0,
                 const FitOptions& opts) {
  if (opts.accelerate) return accelerated_fit(y, spec, theta0, opts);
  if (!opts.daem_schedule.empty()) return daem_fit(y, spec, theta0, opts);
  LoopResult loop =
      em_loop(y, spec, theta0, opts.max_iter, opts.tol_rel, opts.patience, 1.0);
  return finish(y, spec, std::move(loop), opts);
}

FitResult daem_fit(const Matrix& y, const ModelSpec& spec, const ThetaParams& theta0,
                   const FitOptions& opts) {
  std::vector<double> schedule = opts.daem_schedule;
  if (schedule.empty()) schedule = {1.0};
  for (size_t i = 1; i < schedule.size(); ++i)
    if (schedule[i] < schedule[i - 1])
      throw std::invalid_argument("daem_fit: beta schedule must be nondecreasing");
  if (schedule.back() != 1.0)
    throw std::invalid_argument("daem_fit: final beta must be 1");

  ThetaParams theta = theta0;
  LoopResult all;
  all.theta_best = theta0;
  for (double beta : schedule) {
    LoopResult stage =
        em_loop(y, spec, theta, opts.max_iter, opts.tol_rel, opts.patience, beta);
    theta = stage.theta_last;
    all.n_passes += stage.n_passes;
    all.trace.insert(all.trace.end(), stage.trace.begin(), stage.trace.end());
    if (stage.best_L > all.best_L) {
      all.best_L = stage.best_L;
      all.theta_best = stage.theta_best;
      all.stats_best = stage.stats_best;
    }
  }
  all.theta_last = theta;
  return finish(y, spec, std::move(all), opts);
}

FitResult accelerated_fit(const Matrix& y, const ModelSpec& spec,
                          const ThetaParams& theta0, const FitOptions& opts) {
  ThetaParams theta = theta0;
  LoopResult all;
  all.theta_best = theta0;
  double prev_phase_L = -std::numeric_limits<double>::infinity();

  FitOptions inner = opts;
  inner.max_iter = opts.accel_inner_iters;
  inner.tol_rel = opts.accel_tight_tol;

  for (int cycle = 0; cycle < opts.accel_max_cycles; ++cycle) {
    // (a) short switching-EM phase with loose tolerance
    LoopResult phase = em_loop(y, spec, theta, opts.accel_outer_iters,
                               opts.accel_loose_tol, 1, 1.0);
    all.n_passes += phase.n_passes;
    all.trace.insert(all.trace.end(), phase.trace.begin(), phase.trace.end());
    if (phase.best_L > all.best_L) {
      all.best_L = phase.best_L;
      all.theta_best = phase.theta_best;
      all.stats_best = phase.stats_best;
    }
    if (cycle > 0 && rel_improvement(phase.best_L, prev_phase_L) < opts.tol_rel)
      break;
    prev_phase_L = phase.best_L;

    // (b) long fixed-regime phase at the decoded sequence
    RegimeSequence S_hat = decode_regimes(phase.stats_best);
    theta = fixed_regime_em(y, spec, S_hat, phase.theta_best, inner);
  }
  all.theta_last = theta;
  return finish(y, spec, std::move(all), opts);
}

ThetaParams fixed_regime_em(const Matrix& y, const ModelSpec& spec,
                            const RegimeSequence& S, const ThetaParams& theta0,
                            const FitOptions& opts, std::vector<double>* trace) {
  ThetaParams theta = theta0;
  ThetaParams best = theta0;
  double best_L = -std::numeric_limits<double>::infinity();
  double prev = -std::numeric_limits<double>::infinity();
  int no_improve = 0;

  for (int k = 0; k < opts.max_iter; ++k) {
    SmoothedStats stats = conditional_smoother(y, theta, spec, S);
    if (trace) trace->push_back(stats.loglik);
    if (stats.loglik > best_L) {
      best_L = stats.loglik;
      best = theta;
    }
    if (k > 0) {
      double rel = rel_improvement(stats.loglik, prev);
      no_improve = rel < opts.tol_rel ? no_improve + 1 : 0;
      if (no_improve >= opts.patience) break;
    }
    prev = stats.loglik;
    if (k + 1 == opts.max_iter) break;
    SufficientMoments m = accumulate_moments(stats, y, spec);
    theta = m_step(theta, m, spec, /*update_pi_Z=*/false);
  }
  return best;
}

int count_free_params(const ModelSpec& spec) {
  const ConstraintSet& c = spec.constraints;
  const int M = spec.M, p = spec.p, r = spec.r, N = spec.N, d = spec.state_dim();
  auto count_mask = [](const std::optional<FixedMask>& f) {
    return f && f->mask.size() > 0 ? static_cast<int>((f->mask.array() != 0).count())
                                   : 0;
  };
  int n = 0;
  // A
  int a_each = p * r * r - count_mask(c.fixed_A);
  n += (c.equal_across_regimes.count(ParamField::A) ? 1 : M) * a_each;
  // C
  if (spec.kind != ModelKind::Var) {
    int c_each = N * r - count_mask(c.fixed_C) - (c.scale_C ? r : 0);
    int copies = spec.kind == ModelKind::Dyn ||
                         c.equal_across_regimes.count(ParamField::C)
                     ? 1
                     : M;
    n += copies * c_each;
  }
  // Q
  int q_each = c.diag_Q ? r : r * (r + 1) / 2;
  n += (c.equal_across_regimes.count(ParamField::Q) ? 1 : M) * q_each;
  // R (tied across regimes for Dyn/Obs, absent for Var)
  if (spec.kind != ModelKind::Var) n += c.diag_R ? N : N * (N + 1) / 2;
  // mu / Sigma
  n += (c.equal_across_regimes.count(ParamField::Mu) ? 1 : M) * d;
  int s_each = c.diag_Sigma ? d : d * (d + 1) / 2;
  n += (c.equal_across_regimes.count(ParamField::Sigma) ? 1 : M) * s_each;
  // chain
  n += (M - 1) + M * (M - 1);
  return n;
}

SelectionScores selection_scores(const FitResult& fit, const ModelSpec& spec,
                                 const Matrix& y, const FitOptions& opts) {
  const int T = static_cast<int>(y.cols());
  const int M = spec.M, p = spec.p, r = spec.r;
  SelectionScores s;
  s.loglik = fit.stats.loglik;
  s.n_free = count_free_params(spec);
  s.aic = -2.0 * s.loglik + 2.0 * s.n_free;
  s.bic = -2.0 * s.loglik + std::log(static_cast<double>(T)) * s.n_free;

  // one-step-ahead predictions, kind-specific
  FilterStats f = kim_filter(y, fit.theta, spec);
  double err = 0.0;
  for (int t = p; t < T; ++t) {
    Vector yhat = Vector::Zero(spec.N);
    switch (spec.kind) {
      case ModelKind::Dyn: {
        Vector x = Vector::Zero(spec.state_dim());
        for (int j = 0; j < M; ++j) x += f.W_pred(j, t) * f.x_pred[j][0].col(t);
        yhat = fit.theta.C[0] * x.head(r);
        break;
      }
      case ModelKind::Var: {
        int prev = fit.S_hat[t - 1];
        for (int j = 0; j < M; ++j) {
          Vector acc = Vector::Zero(spec.N);
          for (int l = 0; l < p; ++l) acc += fit.theta.A[j][l] * y.col(t - l - 1);
          yhat += fit.theta.Z(prev, j) * acc;
        }
        break;
      }
      case ModelKind::Obs: {
        int prev = fit.S_hat[t - 1];
        for (int j = 0; j < M; ++j)
          yhat += fit.theta.Z(prev, j) *
                  (fit.theta.C[j] * f.x_pred[j][j].col(t).head(r));
        break;
      }
    }
    err += (y.col(t) - yhat).lpNorm<1>();
  }
  double denom = static_cast<double>(T - p) * (opts.mape_obs_dim ? spec.N : r);
  s.mape = denom > 0 ? err / denom : 0.0;
  return s;
}

}  // namespace mssm
