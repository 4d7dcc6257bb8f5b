#pragma once

#include <cstdint>

#include "mssm/kim.hpp"
#include "mssm/mstep.hpp"
#include "mssm/types.hpp"

namespace mssm {

struct FitOptions {
  int max_iter = 500;
  double tol_rel = 1e-6;  // relative log-likelihood improvement
  int patience = 5;       // consecutive insufficient-increase iterations before stop
  std::vector<double> daem_schedule;  // nondecreasing, last entry 1

  bool accelerate = false;
  int accel_outer_iters = 30;     // switching-EM iterations per (a) phase
  int accel_inner_iters = 500;    // fixed-regime iterations per (b) phase
  double accel_loose_tol = 5e-5;  // (a) stopping tolerance
  double accel_tight_tol = 5e-6;  // (b) stopping tolerance
  int accel_max_cycles = 20;

  std::uint64_t seed = 0;
  // Eq.-(10)-style prediction error divides by (T-p)*r; set true to divide
  // by (T-p)*N instead.
  bool mape_obs_dim = false;
};

struct SelectionScores {
  double loglik = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  double mape = 0.0;
  int n_free = 0;
};

struct FitResult {
  ThetaParams theta;        // best iterate by log-likelihood
  SmoothedStats stats;      // smoothed statistics at that iterate
  std::vector<double> loglik_trace;
  RegimeSequence S_hat;
  SelectionScores scores;
  int n_smoother_passes = 0;
};

/// EM with best-iterate tracking; stops on max_iter or `patience`
/// consecutive iterations of relative improvement below tol_rel. M-step
/// families are individually gated on Q increase.
FitResult em_fit(const Matrix& y, const ModelSpec& spec, const ThetaParams& theta0,
                 const FitOptions& opts = {});

/// Deterministic-annealing EM: smoothed regime probabilities are tempered
/// by each beta in the schedule before the M-step; the final stage
/// (beta = 1) is plain EM.
FitResult daem_fit(const Matrix& y, const ModelSpec& spec, const ThetaParams& theta0,
                   const FitOptions& opts);

/// Alternates short switching-EM phases with long fixed-regime phases
/// (regimes pinned to the decoded sequence); returns the best iterate by
/// the full switching likelihood. n_smoother_passes counts switching
/// passes only.
FitResult accelerated_fit(const Matrix& y, const ModelSpec& spec,
                          const ThetaParams& theta0, const FitOptions& opts = {});

/// Exact (non-switching) EM with the regime path fixed: time-varying
/// Kalman smoothing plus hard-weight M-steps; pi and Z stay frozen. The
/// optional trace records log P(y, S | theta) per iteration (monotone).
ThetaParams fixed_regime_em(const Matrix& y, const ModelSpec& spec,
                            const RegimeSequence& S, const ThetaParams& theta0,
                            const FitOptions& opts = {},
                            std::vector<double>* trace = nullptr);

/// AIC/BIC per the information criteria with a constraint-aware free
/// parameter count, plus the kind-specific one-step-ahead prediction error.
SelectionScores selection_scores(const FitResult& fit, const ModelSpec& spec,
                                 const Matrix& y, const FitOptions& opts = {});

int count_free_params(const ModelSpec& spec);

}  // namespace mssm
