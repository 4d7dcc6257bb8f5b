#pragma once

#include "mssm/types.hpp"

namespace mssm {

/// Forward-pass output. State moments are kept per (regime j, chain c) in
/// companion coordinates: one chain for Dyn/Var, M chains for Obs (chain c
/// conditioned on S_t = j). Means are d x T with d = p*r; covariances are
/// per-t matrices.
struct FilterStats {
  Matrix W_pred;    // M x T, W_{t|t-1}^j (column 0 holds pi)
  Matrix W_filt;    // M x T, W_{t|t}^j
  Vector log_incr;  // log P(y_t | y_{1:t-1})
  double loglik = 0.0;
  std::vector<std::vector<Matrix>> x_pred, x_filt;                 // [j][c]: d x T
  std::vector<std::vector<std::vector<Matrix>>> V_pred, V_filt;    // [j][c][t]: d x d
};

/// Backward-pass output: every smoothed quantity the M-step consumes.
/// W_joint[t](i,j) = P(S_t = i, S_{t+1} = j | y_{1:T}) for t = 0..T-2.
/// P_lag[j][c][t]  = E(x^c_t x^c_{t-1}' | S_t = j, y_{1:T}) for t >= 1,
/// P_prev[j][c][t] = E(x^c_{t-1} x^c_{t-1}' | S_t = j, y_{1:T}) for t >= 1.
struct SmoothedStats {
  Matrix W_smooth;              // M x T
  std::vector<Matrix> W_joint;  // T-1 entries, M x M
  double loglik = 0.0;
  std::vector<std::vector<Matrix>> x_smooth;                       // [j][c]: d x T
  std::vector<std::vector<std::vector<Matrix>>> V_smooth;          // [j][c][t]
  std::vector<std::vector<std::vector<Matrix>>> P_lag, P_prev;     // [j][c][t]
};

/// Kim/Hamilton forward filter with depth-1 collapsing over regime pairs.
/// Throws NumericalFailure (with the time index) if an innovation
/// covariance stays singular after regularization.
FilterStats kim_filter(const Matrix& y, const ThetaParams& theta, const ModelSpec& spec);

/// Kim smoother: backward pass with per-pair collapsing mirroring the
/// forward approximation; reduces to Rauch-Tung-Striebel at M = 1.
SmoothedStats kim_smoother(const Matrix& y, const ThetaParams& theta,
                           const ModelSpec& spec);

/// Most likely regime per time point (ties -> smallest label).
RegimeSequence decode_regimes(const SmoothedStats& stats);

/// Time-averaged smoothed occupancy per regime; sums to 1.
Vector dwell_times(const SmoothedStats& stats);

/// Exact conditional smoother given a fixed regime path: a time-varying
/// Kalman pass with regime-S_t parameters at each t. Moments are placed at
/// the conditioning regime and joint weights are indicators, so the output
/// plugs into the same M-step. loglik is log P(y, S | theta).
SmoothedStats conditional_smoother(const Matrix& y, const ThetaParams& theta,
                                   const ModelSpec& spec, const RegimeSequence& S);

}  // namespace mssm
