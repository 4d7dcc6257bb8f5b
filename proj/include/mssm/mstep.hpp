#pragma once

#include "mssm/kim.hpp"
#include "mssm/types.hpp"

namespace mssm {

/// Weighted sums of the smoothed moments that the M-step updates consume.
/// Regime-conditional weights for the switching pieces; for the Obs kind
/// the state sums are regime-marginal per chain (each chain evolves at
/// every t under its own dynamics).
struct SufficientMoments {
  // state regression, per regime/chain j
  std::vector<Matrix> SA1;   // r x d: sum_t w E(x_t x~_{t-1}')
  std::vector<Matrix> SA2;   // d x d: sum_t w E(x~_{t-1} x~_{t-1}')
  std::vector<Matrix> SQ;    // r x r: sum_t w E(x_t x_t')
  std::vector<double> swA;   // sum_t w over t >= 2
  // observation regression, per regime j
  std::vector<Matrix> SC1;   // N x r: sum_t W^j y_t E(x_t | S_t=j)'
  std::vector<Matrix> SC2;   // r x r: sum_t W^j E(x_t x_t' | S_t=j)
  std::vector<Matrix> Syy;   // N x N: sum_t W^j y_t y_t'
  std::vector<double> swC;   // sum_t W^j
  // initial state, per regime/chain j
  std::vector<Vector> x1;    // d
  std::vector<Matrix> P1;    // d x d second moment
  std::vector<double> w1;
  // regime chain
  Vector W1;      // smoothed initial regime probabilities
  Matrix Zcount;  // M x M: sum_t W_{t-1,t|T}^{ij}
  int T = 0;
};

/// OpenMP block-reduced accumulation (deterministic for any thread count).
SufficientMoments accumulate_moments(const SmoothedStats& stats, const Matrix& y,
                                     const ModelSpec& spec);
/// Serial reference implementation kept for testing the parallel kernel.
SufficientMoments accumulate_moments_serial(const SmoothedStats& stats,
                                            const Matrix& y, const ModelSpec& spec);

/// Expected complete-data log-likelihood (the EM Q-function) evaluated
/// from the sufficient moments. Throws on non-PD covariance parameters.
double q_function(const ThetaParams& theta, const SufficientMoments& m,
                  const ModelSpec& spec);

/// Closed-form unconstrained maximizers of the Q-function. Gram matrices
/// get a small ridge; a singular system is retried once with a larger
/// ridge, then reported as SingularMomentError.
ThetaParams update_unconstrained(const SufficientMoments& m, const ModelSpec& spec,
                                 const ThetaParams& current);

/// Quadratic objective piece f(X) = tr{ W (-2 B1 X' + X B2 X') } whose
/// minimization is each coefficient update; exposed for the constraint
/// handlers and their oracles.
double coefficient_objective(const Matrix& X, const Matrix& W, const Matrix& B1,
                             const Matrix& B2);

/// Minimize f over X with mask-pinned entries held at the given values.
Matrix apply_fixed_constraints(const Matrix& raw_update, const FixedMask& fixed,
                               const Matrix& W, const Matrix& B1, const Matrix& B2);

/// Projected gradient for column-norm targets: gradient step on f, then
/// rescale columns; returns the best feasible iterate.
Matrix apply_scaling_constraint(const Matrix& C_update, const Vector& targets,
                                const Matrix& W, const Matrix& B1, const Matrix& B2,
                                int max_iter = 100);

/// Spectral-radius guard: unstable updates are shrunk lag-wise and kept
/// only if they improve the Q-contribution relative to A_current.
std::vector<Matrix> apply_eigen_constraint(const std::vector<Matrix>& A_update,
                                           const std::vector<Matrix>& A_current,
                                           double epsilon, const Matrix& Qinv,
                                           const Matrix& SA1, const Matrix& SA2);

/// One full constrained M-step. Each parameter family is accepted only if
/// it does not decrease the Q-function.
ThetaParams m_step(const ThetaParams& theta, const SufficientMoments& m,
                   const ModelSpec& spec, bool update_pi_Z = true);

/// Temper smoothed regime probabilities for DAEM: joints are raised to
/// beta and renormalized per t, marginals rebuilt from them. beta = 1 is
/// the identity.
SmoothedStats temper_stats(const SmoothedStats& stats, double beta);

}  // namespace mssm
