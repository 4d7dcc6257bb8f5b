#pragma once

#include <vector>

#include "mssm/types.hpp"

namespace mssm {

/// Order-1 companion form of a lag-block VAR: A_tilde is the pr x pr
/// companion matrix, Q_tilde the pr x pr covariance whose top-left r x r
/// block is the innovation covariance (zero elsewhere).
struct CompanionSystem {
  Matrix A_tilde;
  Matrix Q_tilde;
};

CompanionSystem make_companion(const std::vector<Matrix>& lag_blocks, const Matrix& Q);

/// Largest eigenvalue modulus. Throws std::invalid_argument on non-square input.
double spectral_radius(const Matrix& A);

/// Scale lag-l blocks by ((1-epsilon)/rho)^l when the companion spectral
/// radius rho is >= 1; stable inputs pass through unchanged. Idempotent.
std::vector<Matrix> shrink_to_stable(const std::vector<Matrix>& lag_blocks, double epsilon);

/// Stationary covariance: the solution of Sigma = A Sigma A' + Q.
/// Dispatches to the Sylvester route A^{-1} Sigma - Sigma A' = A^{-1} Q when
/// A is invertible (condition estimate < 1e12), otherwise to the vectorized
/// solve (I - A (x) A) vec(Sigma) = vec(Q). Throws NotStationaryError when
/// the spectral radius is >= 1.
Matrix stationary_cov_companion(const CompanionSystem& sys);

/// Reference vectorized path, exposed so the two routes can be cross-checked.
Matrix stationary_cov_vectorized(const CompanionSystem& sys);

/// Vectorized path reduced to the r(r+1)/2 + (p-1)r^2 unique entries of the
/// block-Toeplitz solution. Optional optimization; agrees with the full solve.
Matrix stationary_cov_vectorized_reduced(const CompanionSystem& sys, int r);

/// Solve the Sylvester equation A X + X B = C by complex Schur reduction.
Matrix solve_sylvester(const Matrix& A, const Matrix& B, const Matrix& C);

/// Lagged stationary covariances: entry l is A^l Sigma (entry 0 is Sigma).
std::vector<Matrix> cross_lag_cov(const CompanionSystem& sys, const Matrix& Sigma,
                                  int max_lag);

}  // namespace mssm
