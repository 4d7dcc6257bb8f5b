#pragma once

#include "mssm/types.hpp"

namespace mssm {

/// Regime-specific long-run second-order structure of the observations.
struct StationaryMeasures {
  std::vector<Matrix> cov_y;   // N x N per regime
  std::vector<Matrix> corr_y;  // N x N per regime
  std::vector<Matrix> acf;     // N x (max_lag + 1) per regime; column 0 is 1
  std::vector<Matrix> pcorr;   // N x N partial correlations, unit diagonal
};

/// cov_y = C Sigma_x C' + R (R omitted at positive lags and absent for the
/// Var kind); correlations by diagonal normalization; partial correlations
/// from the scaled inverse covariance. Throws NotStationaryError naming
/// the offending regime.
StationaryMeasures stationary_measures(const ThetaParams& theta, const ModelSpec& spec,
                                       int max_lag = 5);

/// Vectorized lower triangle (with diagonal) of a regime's stationary
/// covariance, scaled to unit Euclidean norm. Throws on a zero matrix.
Vector fc_feature(const StationaryMeasures& measures, int regime);

/// Weighted two-sided nearest-feature distance between two regime sets.
double weighted_fc_distance(const std::vector<Vector>& feats_a, const Vector& w_a,
                            const std::vector<Vector>& feats_b, const Vector& w_b);

/// Weighted dispersion of one regime set's features; undefined (throws)
/// when a single weight carries all mass.
double weighted_fc_variance(const std::vector<Vector>& feats, const Vector& w);

}  // namespace mssm
