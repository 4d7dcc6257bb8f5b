#pragma once

#include <cstdint>
#include <utility>

#include "mssm/types.hpp"

namespace mssm {

struct InitOptions {
  int kappa = 0;  // 0: floor(T / (10*p*r)) clamped to [M+1, 50]
  std::uint64_t seed = 12345;
  bool use_binary_segmentation = false;  // replaces the equal-length partition
  double binseg_epsilon = 0.05;
  int min_seg_len = 0;  // 0: p+1
};

/// Starting values for the switching-dynamics model: row-centered SVD for
/// C and the state path, diagonal residual R, per-interval VAR fits
/// clustered by K-means, per-cluster refits, hard-label pi/Z.
/// Throws RankDeficientError when the data SVD has rank < r.
ThetaParams init_dyn(const Matrix& y, const ModelSpec& spec, const InitOptions& opts = {});

/// Same pipeline on the raw observations (no SVD step), C = I, R = 0.
ThetaParams init_var(const Matrix& y, const ModelSpec& spec, const InitOptions& opts = {});

/// Switching-observations starting values: regimes predicted with the
/// init_dyn machinery, then per-regime SVD / residual covariance / VAR
/// fits; R is the dwell-weighted average of the per-regime residual
/// covariances. Empty regimes are merged into the largest one (warns).
ThetaParams init_obs(const Matrix& y, const ModelSpec& spec, const InitOptions& opts = {});

/// Oracle variant: per-regime fits with the regime labels given instead of
/// estimated (the clustering step is skipped).
ThetaParams init_with_labels(const Matrix& y, const ModelSpec& spec,
                             const RegimeSequence& S, const InitOptions& opts = {});

/// Recursive SSE-based change-point search on a state path. Returns sorted
/// 0-based indices of segment starts (excluding 0). A split at tau is
/// accepted iff SSE(left) + SSE(right) <= (1 - epsilon) * SSE(whole).
std::vector<int> binary_segmentation(const Matrix& xhat, int p, double epsilon,
                                     int min_len);

/// Sliding-window covariance features clustered by K-means; labels per time
/// point come from the window centered there (edges clipped). Also returns
/// the per-regime sample covariances.
std::pair<RegimeSequence, std::vector<Matrix>> sliding_window_km(
    const Matrix& y, int M, int window_len = 31, int stride = 1,
    std::uint64_t seed = 12345);

}  // namespace mssm
