#pragma once

#include <stdexcept>
#include <string>

namespace mssm {

/// A regime's companion matrix has spectral radius >= 1.
struct NotStationaryError : std::runtime_error {
  int regime;  // 0-based; -1 if not regime-specific
  explicit NotStationaryError(const std::string& msg, int regime_ = -1)
      : std::runtime_error(msg), regime(regime_) {}
};

/// Irrecoverable numerical breakdown (singular innovation covariance, ...).
struct NumericalFailure : std::runtime_error {
  int time_index;  // 0-based time of failure, -1 if unknown
  int iteration;   // EM iteration, -1 if not inside EM
  explicit NumericalFailure(const std::string& msg, int time_index_ = -1,
                            int iteration_ = -1)
      : std::runtime_error(msg), time_index(time_index_), iteration(iteration_) {}
};

/// Weighted moment matrix stayed singular after regularized retry.
struct SingularMomentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Data matrix has rank below the requested state dimension.
struct RankDeficientError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mssm
