#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mssm/em.hpp"
#include "mssm/types.hpp"

namespace mssm {

/// One simulation-study cell: generator dimensions plus fit settings.
struct StudyConfig {
  ModelKind kind = ModelKind::Dyn;
  int N = 10, T = 400, M = 2, p = 2, r = 2;
  int n_sims = 50;
  std::uint64_t seed = 1;
  int sw_window = 31;
  int sw_stride = 1;
  FitOptions fit;  // used for the maximum-likelihood estimator
};

/// One estimator's metrics on one simulated dataset.
struct StudyRow {
  int sim = 0;
  std::string estimator;  // SW-KM | SSM-OLS | SSM-ML | OR-OLS | OR-ML
  double classification_rate = 0.0;
  std::map<std::string, double> rel_errors;  // target -> relative L1,1 error
};

/// Run every estimator on n_sims datasets from the study generators.
/// Estimates are matched to the truth by classification rate and, for the
/// Dyn/Obs kinds, A and Q are aligned through B = (C_hat' C_hat)^{-1}
/// C_hat' C before comparison. Per-simulation failures are logged and
/// skipped.
std::vector<StudyRow> run_study(const StudyConfig& config);

/// Relative L1,1 error summed across a list of (estimate, truth) pairs.
double rel_l11_error(const std::vector<Matrix>& est, const std::vector<Matrix>& truth);

}  // namespace mssm
