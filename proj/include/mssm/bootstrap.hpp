#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mssm/em.hpp"
#include "mssm/stationary.hpp"
#include "mssm/types.hpp"

namespace mssm {

struct BootstrapEnsemble {
  std::vector<ThetaParams> replicates;        // regime-matched after match_replicates
  std::vector<StationaryMeasures> derived;    // per replicate
  std::vector<double> logliks;
  int B = 0;  // surviving replicates
  std::uint64_t seed = 0;
};

enum class MatchKey { Pi, A, Cov };

enum class CiMethod { Percentile, Basic, Normal };

struct ConfidenceBand {
  std::string target;  // e.g. "Z", "cov"
  int index = 0;       // flattened coefficient index within the target
  double lower = 0.0, estimate = 0.0, upper = 0.0;
};

/// Simulate-and-refit bootstrap of the MLE: per replicate a fresh regime
/// path / state path / observation sample is drawn under theta_hat and the
/// model is refit from a cold initialization. Replicates run in parallel
/// with per-index RNG streams; failures are retried once with a new seed,
/// then dropped with a warning. Throws when more than 20% of replicates
/// fail.
BootstrapEnsemble parametric_bootstrap(const ThetaParams& theta_hat,
                                       const ModelSpec& spec, int T, int B,
                                       const FitOptions& fit_opts,
                                       std::uint64_t seed);

/// Permute every replicate's regime labels to best match theta_hat: the
/// default key minimizes ||sigma(pi*) - pi||_1; alternatives match on the
/// A blocks or on the stationary covariances.
BootstrapEnsemble match_replicates(BootstrapEnsemble ensemble,
                                   const ThetaParams& theta_hat,
                                   const ModelSpec& spec,
                                   MatchKey key = MatchKey::Pi);

/// Empirical quantile with type-7 linear interpolation.
double quantile_type7(std::vector<double> values, double prob);

/// Intervals for one scalar target from its replicate values.
ConfidenceBand scalar_interval(const std::vector<double>& replicate_values,
                               double estimate, double level, CiMethod method);

/// Scalar extraction used by the CLI and the CI machinery: flattens the
/// requested target ("Z", "A", "Q", "R", "CCt", "cov", "corr", "acf",
/// "pcorr") of one parameter set to named coefficients.
std::vector<double> flatten_target(const std::string& target, const ThetaParams& theta,
                                   const StationaryMeasures& measures,
                                   const ModelSpec& spec);

/// Bands for every coefficient of the requested targets at the given
/// pointwise level. Requires at least 2 surviving replicates (B >= 20
/// recommended for the quantile methods).
std::vector<ConfidenceBand> confidence_intervals(
    const BootstrapEnsemble& ensemble, const ThetaParams& theta_hat,
    const ModelSpec& spec, const std::vector<std::string>& targets, double level,
    CiMethod method);

}  // namespace mssm
