#include "mssm/bootstrap.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include "mssm/errors.hpp"
#include "mssm/init.hpp"
#include "mssm/simulate.hpp"

namespace mssm {

namespace {

ThetaParams refit_replicate(const Matrix& y_star, const ModelSpec& spec,
                            const FitOptions& fit_opts) {
  ThetaParams theta0;
  switch (spec.kind) {
    case ModelKind::Dyn: theta0 = init_dyn(y_star, spec); break;
    case ModelKind::Var: theta0 = init_var(y_star, spec); break;
    case ModelKind::Obs: theta0 = init_obs(y_star, spec); break;
  }
  FitResult fit = accelerated_fit(y_star, spec, theta0, fit_opts);
  return fit.theta;
}

std::vector<std::vector<int>> all_permutations(int M) {
  std::vector<int> perm(M);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::vector<int>> out;
  do {
    out.push_back(perm);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

}  // namespace

BootstrapEnsemble parametric_bootstrap(const ThetaParams& theta_hat,
                                       const ModelSpec& spec, int T, int B,
                                       const FitOptions& fit_opts,
                                       std::uint64_t seed) {
  BootstrapEnsemble ens;
  ens.seed = seed;
  std::vector<ThetaParams> reps(B);
  std::vector<double> lls(B);
  std::vector<char> ok(B, 0);

#pragma omp parallel for schedule(dynamic)
  for (int b = 0; b < B; ++b) {
    for (int attempt = 0; attempt < 2 && !ok[b]; ++attempt) {
      try {
        Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(b) +
                                           static_cast<std::uint64_t>(attempt) *
                                               0x100000000ULL);
        SimOutput sim = simulate_model(theta_hat, spec, T, rng);
        ThetaParams theta_b = refit_replicate(sim.y, spec, fit_opts);
        lls[b] = kim_filter(sim.y, theta_b, spec).loglik;
        reps[b] = std::move(theta_b);
        ok[b] = 1;
      } catch (const std::exception& e) {
        if (attempt == 1) {
#pragma omp critical
          std::cerr << "bootstrap: replicate " << b + 1 << " dropped (" << e.what()
                    << ")\n";
        }
      }
    }
  }

  for (int b = 0; b < B; ++b) {
    if (!ok[b]) continue;
    ens.replicates.push_back(std::move(reps[b]));
    ens.logliks.push_back(lls[b]);
  }
  ens.B = static_cast<int>(ens.replicates.size());
  if (ens.B < static_cast<int>(std::ceil(0.8 * B)))
    throw NumericalFailure("parametric_bootstrap: more than 20% of replicates failed");
  ens.derived.reserve(ens.B);
  for (const ThetaParams& th : ens.replicates)
    ens.derived.push_back(stationary_measures(th, spec));
  return ens;
}

BootstrapEnsemble match_replicates(BootstrapEnsemble ensemble,
                                   const ThetaParams& theta_hat,
                                   const ModelSpec& spec, MatchKey key) {
  const int M = spec.M;
  if (M > 8) throw std::invalid_argument("match_replicates: M > 8");
  if (M == 1) return ensemble;
  auto perms = all_permutations(M);

  StationaryMeasures hat_measures;
  if (key == MatchKey::Cov) hat_measures = stationary_measures(theta_hat, spec);

  for (int b = 0; b < ensemble.B; ++b) {
    const ThetaParams& rep = ensemble.replicates[b];
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> best_perm = perms[0];
    for (const auto& perm : perms) {
      // cost of assigning replicate regime j to label perm[j]
      double cost = 0.0;
      for (int j = 0; j < M; ++j) {
        switch (key) {
          case MatchKey::Pi:
            cost += std::abs(rep.pi(j) - theta_hat.pi(perm[j]));
            break;
          case MatchKey::A:
            for (int l = 0; l < spec.p; ++l)
              cost += (rep.A[j][l] - theta_hat.A[perm[j]][l]).cwiseAbs().sum();
            break;
          case MatchKey::Cov:
            cost += (ensemble.derived[b].cov_y[j] - hat_measures.cov_y[perm[j]])
                        .cwiseAbs()
                        .sum();
            break;
        }
      }
      if (cost < best) {
        best = cost;
        best_perm = perm;
      }
    }
    ensemble.replicates[b] = permute_regimes(rep, best_perm);
    StationaryMeasures& d = ensemble.derived[b];
    StationaryMeasures pd = d;
    for (int j = 0; j < M; ++j) {
      pd.cov_y[best_perm[j]] = d.cov_y[j];
      pd.corr_y[best_perm[j]] = d.corr_y[j];
      pd.acf[best_perm[j]] = d.acf[j];
      pd.pcorr[best_perm[j]] = d.pcorr[j];
    }
    d = std::move(pd);
  }
  return ensemble;
}

double quantile_type7(std::vector<double> values, double prob) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const int n = static_cast<int>(values.size());
  if (n == 1) return values[0];
  double h = (n - 1) * prob;
  int lo = static_cast<int>(std::floor(h));
  lo = std::clamp(lo, 0, n - 2);
  double frac = h - lo;
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

ConfidenceBand scalar_interval(const std::vector<double>& replicate_values,
                               double estimate, double level, CiMethod method) {
  if (replicate_values.size() < 2)
    throw std::invalid_argument("confidence interval needs at least 2 replicates");
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("confidence level must be in (0,1)");
  const double alpha = 1.0 - level;
  ConfidenceBand band;
  band.estimate = estimate;
  switch (method) {
    case CiMethod::Percentile:
      band.lower = quantile_type7(replicate_values, alpha / 2);
      band.upper = quantile_type7(replicate_values, 1.0 - alpha / 2);
      break;
    case CiMethod::Basic:
      band.lower = 2.0 * estimate - quantile_type7(replicate_values, 1.0 - alpha / 2);
      band.upper = 2.0 * estimate - quantile_type7(replicate_values, alpha / 2);
      break;
    case CiMethod::Normal: {
      const int B = static_cast<int>(replicate_values.size());
      double mean =
          std::accumulate(replicate_values.begin(), replicate_values.end(), 0.0) / B;
      double ss = 0.0;
      for (double v : replicate_values) ss += (v - mean) * (v - mean);
      double se = std::sqrt(ss / (B - 1));
      double bias = mean - estimate;
      boost::math::normal_distribution<double> dist;
      double z = boost::math::quantile(dist, 1.0 - alpha / 2);
      band.lower = estimate - bias - z * se;
      band.upper = estimate - bias + z * se;
      break;
    }
  }
  if (band.lower > band.upper) std::swap(band.lower, band.upper);
  return band;
}

std::vector<double> flatten_target(const std::string& target, const ThetaParams& theta,
                                   const StationaryMeasures& measures,
                                   const ModelSpec& spec) {
  std::vector<double> out;
  auto push_all = [&out](const Matrix& X) {
    for (int c = 0; c < X.cols(); ++c)
      for (int i = 0; i < X.rows(); ++i) out.push_back(X(i, c));
  };
  if (target == "Z") {
    push_all(theta.Z);
  } else if (target == "A") {
    for (int j = 0; j < spec.M; ++j)
      for (int l = 0; l < spec.p; ++l) push_all(theta.A[j][l]);
  } else if (target == "Q") {
    for (int j = 0; j < spec.M; ++j) push_all(theta.Q[j]);
  } else if (target == "R") {
    push_all(theta.R[0]);
  } else if (target == "CCt") {
    for (int j = 0; j < spec.M; ++j) {
      Matrix G = theta.C[j].transpose() * theta.C[j];
      Matrix proj = theta.C[j] * G.ldlt().solve(theta.C[j].transpose());
      push_all(proj);
      if (spec.kind == ModelKind::Dyn) break;  // shared C: one projection
    }
  } else if (target == "cov") {
    for (const Matrix& X : measures.cov_y) push_all(X);
  } else if (target == "corr") {
    for (const Matrix& X : measures.corr_y) push_all(X);
  } else if (target == "acf") {
    for (const Matrix& X : measures.acf) push_all(X);
  } else if (target == "pcorr") {
    for (const Matrix& X : measures.pcorr) push_all(X);
  } else {
    throw std::invalid_argument("unknown bootstrap target: " + target);
  }
  return out;
}

std::vector<ConfidenceBand> confidence_intervals(
    const BootstrapEnsemble& ensemble, const ThetaParams& theta_hat,
    const ModelSpec& spec, const std::vector<std::string>& targets, double level,
    CiMethod method) {
  if (ensemble.B < 2)
    throw NumericalFailure("confidence_intervals: fewer than 2 replicates");
  StationaryMeasures hat_measures = stationary_measures(theta_hat, spec);

  std::vector<ConfidenceBand> bands;
  for (const std::string& target : targets) {
    std::vector<double> est = flatten_target(target, theta_hat, hat_measures, spec);
    std::vector<std::vector<double>> reps(est.size(),
                                          std::vector<double>(ensemble.B));
    for (int b = 0; b < ensemble.B; ++b) {
      std::vector<double> v =
          flatten_target(target, ensemble.replicates[b], ensemble.derived[b], spec);
      for (size_t i = 0; i < est.size(); ++i) reps[i][b] = v[i];
    }
    for (size_t i = 0; i < est.size(); ++i) {
      ConfidenceBand band = scalar_interval(reps[i], est[i], level, method);
      band.target = target;
      band.index = static_cast<int>(i);
      bands.push_back(band);
    }
  }
  return bands;
}

}  // namespace mssm
