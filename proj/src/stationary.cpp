#include "mssm/stationary.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mssm/errors.hpp"
#include "mssm/numerics.hpp"

namespace mssm {

StationaryMeasures stationary_measures(const ThetaParams& theta, const ModelSpec& spec,
                                       int max_lag) {
  const int M = spec.M, r = spec.r, N = spec.N;
  const bool has_noise = spec.kind != ModelKind::Var;
  StationaryMeasures out;
  out.cov_y.resize(M);
  out.corr_y.resize(M);
  out.acf.resize(M);
  out.pcorr.resize(M);

  for (int j = 0; j < M; ++j) {
    CompanionSystem sys = make_companion(theta.A[j], theta.Q[j]);
    Matrix Sigma;
    try {
      Sigma = stationary_cov_companion(sys);
    } catch (const NotStationaryError&) {
      throw NotStationaryError(
          "stationary_measures: regime " + std::to_string(j + 1) + " is not stable",
          j);
    }
    const Matrix& C = theta.C[j];
    Matrix cov = symmetrize(C * Sigma.topLeftCorner(r, r) * C.transpose());
    if (has_noise) cov += theta.R[j];
    cov = symmetrize(cov);
    out.cov_y[j] = cov;

    Vector sd = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    Vector inv_sd = sd.unaryExpr([](double s) { return s > 1e-300 ? 1.0 / s : 0.0; });
    out.corr_y[j] = inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
    out.corr_y[j].diagonal().setOnes();

    std::vector<Matrix> lags = cross_lag_cov(sys, Sigma, max_lag);
    Matrix acf(N, max_lag + 1);
    Vector var0 = cov.diagonal();
    for (int l = 0; l <= max_lag; ++l) {
      Vector num = (C * lags[l].topLeftCorner(r, r) * C.transpose()).diagonal();
      if (l == 0 && has_noise) num += theta.R[j].diagonal();
      for (int k = 0; k < N; ++k)
        acf(k, l) = var0(k) > 1e-300 ? num(k) / var0(k) : (l == 0 ? 1.0 : 0.0);
    }
    out.acf[j] = acf;

    Matrix prec = cov;
    prec.diagonal().array() += 1e-12 * (1.0 + cov.trace() / N);
    Eigen::LLT<Matrix> llt(prec);
    if (llt.info() != Eigen::Success)
      throw NumericalFailure("stationary_measures: covariance not invertible");
    Matrix P = llt.solve(Matrix::Identity(N, N));
    Matrix pc(N, N);
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b)
        pc(a, b) = a == b ? 1.0 : -P(a, b) / std::sqrt(P(a, a) * P(b, b));
    out.pcorr[j] = pc;
  }
  return out;
}

Vector fc_feature(const StationaryMeasures& measures, int regime) {
  const Matrix& cov = measures.cov_y.at(regime);
  const int N = static_cast<int>(cov.rows());
  Vector v(N * (N + 1) / 2);
  int idx = 0;
  for (int c = 0; c < N; ++c)
    for (int i = c; i < N; ++i) v(idx++) = cov(i, c);
  double norm = v.norm();
  if (norm <= 1e-300)
    throw std::invalid_argument("fc_feature: zero covariance matrix");
  return v / norm;
}

double weighted_fc_distance(const std::vector<Vector>& feats_a, const Vector& w_a,
                            const std::vector<Vector>& feats_b, const Vector& w_b) {
  if (feats_a.empty() || feats_b.empty())
    throw std::invalid_argument("weighted_fc_distance: empty feature set");
  auto nearest_sq = [](const Vector& v, const std::vector<Vector>& set) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vector& u : set) best = std::min(best, (v - u).squaredNorm());
    return best;
  };
  double d = 0.0;
  for (size_t i = 0; i < feats_a.size(); ++i)
    d += 0.5 * w_a(i) * nearest_sq(feats_a[i], feats_b);
  for (size_t j = 0; j < feats_b.size(); ++j)
    d += 0.5 * w_b(j) * nearest_sq(feats_b[j], feats_a);
  return d;
}

double weighted_fc_variance(const std::vector<Vector>& feats, const Vector& w) {
  double w2 = w.squaredNorm();
  if (!(w2 < 1.0 - 1e-12))
    throw std::invalid_argument(
        "weighted_fc_variance: undefined when one regime carries all weight");
  double acc = 0.0;
  for (size_t i = 0; i < feats.size(); ++i)
    for (size_t j = 0; j < feats.size(); ++j)
      acc += w(i) * w(j) * (feats[i] - feats[j]).squaredNorm();
  return acc / (1.0 - w2);
}

}  // namespace mssm
