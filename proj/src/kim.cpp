#include "mssm/kim.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <cmath>
#include <limits>

#include "mssm/errors.hpp"

namespace mssm {

namespace {

constexpr double kLogFloor = -690.0;  // log(1e-300)
constexpr double kTwoPi = 6.283185307179586476925286766559;

double safe_log(double x) { return x > 1e-300 ? std::log(x) : kLogFloor; }

/// Measurement update for C_tilde = [C 0]: only the top r companion rows
/// are observed. Returns the predictive log density of y.
double measurement_update(const Vector& m_pred, const Matrix& V_pred,
                          const Matrix& C, const Matrix& R, const Vector& y,
                          Vector& m_upd, Matrix& V_upd, int t) {
  const int N = static_cast<int>(y.size());
  const int r = static_cast<int>(C.cols());

  Matrix S = C * V_pred.topLeftCorner(r, r) * C.transpose() + R;
  S = symmetrize(S);
  S.diagonal().array() += 1e-10 * (1.0 + S.trace() / N);
  Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success) {
    S.diagonal().array() += 1e-6 * (1.0 + S.trace() / N);
    llt.compute(S);
    if (llt.info() != Eigen::Success)
      throw NumericalFailure("kim_filter: singular innovation covariance at t=" +
                                 std::to_string(t + 1),
                             t);
  }
  Vector e = y - C * m_pred.head(r);
  double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  double maha = e.dot(llt.solve(e));
  double logdens = -0.5 * (N * std::log(kTwoPi) + logdet + maha);

  Matrix VCt = V_pred.leftCols(r) * C.transpose();       // d x N
  Matrix K = llt.solve(VCt.transpose()).transpose();     // d x N
  m_upd = m_pred + K * e;
  V_upd = symmetrize(V_pred - K * S * K.transpose());
  return logdens;
}

/// Moment-matched collapse of a Gaussian mixture.
void collapse(const std::vector<Vector>& means, const std::vector<Matrix>& covs,
              const Vector& w, Vector& m, Matrix& V) {
  const int n = static_cast<int>(means.size());
  m = Vector::Zero(means[0].size());
  for (int i = 0; i < n; ++i) m += w(i) * means[i];
  V = Matrix::Zero(covs[0].rows(), covs[0].cols());
  for (int i = 0; i < n; ++i) {
    Vector dm = means[i] - m;
    V += w(i) * (covs[i] + dm * dm.transpose());
  }
  V = symmetrize(V);
}

Vector normalized_or_uniform(Vector w) {
  double s = w.sum();
  if (s > 1e-300) return w / s;
  return Vector::Constant(w.size(), 1.0 / w.size());
}

/// Shared precomputation: per-chain companion dynamics and the
/// chain/regime index mapping that unifies the three model kinds.
struct System {
  const ModelSpec& spec;
  int M, N, r, d, n_chains;
  std::vector<Matrix> comp;    // companion matrix per regime
  std::vector<Matrix> Qt;      // companion-padded innovation covariance

  explicit System(const ThetaParams& theta, const ModelSpec& spec_)
      : spec(spec_), M(spec_.M), N(spec_.N), r(spec_.r), d(spec_.state_dim()),
        n_chains(spec_.n_chains()) {
    comp.resize(M);
    Qt.assign(M, Matrix::Zero(d, d));
    for (int j = 0; j < M; ++j) {
      comp[j] = theta.companion(j);
      Qt[j].topLeftCorner(r, r) = theta.Q[j];
    }
  }

  // dynamics regime driving chain c when the target regime is j: for Obs
  // every chain keeps its own dynamics, otherwise the single chain switches.
  int dyn_of(int c, int j) const { return n_chains == 1 ? j : c; }
  // chain observed under regime j
  int obs_chain(int j) const { return n_chains == 1 ? 0 : j; }
};

/// J = V A' pinv(P_pred), robust to singular predicted covariance (exactly
/// observed companion coordinates in the Var kind).
Matrix smoother_gain(const Matrix& V_filt, const Matrix& A, const Matrix& P_pred) {
  Matrix AV = A * V_filt;                     // = (V A')'
  Eigen::LLT<Matrix> llt(P_pred);
  if (llt.info() == Eigen::Success) {
    double dmin = llt.matrixLLT().diagonal().minCoeff();
    double dmax = llt.matrixLLT().diagonal().maxCoeff();
    if (dmin > 1e-9 * (1.0 + dmax)) return llt.solve(AV).transpose();
  }
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(P_pred);
  return cod.solve(AV).transpose();
}

}  // namespace

FilterStats kim_filter(const Matrix& y, const ThetaParams& theta,
                       const ModelSpec& spec) {
  const System sys(theta, spec);
  const int M = sys.M, d = sys.d, nc = sys.n_chains;
  const int T = static_cast<int>(y.cols());

  FilterStats f;
  f.W_pred.resize(M, T);
  f.W_filt.resize(M, T);
  f.log_incr.resize(T);
  f.x_pred.assign(M, std::vector<Matrix>(nc, Matrix::Zero(d, T)));
  f.x_filt = f.x_pred;
  f.V_pred.assign(M, std::vector<std::vector<Matrix>>(
                         nc, std::vector<Matrix>(T, Matrix::Zero(d, d))));
  f.V_filt = f.V_pred;

  // t = 0: priors per regime, measurement update on the observed chain
  {
    Vector logw(M);
    for (int j = 0; j < M; ++j) {
      for (int c = 0; c < nc; ++c) {
        int g = sys.dyn_of(c, j);
        f.x_pred[j][c].col(0) = theta.mu[g];
        f.V_pred[j][c][0] = theta.Sigma[g];
        f.x_filt[j][c].col(0) = theta.mu[g];
        f.V_filt[j][c][0] = theta.Sigma[g];
      }
      int oc = sys.obs_chain(j);
      Vector m;
      Matrix V;
      double ld = measurement_update(f.x_pred[j][oc].col(0), f.V_pred[j][oc][0],
                                     theta.C[j], theta.R[j], y.col(0), m, V, 0);
      f.x_filt[j][oc].col(0) = m;
      f.V_filt[j][oc][0] = V;
      logw(j) = safe_log(theta.pi(j)) + ld;
    }
    f.W_pred.col(0) = theta.pi;
    double mx = logw.maxCoeff();
    double lse = mx + std::log((logw.array() - mx).exp().sum());
    f.log_incr(0) = lse;
    f.W_filt.col(0) = normalized_or_uniform(
        (logw.array() - lse).exp().cwiseMax(1e-300).matrix());
  }

  std::vector<std::vector<std::vector<Vector>>> m_prd(
      M, std::vector<std::vector<Vector>>(M, std::vector<Vector>(nc)));
  std::vector<std::vector<std::vector<Matrix>>> V_prd(
      M, std::vector<std::vector<Matrix>>(M, std::vector<Matrix>(nc)));
  auto m_upd = m_prd;
  auto V_upd = V_prd;

  for (int t = 1; t < T; ++t) {
    Matrix logw(M, M);
    for (int j = 0; j < M; ++j) {
      for (int i = 0; i < M; ++i) {
        // predict every chain from the regime-i filtered state
        for (int c = 0; c < nc; ++c) {
          int g = sys.dyn_of(c, j);
          m_prd[i][j][c] = sys.comp[g] * f.x_filt[i][c].col(t - 1);
          V_prd[i][j][c] = symmetrize(
              sys.comp[g] * f.V_filt[i][c][t - 1] * sys.comp[g].transpose() +
              sys.Qt[g]);
          m_upd[i][j][c] = m_prd[i][j][c];
          V_upd[i][j][c] = V_prd[i][j][c];
        }
        int oc = sys.obs_chain(j);
        Vector m;
        Matrix V;
        double ld = measurement_update(m_prd[i][j][oc], V_prd[i][j][oc],
                                       theta.C[j], theta.R[j], y.col(t), m, V, t);
        logw(i, j) = safe_log(f.W_filt(i, t - 1)) + safe_log(theta.Z(i, j)) + ld;
        m_upd[i][j][oc] = m;
        V_upd[i][j][oc] = V;
      }
    }
    double mx = logw.maxCoeff();
    double lse = mx + std::log((logw.array() - mx).exp().sum());
    f.log_incr(t) = lse;
    Matrix w = (logw.array() - lse).exp().cwiseMax(1e-300).matrix();
    w /= w.sum();

    for (int j = 0; j < M; ++j) {
      f.W_filt(j, t) = w.col(j).sum();
      f.W_pred(j, t) = f.W_filt.col(t - 1).dot(theta.Z.col(j));
    }
    // collapse the M^2 posteriors to M moment-matched Gaussians per regime
    std::vector<Vector> means(M);
    std::vector<Matrix> covs(M);
    for (int j = 0; j < M; ++j) {
      Vector w_filt = normalized_or_uniform(w.col(j));
      Vector w_prior(M);
      for (int i = 0; i < M; ++i)
        w_prior(i) = f.W_filt(i, t - 1) * theta.Z(i, j);
      w_prior = normalized_or_uniform(w_prior);
      for (int c = 0; c < nc; ++c) {
        for (int i = 0; i < M; ++i) {
          means[i] = m_upd[i][j][c];
          covs[i] = V_upd[i][j][c];
        }
        Vector m;
        Matrix V;
        collapse(means, covs, w_filt, m, V);
        f.x_filt[j][c].col(t) = m;
        f.V_filt[j][c][t] = V;
        // predicted collapsed moments under the prior pair weights
        for (int i = 0; i < M; ++i) {
          means[i] = m_prd[i][j][c];
          covs[i] = V_prd[i][j][c];
        }
        collapse(means, covs, w_prior, m, V);
        f.x_pred[j][c].col(t) = m;
        f.V_pred[j][c][t] = V;
      }
    }
  }
  f.loglik = f.log_incr.sum();
  if (!std::isfinite(f.loglik))
    throw NumericalFailure("kim_filter: non-finite log-likelihood");
  return f;
}

SmoothedStats kim_smoother(const Matrix& y, const ThetaParams& theta,
                           const ModelSpec& spec) {
  const System sys(theta, spec);
  const int M = sys.M, d = sys.d, nc = sys.n_chains;
  const int T = static_cast<int>(y.cols());
  FilterStats f = kim_filter(y, theta, spec);

  SmoothedStats s;
  s.loglik = f.loglik;
  s.W_smooth.resize(M, T);
  s.W_joint.assign(std::max(T - 1, 0), Matrix::Zero(M, M));
  s.x_smooth.assign(M, std::vector<Matrix>(nc, Matrix::Zero(d, T)));
  s.V_smooth.assign(M, std::vector<std::vector<Matrix>>(
                           nc, std::vector<Matrix>(T, Matrix::Zero(d, d))));
  s.P_lag = s.V_smooth;
  s.P_prev = s.V_smooth;

  s.W_smooth.col(T - 1) = f.W_filt.col(T - 1);
  for (int j = 0; j < M; ++j)
    for (int c = 0; c < nc; ++c) {
      s.x_smooth[j][c].col(T - 1) = f.x_filt[j][c].col(T - 1);
      s.V_smooth[j][c][T - 1] = f.V_filt[j][c][T - 1];
    }

  std::vector<std::vector<std::vector<Vector>>> xs_ij(
      M, std::vector<std::vector<Vector>>(M, std::vector<Vector>(nc)));
  std::vector<std::vector<std::vector<Matrix>>> Vs_ij(
      M, std::vector<std::vector<Matrix>>(M, std::vector<Matrix>(nc)));
  auto Cross_ij = Vs_ij;

  for (int t = T - 2; t >= 0; --t) {
    // joint smoothed regime weights (Kim approximation)
    Matrix& J = s.W_joint[t];
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < M; ++j) {
        double denom = f.W_pred(j, t + 1);
        J(i, j) = denom > 1e-300
                      ? s.W_smooth(j, t + 1) * f.W_filt(i, t) * theta.Z(i, j) / denom
                      : 0.0;
      }
    double jsum = J.sum();
    if (jsum > 1e-300)
      J /= jsum;
    else
      J.setConstant(1.0 / (M * M));
    for (int i = 0; i < M; ++i) s.W_smooth(i, t) = J.row(i).sum();

    // pair-conditional state smoothing
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < M; ++j)
        for (int c = 0; c < nc; ++c) {
          int g = sys.dyn_of(c, j);
          Vector m_pred = sys.comp[g] * f.x_filt[i][c].col(t);
          Matrix P_pred = symmetrize(sys.comp[g] * f.V_filt[i][c][t] *
                                         sys.comp[g].transpose() +
                                     sys.Qt[g]);
          Matrix G = smoother_gain(f.V_filt[i][c][t], sys.comp[g], P_pred);
          xs_ij[i][j][c] = f.x_filt[i][c].col(t) +
                           G * (s.x_smooth[j][c].col(t + 1) - m_pred);
          Vs_ij[i][j][c] = symmetrize(
              f.V_filt[i][c][t] +
              G * (s.V_smooth[j][c][t + 1] - P_pred) * G.transpose());
          Cross_ij[i][j][c] = s.V_smooth[j][c][t + 1] * G.transpose();
        }

    // per-regime smoothed moments at t: mix over the regime at t+1
    for (int i = 0; i < M; ++i) {
      Vector wi = normalized_or_uniform(J.row(i).transpose());
      std::vector<Vector> means(M);
      std::vector<Matrix> covs(M);
      for (int c = 0; c < nc; ++c) {
        for (int j = 0; j < M; ++j) {
          means[j] = xs_ij[i][j][c];
          covs[j] = Vs_ij[i][j][c];
        }
        Vector m;
        Matrix V;
        collapse(means, covs, wi, m, V);
        s.x_smooth[i][c].col(t) = m;
        s.V_smooth[i][c][t] = V;
      }
    }

    // lag moments conditional on the regime at t+1: mix over the regime at t
    for (int j = 0; j < M; ++j) {
      Vector wj = normalized_or_uniform(J.col(j));
      for (int c = 0; c < nc; ++c) {
        Matrix lag = Matrix::Zero(d, d), prev = Matrix::Zero(d, d);
        for (int i = 0; i < M; ++i) {
          lag += wj(i) * (Cross_ij[i][j][c] +
                          s.x_smooth[j][c].col(t + 1) * xs_ij[i][j][c].transpose());
          prev += wj(i) * (Vs_ij[i][j][c] +
                           xs_ij[i][j][c] * xs_ij[i][j][c].transpose());
        }
        s.P_lag[j][c][t + 1] = lag;
        s.P_prev[j][c][t + 1] = symmetrize(prev);
      }
    }
  }
  return s;
}

RegimeSequence decode_regimes(const SmoothedStats& stats) {
  const int M = static_cast<int>(stats.W_smooth.rows());
  const int T = static_cast<int>(stats.W_smooth.cols());
  RegimeSequence S(T);
  for (int t = 0; t < T; ++t) {
    int best = 0;
    for (int j = 1; j < M; ++j)
      if (stats.W_smooth(j, t) > stats.W_smooth(best, t)) best = j;
    S[t] = best;
  }
  return S;
}

Vector dwell_times(const SmoothedStats& stats) {
  return stats.W_smooth.rowwise().mean();
}

SmoothedStats conditional_smoother(const Matrix& y, const ThetaParams& theta,
                                   const ModelSpec& spec, const RegimeSequence& S) {
  const System sys(theta, spec);
  const int M = sys.M, d = sys.d, nc = sys.n_chains;
  const int T = static_cast<int>(y.cols());
  if ((int)S.size() != T)
    throw std::invalid_argument("conditional_smoother: regime length mismatch");

  // forward: exact time-varying Kalman filter, all chains evolve, chain
  // S_t is observed at t
  std::vector<Matrix> xf(nc, Matrix::Zero(d, T)), xp(nc, Matrix::Zero(d, T));
  std::vector<std::vector<Matrix>> Vf(nc, std::vector<Matrix>(T)),
      Vp(nc, std::vector<Matrix>(T));
  double loglik = 0.0;

  for (int c = 0; c < nc; ++c) {
    int g = sys.dyn_of(c, S[0]);
    xp[c].col(0) = theta.mu[g];
    Vp[c][0] = theta.Sigma[g];
  }
  for (int t = 0; t < T; ++t) {
    if (t > 0)
      for (int c = 0; c < nc; ++c) {
        int g = sys.dyn_of(c, S[t]);
        xp[c].col(t) = sys.comp[g] * xf[c].col(t - 1);
        Vp[c][t] = symmetrize(sys.comp[g] * Vf[c][t - 1] * sys.comp[g].transpose() +
                              sys.Qt[g]);
      }
    for (int c = 0; c < nc; ++c) {
      xf[c].col(t) = xp[c].col(t);
      Vf[c][t] = Vp[c][t];
    }
    int oc = sys.obs_chain(S[t]);
    Vector m;
    Matrix V;
    loglik += measurement_update(xp[oc].col(t), Vp[oc][t], theta.C[S[t]],
                                 theta.R[S[t]], y.col(t), m, V, t);
    xf[oc].col(t) = m;
    Vf[oc][t] = V;
  }
  loglik += safe_log(theta.pi(S[0]));
  for (int t = 1; t < T; ++t) loglik += safe_log(theta.Z(S[t - 1], S[t]));

  SmoothedStats s;
  s.loglik = loglik;
  s.W_smooth = Matrix::Zero(M, T);
  for (int t = 0; t < T; ++t) s.W_smooth(S[t], t) = 1.0;
  s.W_joint.assign(std::max(T - 1, 0), Matrix::Zero(M, M));
  for (int t = 0; t + 1 < T; ++t) s.W_joint[t](S[t], S[t + 1]) = 1.0;
  s.x_smooth.assign(M, std::vector<Matrix>(nc, Matrix::Zero(d, T)));
  s.V_smooth.assign(M, std::vector<std::vector<Matrix>>(
                           nc, std::vector<Matrix>(T, Matrix::Zero(d, d))));
  s.P_lag = s.V_smooth;
  s.P_prev = s.V_smooth;

  // backward: exact RTS per chain; moments stored at the conditioning regime
  std::vector<Vector> xs_prev(nc);
  std::vector<Matrix> Vs_prev(nc);
  for (int c = 0; c < nc; ++c) {
    s.x_smooth[S[T - 1]][c].col(T - 1) = xf[c].col(T - 1);
    s.V_smooth[S[T - 1]][c][T - 1] = Vf[c][T - 1];
    xs_prev[c] = xf[c].col(T - 1);
    Vs_prev[c] = Vf[c][T - 1];
  }
  for (int t = T - 2; t >= 0; --t) {
    for (int c = 0; c < nc; ++c) {
      int g = sys.dyn_of(c, S[t + 1]);
      Matrix G = smoother_gain(Vf[c][t], sys.comp[g], Vp[c][t + 1]);
      Vector xs = xf[c].col(t) + G * (xs_prev[c] - xp[c].col(t + 1));
      Matrix Vs = symmetrize(Vf[c][t] + G * (Vs_prev[c] - Vp[c][t + 1]) * G.transpose());
      s.x_smooth[S[t]][c].col(t) = xs;
      s.V_smooth[S[t]][c][t] = Vs;
      s.P_lag[S[t + 1]][c][t + 1] =
          Vs_prev[c] * G.transpose() + xs_prev[c] * xs.transpose();
      s.P_prev[S[t + 1]][c][t + 1] = symmetrize(Vs + xs * xs.transpose());
      xs_prev[c] = xs;
      Vs_prev[c] = Vs;
    }
  }
  return s;
}

}  // namespace mssm
