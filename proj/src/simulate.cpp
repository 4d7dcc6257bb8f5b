#include "mssm/simulate.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

#include "mssm/errors.hpp"
#include "mssm/numerics.hpp"

namespace mssm {

namespace {
constexpr int kMaxDrawAttempts = 1000;

void check_probs(const Vector& pi, const Matrix& Z) {
  if (std::abs(pi.sum() - 1.0) > 1e-8 || (pi.array() < -1e-12).any())
    throw std::invalid_argument("simulate_chain: invalid initial probabilities");
  for (int i = 0; i < Z.rows(); ++i)
    if (std::abs(Z.row(i).sum() - 1.0) > 1e-8 || (Z.row(i).array() < -1e-12).any())
      throw std::invalid_argument("simulate_chain: invalid transition row");
}
}  // namespace

Matrix cov_sqrt(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(S));
  Vector lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

Matrix wishart(double dof, const Matrix& scale, Rng& rng) {
  const int d = static_cast<int>(scale.rows());
  Matrix L = cov_sqrt(scale);
  Matrix B = Matrix::Zero(d, d);  // Bartlett factor
  for (int i = 0; i < d; ++i) {
    B(i, i) = std::sqrt(rng.chi_squared(dof - i));
    for (int k = 0; k < i; ++k) B(i, k) = rng.normal();
  }
  Matrix LB = L * B;
  return symmetrize(LB * LB.transpose());
}

RegimeSequence simulate_chain(const Vector& pi, const Matrix& Z, int T, Rng& rng) {
  check_probs(pi, Z);
  RegimeSequence S(T);
  if (T == 0) return S;
  S[0] = rng.multinomial(pi);
  for (int t = 1; t < T; ++t) S[t] = rng.multinomial(Z.row(S[t - 1]).transpose());
  return S;
}

SimOutput simulate_model(const ThetaParams& theta, const ModelSpec& spec, int T,
                         Rng& rng, int force_regime) {
  const int N = spec.N, r = spec.r, d = spec.state_dim();
  const int n_chains = spec.n_chains();

  if (spec.constraints.stable_A) {
    for (int j = 0; j < spec.M; ++j) {
      double rho = spectral_radius(theta.companion(j));
      if (!(rho < 1.0))
        throw NotStationaryError(
            "simulate_model: regime " + std::to_string(j + 1) + " unstable", j);
    }
  }

  SimOutput out;
  out.S = force_regime >= 0 ? RegimeSequence(T, force_regime)
                            : simulate_chain(theta.pi, theta.Z, T, rng);
  out.y = Matrix::Zero(N, T);
  out.x.assign(n_chains, Matrix::Zero(r, T));
  if (T == 0) return out;

  std::vector<Matrix> Qroot(spec.M), Sigroot(spec.M), comp(spec.M);
  for (int j = 0; j < spec.M; ++j) {
    Qroot[j] = cov_sqrt(theta.Q[j]);
    Sigroot[j] = cov_sqrt(theta.Sigma[j]);
    comp[j] = theta.companion(j);
  }
  const bool has_noise = spec.kind != ModelKind::Var;
  Matrix Rroot = has_noise ? cov_sqrt(theta.R[0]) : Matrix();

  // companion state per chain; chain c uses regime-c parameters for Obs
  std::vector<Vector> state(n_chains);
  for (int c = 0; c < n_chains; ++c) {
    int j0 = n_chains == 1 ? out.S[0] : c;
    state[c] = theta.mu[j0] + Sigroot[j0] * rng.normal_vector(d);
    out.x[c].col(0) = state[c].head(r);
  }
  auto observe = [&](int t) {
    int j = out.S[t];
    int c = n_chains == 1 ? 0 : j;
    out.y.col(t) = theta.C[j] * out.x[c].col(t);
    if (has_noise) out.y.col(t) += Rroot * rng.normal_vector(N);
  };
  observe(0);

  for (int t = 1; t < T; ++t) {
    for (int c = 0; c < n_chains; ++c) {
      int j = n_chains == 1 ? out.S[t] : c;
      Vector next(d);
      next.head(r) = comp[j].topRows(r) * state[c] + Qroot[j] * rng.normal_vector(r);
      if (d > r) next.tail(d - r) = state[c].head(d - r);
      state[c] = next;
      out.x[c].col(t) = state[c].head(r);
    }
    observe(t);
  }
  return out;
}

ThetaParams make_study_theta(const ModelSpec& spec, Rng& rng) {
  const int M = spec.M, p = spec.p, r = spec.r, N = spec.N, d = spec.state_dim();
  ThetaParams t = make_theta_shell(spec);

  t.pi.setZero();
  t.pi(0) = 1.0;
  if (M == 1) {
    t.Z = Matrix::Ones(1, 1);
  } else {
    t.Z = Matrix::Constant(M, M, 0.02 / (M - 1));
    t.Z.diagonal().setConstant(0.98);
  }
  for (int j = 0; j < M; ++j) {
    t.mu[j] = Vector::Zero(d);
    t.Sigma[j] = 0.1 * Matrix::Identity(d, d);
  }

  auto draw_A = [&](int j) {
    for (int l = 0; l < p; ++l) {
      Matrix& A = t.A[j][l];
      if (spec.kind == ModelKind::Var) {
        A.setZero();
        for (int i = 0; i < r; ++i)
          A(i, i) = l == 0 ? rng.uniform(0.85, 0.95) : rng.uniform(-0.05, 0.05);
      } else {
        double hi = l == 0 ? 0.7 : 0.3;
        for (int c = 0; c < r; ++c)
          for (int i = 0; i < r; ++i) A(i, c) = rng.uniform(0.0, hi);
      }
    }
  };

  if (spec.kind == ModelKind::Var) {
    Matrix scale = (0.01 / N) * Matrix::Identity(N, N);
    for (int j = 0; j < M; ++j) {
      int attempts = 0;
      do {
        if (++attempts > kMaxDrawAttempts)
          throw NotStationaryError("make_study_theta: no stable draw found", j);
        draw_A(j);
      } while (spectral_radius(t.companion(j)) >= 1.0);
      t.Q[j] = wishart(N, scale, rng);
    }
    return t;
  }

  // Dyn / Obs: orthonormal C from the left singular vectors of a Gaussian draw
  const int n_C = spec.kind == ModelKind::Obs ? M : 1;
  std::vector<Matrix> Cs(n_C);
  for (int k = 0; k < n_C; ++k) {
    Eigen::JacobiSVD<Matrix> svd(rng.normal_matrix(N, r), Eigen::ComputeThinU);
    Cs[k] = svd.matrixU();
  }
  for (int j = 0; j < M; ++j) t.C[j] = Cs[spec.kind == ModelKind::Obs ? j : 0];

  double sigma_R2 = 0.005 / N;
  t.R[0] = sigma_R2 * ((1.0 - 0.1) * Matrix::Identity(N, N) +
                       0.1 * Matrix::Ones(N, N));
  for (int j = 1; j < M; ++j) t.R[j] = t.R[0];
  const double trR = t.R[0].trace();

  Matrix qscale = 0.005 * Matrix::Identity(r, r);
  for (int attempt = 0; attempt < kMaxDrawAttempts; ++attempt) {
    for (int j = 0; j < M; ++j) {
      int attempts = 0;
      do {
        if (++attempts > kMaxDrawAttempts)
          throw NotStationaryError("make_study_theta: no stable draw found", j);
        draw_A(j);
      } while (spectral_radius(t.companion(j)) >= 1.0);
      t.Q[j] = wishart(r, qscale, rng);
    }
    // signal-to-noise: regime average of tr V(Cx) / tr R, C orthonormal
    double snr = 0.0;
    for (int j = 0; j < M; ++j) {
      Matrix Sx = stationary_cov_companion(make_companion(t.A[j], t.Q[j]));
      snr += (t.C[j] * Sx.topLeftCorner(r, r) * t.C[j].transpose()).trace() / trR;
    }
    snr /= M;
    if (snr >= 5.0 && snr <= 10.0) return t;
  }
  throw NumericalFailure("make_study_theta: SNR rejection exhausted attempts");
}

}  // namespace mssm
