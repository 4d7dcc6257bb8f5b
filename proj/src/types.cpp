#include "mssm/types.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "mssm/numerics.hpp"

namespace mssm {

namespace {

std::string fmt(const char* f, ...) {
  char buf[256];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return std::string(buf);
}

constexpr double kPsdTol = 1e-10;
constexpr double kProbTol = 1e-8;

void check_psd(const Matrix& X, const std::string& name, int j,
               std::vector<std::string>& out) {
  if (X.rows() != X.cols()) {
    out.push_back(fmt("%s_%d is not square", name.c_str(), j + 1));
    return;
  }
  if (!X.allFinite()) {
    out.push_back(fmt("%s_%d has non-finite entries", name.c_str(), j + 1));
    return;
  }
  Matrix S = symmetrize(X);
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  double lmin = es.eigenvalues().minCoeff();
  double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (lmin < -kPsdTol * scale)
    out.push_back(fmt("%s_%d is not PSD (min eigenvalue %.3g)", name.c_str(),
                      j + 1, lmin));
}

}  // namespace

Matrix symmetrize(const Matrix& X) { return 0.5 * (X + X.transpose()); }

Matrix ThetaParams::companion(int j) const {
  const int p = n_lags();
  const int r = static_cast<int>(A[j][0].rows());
  const int d = p * r;
  Matrix comp = Matrix::Zero(d, d);
  for (int l = 0; l < p; ++l) comp.block(0, l * r, r, r) = A[j][l];
  if (p > 1) comp.block(r, 0, d - r, d - r).setIdentity();
  return comp;
}

Matrix ThetaParams::A_row(int j) const {
  const int p = n_lags();
  const int r = static_cast<int>(A[j][0].rows());
  Matrix row(r, p * r);
  for (int l = 0; l < p; ++l) row.block(0, l * r, r, r) = A[j][l];
  return row;
}

void ThetaParams::set_A_row(int j, const Matrix& row) {
  const int p = n_lags();
  const int r = static_cast<int>(row.rows());
  for (int l = 0; l < p; ++l) A[j][l] = row.block(0, l * r, r, r);
}

ThetaParams make_theta_shell(const ModelSpec& spec) {
  ThetaParams t;
  const int d = spec.state_dim();
  t.A.assign(spec.M, std::vector<Matrix>(spec.p, Matrix::Zero(spec.r, spec.r)));
  t.C.assign(spec.M, spec.kind == ModelKind::Var
                         ? Matrix(Matrix::Identity(spec.N, spec.N))
                         : Matrix(Matrix::Zero(spec.N, spec.r)));
  t.Q.assign(spec.M, Matrix::Zero(spec.r, spec.r));
  t.R.assign(spec.M, Matrix::Zero(spec.N, spec.N));
  t.mu.assign(spec.M, Vector::Zero(d));
  t.Sigma.assign(spec.M, Matrix::Zero(d, d));
  t.pi = Vector::Constant(spec.M, 1.0 / spec.M);
  t.Z = Matrix::Constant(spec.M, spec.M, 1.0 / spec.M);
  return t;
}

std::vector<std::string> validate(const ThetaParams& theta, const ModelSpec& spec) {
  std::vector<std::string> v;
  const int M = spec.M, p = spec.p, r = spec.r, N = spec.N, d = spec.state_dim();

  if (spec.M < 1) v.push_back("spec: M must be >= 1");
  if (spec.p < 1) v.push_back("spec: p must be >= 1");
  if (spec.r < 1 || spec.r > spec.N) v.push_back("spec: need 1 <= r <= N");
  if (spec.kind == ModelKind::Var && spec.r != spec.N)
    v.push_back("spec: Var kind requires r = N");
  if (spec.constraints.stable_A) {
    double eps = spec.constraints.stability_margin;
    if (!(eps > 0.0 && eps < 1.0))
      v.push_back("constraints: stability margin must lie in (0,1)");
  }
  if (spec.constraints.fixed_A &&
      (spec.constraints.fixed_A->mask.rows() != r ||
       spec.constraints.fixed_A->mask.cols() != p * r ||
       spec.constraints.fixed_A->values.rows() != r ||
       spec.constraints.fixed_A->values.cols() != p * r))
    v.push_back("constraints: fixed_A mask/values must be r x p*r");
  if (spec.constraints.fixed_A && !spec.constraints.fixed_A->values.allFinite())
    v.push_back("constraints: fixed_A pinned values must be finite");
  if (spec.constraints.fixed_C &&
      (spec.constraints.fixed_C->mask.rows() != N ||
       spec.constraints.fixed_C->mask.cols() != r ||
       spec.constraints.fixed_C->values.rows() != N ||
       spec.constraints.fixed_C->values.cols() != r))
    v.push_back("constraints: fixed_C mask/values must be N x r");
  if (spec.constraints.fixed_C && !spec.constraints.fixed_C->values.allFinite())
    v.push_back("constraints: fixed_C pinned values must be finite");
  if (spec.constraints.scale_C) {
    if (spec.constraints.scale_C->size() != r)
      v.push_back("constraints: scale_C needs r column targets");
    else if ((spec.constraints.scale_C->array() <= 0).any())
      v.push_back("constraints: scale_C targets must be positive");
  }

  auto shape = [&](const Matrix& X, int rows, int cols, const char* name, int j) {
    if (X.rows() != rows || X.cols() != cols)
      v.push_back(fmt("%s_%d has shape %ldx%ld, expected %dx%d", name, j + 1,
                      (long)X.rows(), (long)X.cols(), rows, cols));
  };

  if ((int)theta.A.size() != M || (int)theta.C.size() != M ||
      (int)theta.Q.size() != M || (int)theta.R.size() != M ||
      (int)theta.mu.size() != M || (int)theta.Sigma.size() != M ||
      theta.pi.size() != M || theta.Z.rows() != M || theta.Z.cols() != M) {
    v.push_back("theta: regime-indexed containers do not all have M entries");
    return v;
  }

  for (int j = 0; j < M; ++j) {
    if ((int)theta.A[j].size() != p) {
      v.push_back(fmt("A_%d does not have p lag blocks", j + 1));
      continue;
    }
    for (int l = 0; l < p; ++l) {
      shape(theta.A[j][l], r, r, "A", j);
      if (!theta.A[j][l].allFinite())
        v.push_back(fmt("A_%d lag %d has non-finite entries", j + 1, l + 1));
    }
    shape(theta.C[j], N, r, "C", j);
    shape(theta.Q[j], r, r, "Q", j);
    shape(theta.R[j], N, N, "R", j);
    if (theta.mu[j].size() != d)
      v.push_back(fmt("mu_%d has length %ld, expected %d", j + 1,
                      (long)theta.mu[j].size(), d));
    shape(theta.Sigma[j], d, d, "Sigma", j);
  }
  if (!v.empty()) return v;

  for (int j = 0; j < M; ++j) {
    check_psd(theta.Q[j], "Q", j, v);
    check_psd(theta.R[j], "R", j, v);
    check_psd(theta.Sigma[j], "Sigma", j, v);
    if (!theta.C[j].allFinite())
      v.push_back(fmt("C_%d has non-finite entries", j + 1));
    if (!theta.mu[j].allFinite())
      v.push_back(fmt("mu_%d has non-finite entries", j + 1));
  }

  if ((theta.pi.array() < -kProbTol).any() || (theta.pi.array() > 1 + kProbTol).any())
    v.push_back("pi has entries outside [0,1]");
  if (std::abs(theta.pi.sum() - 1.0) > kProbTol)
    v.push_back(fmt("pi sums to %.6g", theta.pi.sum()));
  for (int i = 0; i < M; ++i) {
    if ((theta.Z.row(i).array() < -kProbTol).any() ||
        (theta.Z.row(i).array() > 1 + kProbTol).any())
      v.push_back(fmt("Z row %d has entries outside [0,1]", i + 1));
    double s = theta.Z.row(i).sum();
    if (std::abs(s - 1.0) > kProbTol)
      v.push_back(fmt("Z row %d sums to %.6g", i + 1, s));
  }

  if (spec.kind == ModelKind::Var) {
    for (int j = 0; j < M; ++j) {
      if (!theta.C[j].isIdentity(1e-12))
        v.push_back(fmt("C_%d must be the identity for Var kind", j + 1));
      if (theta.R[j].cwiseAbs().maxCoeff() > 1e-12)
        v.push_back(fmt("R_%d must be zero for Var kind", j + 1));
    }
  }

  if (spec.constraints.stable_A) {
    for (int j = 0; j < M; ++j) {
      double rho = spectral_radius(theta.companion(j));
      if (!(rho < 1.0))
        v.push_back(fmt("A_%d companion spectral radius %.6g >= 1", j + 1, rho));
    }
  }
  return v;
}

std::pair<std::vector<int>, double> match_regimes_by_classification(
    const RegimeSequence& S_hat, const RegimeSequence& S_true, int M) {
  if (M > 8) throw std::invalid_argument("match_regimes: M > 8 not supported");
  if (S_hat.size() != S_true.size())
    throw std::invalid_argument("match_regimes: length mismatch");
  const int T = static_cast<int>(S_hat.size());
  if (T == 0) throw std::invalid_argument("match_regimes: empty sequences");

  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(M, M);
  for (int t = 0; t < T; ++t) {
    if (S_hat[t] < 0 || S_hat[t] >= M || S_true[t] < 0 || S_true[t] >= M)
      throw std::invalid_argument("match_regimes: label out of range");
    counts(S_hat[t], S_true[t])++;
  }

  std::vector<int> perm(M), best(M);
  std::iota(perm.begin(), perm.end(), 0);
  best = perm;
  long best_score = -1;
  do {
    long score = 0;
    for (int a = 0; a < M; ++a) score += counts(a, perm[a]);
    if (score > best_score) {  // strict: first (lexicographically smallest) wins ties
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  return {best, static_cast<double>(best_score) / T};
}

double classification_rate(const RegimeSequence& S_hat, const RegimeSequence& S_true,
                           int M) {
  return match_regimes_by_classification(S_hat, S_true, M).second;
}

ThetaParams permute_regimes(const ThetaParams& theta, const std::vector<int>& sigma) {
  const int M = theta.n_regimes();
  if ((int)sigma.size() != M) throw std::invalid_argument("permute_regimes: bad size");
  std::vector<int> seen(M, 0);
  for (int s : sigma) {
    if (s < 0 || s >= M || seen[s]++)
      throw std::invalid_argument("permute_regimes: sigma is not a bijection");
  }
  ThetaParams out = theta;
  for (int j = 0; j < M; ++j) {
    out.A[sigma[j]] = theta.A[j];
    out.C[sigma[j]] = theta.C[j];
    out.Q[sigma[j]] = theta.Q[j];
    out.R[sigma[j]] = theta.R[j];
    out.mu[sigma[j]] = theta.mu[j];
    out.Sigma[sigma[j]] = theta.Sigma[j];
    out.pi(sigma[j]) = theta.pi(j);
    for (int i = 0; i < M; ++i) out.Z(sigma[i], sigma[j]) = theta.Z(i, j);
  }
  return out;
}

}  // namespace mssm
