#include "mssm/numerics.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <unsupported/Eigen/KroneckerProduct>

#include "mssm/errors.hpp"

namespace mssm {

namespace {
constexpr double kCondThreshold = 1e12;

Eigen::Map<const Vector> as_vec(const Matrix& X) {
  return Eigen::Map<const Vector>(X.data(), X.size());
}
}  // namespace

CompanionSystem make_companion(const std::vector<Matrix>& lag_blocks, const Matrix& Q) {
  const int p = static_cast<int>(lag_blocks.size());
  const int r = static_cast<int>(Q.rows());
  const int d = p * r;
  CompanionSystem sys;
  sys.A_tilde = Matrix::Zero(d, d);
  for (int l = 0; l < p; ++l) sys.A_tilde.block(0, l * r, r, r) = lag_blocks[l];
  if (p > 1) sys.A_tilde.block(r, 0, d - r, d - r).setIdentity();
  sys.Q_tilde = Matrix::Zero(d, d);
  sys.Q_tilde.topLeftCorner(r, r) = Q;
  return sys;
}

double spectral_radius(const Matrix& A) {
  if (A.rows() != A.cols())
    throw std::invalid_argument("spectral_radius: matrix is not square");
  if (A.size() == 0) return 0.0;
  if (A.rows() == 1) return std::abs(A(0, 0));
  Eigen::EigenSolver<Matrix> es(A, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

std::vector<Matrix> shrink_to_stable(const std::vector<Matrix>& lag_blocks,
                                     double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw std::invalid_argument("shrink_to_stable: epsilon must lie in (0,1)");
  const int r = static_cast<int>(lag_blocks[0].rows());
  Matrix Q = Matrix::Identity(r, r);
  double rho = spectral_radius(make_companion(lag_blocks, Q).A_tilde);
  if (rho < 1.0) return lag_blocks;
  std::vector<Matrix> out = lag_blocks;
  const double s = (1.0 - epsilon) / rho;
  double factor = 1.0;
  for (auto& block : out) {
    factor *= s;  // lag-l block gets s^l
    block *= factor;
  }
  return out;
}

Matrix solve_sylvester(const Matrix& A, const Matrix& B, const Matrix& C) {
  using CMatrix = Eigen::MatrixXcd;
  Eigen::ComplexSchur<Matrix> schurA(A, /*computeU=*/true);
  Eigen::ComplexSchur<Matrix> schurB(B, /*computeU=*/true);
  const CMatrix& T = schurA.matrixT();
  const CMatrix& U = schurA.matrixU();
  const CMatrix& S = schurB.matrixT();
  const CMatrix& V = schurB.matrixU();

  CMatrix F = U.adjoint() * C * V;
  const int n = static_cast<int>(A.rows());
  const int m = static_cast<int>(B.rows());
  CMatrix Y(n, m);
  CMatrix I = CMatrix::Identity(n, n);
  for (int k = 0; k < m; ++k) {
    Eigen::VectorXcd rhs = F.col(k);
    for (int j = 0; j < k; ++j) rhs -= S(j, k) * Y.col(j);
    CMatrix Tk = T + S(k, k) * I;
    Y.col(k) = Tk.triangularView<Eigen::Upper>().solve(rhs);
  }
  return (U * Y * V.adjoint()).real();
}

Matrix stationary_cov_vectorized(const CompanionSystem& sys) {
  const int d = static_cast<int>(sys.A_tilde.rows());
  Matrix K = Matrix::Identity(d * d, d * d) -
             Eigen::kroneckerProduct(sys.A_tilde, sys.A_tilde);
  Vector v = K.partialPivLu().solve(as_vec(sys.Q_tilde));
  return symmetrize(Eigen::Map<const Matrix>(v.data(), d, d));
}

Matrix stationary_cov_vectorized_reduced(const CompanionSystem& sys, int r) {
  const int d = static_cast<int>(sys.A_tilde.rows());
  const int p = d / r;
  // Unique unknowns: vech(Gamma_0) then vec(Gamma_1), ..., vec(Gamma_{p-1}),
  // where Gamma_h = Cov(x_t, x_{t-h}) and block (a,b) of Sigma is
  // Gamma_{b-a} (b >= a) or Gamma_{a-b}' (a > b).
  const int n_unique = r * (r + 1) / 2 + (p - 1) * r * r;
  auto vech_index = [&](int i, int k) {  // i >= k, column-major lower triangle
    return k * r - k * (k - 1) / 2 + (i - k);
  };
  auto unique_index = [&](int h, int i, int k) {
    if (h == 0) return i >= k ? vech_index(i, k) : vech_index(k, i);
    return r * (r + 1) / 2 + (h - 1) * r * r + k * r + i;
  };
  Matrix Map = Matrix::Zero(d * d, n_unique);
  for (int b = 0; b < p; ++b)
    for (int a = 0; a < p; ++a)
      for (int k = 0; k < r; ++k)
        for (int i = 0; i < r; ++i) {
          int row = a * r + i, col = b * r + k;
          int h = b - a;
          int u = h >= 0 ? unique_index(h, i, k) : unique_index(-h, k, i);
          Map(col * d + row, u) = 1.0;
        }
  Matrix K = (Matrix::Identity(d * d, d * d) -
              Eigen::kroneckerProduct(sys.A_tilde, sys.A_tilde)) *
             Map;
  Vector u = K.colPivHouseholderQr().solve(as_vec(sys.Q_tilde));
  Vector v = Map * u;
  return symmetrize(Eigen::Map<const Matrix>(v.data(), d, d));
}

Matrix stationary_cov_companion(const CompanionSystem& sys) {
  const Matrix& A = sys.A_tilde;
  const Matrix& Q = sys.Q_tilde;
  const double rho = spectral_radius(A);
  if (!(rho < 1.0))
    throw NotStationaryError("stationary_cov_companion: spectral radius " +
                             std::to_string(rho) + " >= 1");

  const double qnorm = Q.cwiseAbs().maxCoeff();
  auto residual_ok = [&](const Matrix& Sigma) {
    Matrix res = Sigma - A * Sigma * A.transpose() - Q;
    return res.cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + qnorm);
  };

  Eigen::JacobiSVD<Matrix> svd(A);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (smin > 0 && smax / smin < kCondThreshold) {
    // Appendix-style Sylvester route: A^{-1} Sigma - Sigma A' = A^{-1} Q,
    // i.e. AX + XB = C with A := A^{-1}, B := -A', C := A^{-1} Q.
    Matrix Ainv = A.partialPivLu().solve(Matrix::Identity(A.rows(), A.cols()));
    Matrix Sigma = symmetrize(solve_sylvester(Ainv, -A.transpose(), Ainv * Q));
    if (residual_ok(Sigma)) return Sigma;
  }
  Matrix Sigma = stationary_cov_vectorized(sys);
  if (!residual_ok(Sigma))
    throw NumericalFailure("stationary_cov_companion: residual check failed");
  return Sigma;
}

std::vector<Matrix> cross_lag_cov(const CompanionSystem& sys, const Matrix& Sigma,
                                  int max_lag) {
  std::vector<Matrix> out;
  out.reserve(max_lag + 1);
  out.push_back(Sigma);
  for (int l = 1; l <= max_lag; ++l) out.push_back(sys.A_tilde * out.back());
  return out;
}

}  // namespace mssm
