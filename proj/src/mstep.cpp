#include "mssm/mstep.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <unsupported/Eigen/KroneckerProduct>

#include "mssm/errors.hpp"
#include "mssm/numerics.hpp"

namespace mssm {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kWeightFloor = 1e-12;

double safe_log(double x) { return x > 1e-300 ? std::log(x) : -690.0; }

/// Solve X G = B for X (i.e. X = B G^{-1}) with G symmetric PSD; ridge,
/// one larger-ridge retry, then SingularMomentError.
Matrix solve_gram(const Matrix& G, const Matrix& B) {
  const int n = static_cast<int>(G.rows());
  double ridge = 1e-8 * (1.0 + G.trace() / n);
  for (int attempt = 0; attempt < 2; ++attempt) {
    Matrix Gr = symmetrize(G);
    Gr.diagonal().array() += ridge;
    Eigen::LDLT<Matrix> ldlt(Gr);
    if (ldlt.info() == Eigen::Success) {
      Matrix X = ldlt.solve(B.transpose()).transpose();
      if (X.allFinite()) return X;
    }
    ridge *= 1e6;
  }
  throw SingularMomentError("m-step: weighted Gram matrix is singular");
}

/// log|S^{-1}| and S^{-1} for a covariance parameter; tiny ridge, throws
/// NumericalFailure when the matrix is not PD after regularization.
std::pair<double, Matrix> prec_logdet(const Matrix& S, const char* name) {
  const int n = static_cast<int>(S.rows());
  Matrix Sr = symmetrize(S);
  Sr.diagonal().array() += 1e-12 * (1.0 + Sr.trace() / n);
  Eigen::LLT<Matrix> llt(Sr);
  if (llt.info() != Eigen::Success)
    throw NumericalFailure(std::string("q_function: ") + name +
                           " is not positive definite");
  double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  Matrix inv = llt.solve(Matrix::Identity(n, n));
  return {-logdet, inv};
}

void accumulate_block(const SmoothedStats& s, const Matrix& y, const ModelSpec& spec,
                      int t0, int t1, SufficientMoments& m) {
  const int M = spec.M, r = spec.r;
  const bool obs_kind = spec.kind == ModelKind::Obs;

  for (int t = t0; t < t1; ++t) {
    for (int j = 0; j < M; ++j) {
      const double w = s.W_smooth(j, t);
      const int oc = obs_kind ? j : 0;
      // observation regression (conditional on S_t = j)
      Vector xtop = s.x_smooth[j][oc].col(t).head(r);
      Matrix Ptop = s.V_smooth[j][oc][t].topLeftCorner(r, r) + xtop * xtop.transpose();
      m.SC1[j].noalias() += w * y.col(t) * xtop.transpose();
      m.SC2[j] += w * Ptop;
      m.Syy[j].noalias() += w * y.col(t) * y.col(t).transpose();
      m.swC[j] += w;
      if (!obs_kind) {
        if (t >= 1) {
          m.SA1[j] += w * s.P_lag[j][0][t].topRows(r);
          m.SA2[j] += w * s.P_prev[j][0][t];
          m.SQ[j] += w * Ptop;
          m.swA[j] += w;
        }
      } else {
        // state sums are regime-marginal per chain
        for (int c = 0; c < M; ++c) {
          Vector xc = s.x_smooth[j][c].col(t).head(r);
          if (t >= 1) {
            m.SA1[c] += w * s.P_lag[j][c][t].topRows(r);
            m.SA2[c] += w * s.P_prev[j][c][t];
            m.SQ[c] += w * (s.V_smooth[j][c][t].topLeftCorner(r, r) +
                            xc * xc.transpose());
          }
        }
      }
    }
    if (t >= 1) m.Zcount += s.W_joint[t - 1];
  }
}

SufficientMoments make_empty_moments(const ModelSpec& spec, int T) {
  const int M = spec.M, r = spec.r, N = spec.N, d = spec.state_dim();
  SufficientMoments m;
  m.SA1.assign(M, Matrix::Zero(r, d));
  m.SA2.assign(M, Matrix::Zero(d, d));
  m.SQ.assign(M, Matrix::Zero(r, r));
  m.swA.assign(M, 0.0);
  m.SC1.assign(M, Matrix::Zero(N, r));
  m.SC2.assign(M, Matrix::Zero(r, r));
  m.Syy.assign(M, Matrix::Zero(N, N));
  m.swC.assign(M, 0.0);
  m.x1.assign(M, Vector::Zero(d));
  m.P1.assign(M, Matrix::Zero(d, d));
  m.w1.assign(M, 0.0);
  m.W1 = Vector::Zero(M);
  m.Zcount = Matrix::Zero(M, M);
  m.T = T;
  return m;
}

void finish_moments(const SmoothedStats& s, const ModelSpec& spec,
                    SufficientMoments& m) {
  const int M = spec.M;
  const bool obs_kind = spec.kind == ModelKind::Obs;
  m.W1 = s.W_smooth.col(0);
  if (!obs_kind) {
    for (int j = 0; j < M; ++j) {
      m.x1[j] = s.x_smooth[j][0].col(0);
      m.P1[j] = s.V_smooth[j][0][0] + m.x1[j] * m.x1[j].transpose();
      m.w1[j] = s.W_smooth(j, 0);
    }
  } else {
    for (int c = 0; c < M; ++c) {
      m.swA[c] = m.T - 1;
      m.w1[c] = 1.0;
      for (int j = 0; j < M; ++j) {
        double w = s.W_smooth(j, 0);
        Vector xc = s.x_smooth[j][c].col(0);
        m.x1[c] += w * xc;
        m.P1[c] += w * (s.V_smooth[j][c][0] + xc * xc.transpose());
      }
    }
  }
}

}  // namespace

SufficientMoments accumulate_moments_serial(const SmoothedStats& stats,
                                            const Matrix& y, const ModelSpec& spec) {
  const int T = static_cast<int>(y.cols());
  SufficientMoments m = make_empty_moments(spec, T);
  accumulate_block(stats, y, spec, 0, T, m);
  finish_moments(stats, spec, m);
  return m;
}

SufficientMoments accumulate_moments(const SmoothedStats& stats, const Matrix& y,
                                     const ModelSpec& spec) {
  const int T = static_cast<int>(y.cols());
  constexpr int kBlock = 256;
  const int n_blocks = (T + kBlock - 1) / kBlock;
  std::vector<SufficientMoments> parts(n_blocks);

#pragma omp parallel for schedule(static)
  for (int b = 0; b < n_blocks; ++b) {
    parts[b] = make_empty_moments(spec, T);
    accumulate_block(stats, y, spec, b * kBlock, std::min(T, (b + 1) * kBlock),
                     parts[b]);
  }

  // merge in block order so the result is independent of the thread count
  SufficientMoments m = make_empty_moments(spec, T);
  for (int b = 0; b < n_blocks; ++b) {
    const SufficientMoments& p = parts[b];
    for (int j = 0; j < spec.M; ++j) {
      m.SA1[j] += p.SA1[j];
      m.SA2[j] += p.SA2[j];
      m.SQ[j] += p.SQ[j];
      m.swA[j] += p.swA[j];
      m.SC1[j] += p.SC1[j];
      m.SC2[j] += p.SC2[j];
      m.Syy[j] += p.Syy[j];
      m.swC[j] += p.swC[j];
    }
    m.Zcount += p.Zcount;
  }
  finish_moments(stats, spec, m);
  return m;
}

double q_function(const ThetaParams& theta, const SufficientMoments& m,
                  const ModelSpec& spec) {
  const int M = spec.M, r = spec.r, N = spec.N, d = spec.state_dim();
  const int nc = spec.n_chains();
  const bool has_obs_noise = spec.kind != ModelKind::Var;
  const int T = m.T;

  double q = -0.5 * std::log(kTwoPi) *
             ((has_obs_noise ? static_cast<double>(T) * N : 0.0) +
              static_cast<double>(T - 1) * r * nc + static_cast<double>(d) * nc);

  for (int j = 0; j < M; ++j) {
    if (has_obs_noise && m.swC[j] > kWeightFloor) {
      auto [logdet_inv, Rinv] = prec_logdet(theta.R[j], "R");
      const Matrix& C = theta.C[j];
      Matrix quad = m.Syy[j] - C * m.SC1[j].transpose() - m.SC1[j] * C.transpose() +
                    C * m.SC2[j] * C.transpose();
      q += 0.5 * (m.swC[j] * logdet_inv - (Rinv * quad).trace());
    }
    if (m.swA[j] > kWeightFloor) {
      auto [logdet_inv, Qinv] = prec_logdet(theta.Q[j], "Q");
      Matrix A = theta.A_row(j);
      Matrix quad = m.SQ[j] - A * m.SA1[j].transpose() - m.SA1[j] * A.transpose() +
                    A * m.SA2[j] * A.transpose();
      q += 0.5 * (m.swA[j] * logdet_inv - (Qinv * quad).trace());
    }
    if (m.w1[j] > kWeightFloor) {
      auto [logdet_inv, Sinv] = prec_logdet(theta.Sigma[j], "Sigma");
      const Vector& mu = theta.mu[j];
      Matrix quad = m.P1[j] - m.x1[j] * mu.transpose() - mu * m.x1[j].transpose() +
                    mu * mu.transpose();
      q += 0.5 * m.w1[j] * (logdet_inv - (Sinv * quad).trace());
    }
    q += m.W1(j) * safe_log(theta.pi(j));
    for (int i = 0; i < M; ++i) q += m.Zcount(i, j) * safe_log(theta.Z(i, j));
  }
  return q;
}

ThetaParams update_unconstrained(const SufficientMoments& m, const ModelSpec& spec,
                                 const ThetaParams& current) {
  const int M = spec.M;
  ThetaParams t = current;
  for (int j = 0; j < M; ++j) {
    if (m.swA[j] > kWeightFloor) {
      Matrix A = solve_gram(m.SA2[j], m.SA1[j]);
      t.set_A_row(j, A);
      t.Q[j] = symmetrize((m.SQ[j] - A * m.SA1[j].transpose() -
                           m.SA1[j] * A.transpose() + A * m.SA2[j] * A.transpose()) /
                          m.swA[j]);
    }
    if (spec.kind != ModelKind::Var && m.swC[j] > kWeightFloor) {
      Matrix C = solve_gram(m.SC2[j], m.SC1[j]);
      t.C[j] = C;
      t.R[j] = symmetrize((m.Syy[j] - C * m.SC1[j].transpose() -
                           m.SC1[j] * C.transpose() + C * m.SC2[j] * C.transpose()) /
                          m.swC[j]);
    }
    if (m.w1[j] > kWeightFloor) {
      t.mu[j] = m.x1[j];
      t.Sigma[j] = symmetrize(m.P1[j] - m.x1[j] * m.x1[j].transpose());
    }
  }
  t.pi = m.W1.cwiseMax(0.0);
  t.pi /= t.pi.sum();
  for (int i = 0; i < M; ++i) {
    double rowsum = m.Zcount.row(i).sum();
    if (rowsum > kWeightFloor) t.Z.row(i) = m.Zcount.row(i) / rowsum;
  }
  return t;
}

double coefficient_objective(const Matrix& X, const Matrix& W, const Matrix& B1,
                             const Matrix& B2) {
  return (W * (-2.0 * B1 * X.transpose() + X * B2 * X.transpose())).trace();
}

Matrix apply_fixed_constraints(const Matrix& raw_update, const FixedMask& fixed,
                               const Matrix& W, const Matrix& B1, const Matrix& B2) {
  if (!fixed.any()) return raw_update;
  const int nr = static_cast<int>(raw_update.rows());
  const int ncols = static_cast<int>(raw_update.cols());
  const int n = nr * ncols;

  Matrix H = Eigen::kroneckerProduct(B2, W);
  Matrix WB1 = W * B1;
  Eigen::Map<const Vector> g(WB1.data(), n);

  std::vector<int> free_idx, pin_idx;
  for (int c = 0; c < ncols; ++c)
    for (int i = 0; i < nr; ++i)
      (fixed.mask(i, c) != 0 ? pin_idx : free_idx).push_back(c * nr + i);

  Matrix X = raw_update;
  for (int idx : pin_idx) X(idx % nr, idx / nr) = fixed.values(idx % nr, idx / nr);
  if (free_idx.empty()) return X;

  const int nf = static_cast<int>(free_idx.size());
  Matrix Hff(nf, nf);
  Vector rhs(nf);
  for (int a = 0; a < nf; ++a) {
    rhs(a) = g(free_idx[a]);
    for (int b = 0; b < nf; ++b) Hff(a, b) = H(free_idx[a], free_idx[b]);
    for (int idx : pin_idx)
      rhs(a) -= H(free_idx[a], idx) * X(idx % nr, idx / nr);
  }
  Vector xf = solve_gram(Hff, rhs.transpose()).transpose();
  for (int a = 0; a < nf; ++a) X(free_idx[a] % nr, free_idx[a] / nr) = xf(a);
  return X;
}

Matrix apply_scaling_constraint(const Matrix& C_update, const Vector& targets,
                                const Matrix& W, const Matrix& B1, const Matrix& B2,
                                int max_iter) {
  auto project = [&](Matrix X) {
    for (int c = 0; c < X.cols(); ++c) {
      double norm = X.col(c).norm();
      X.col(c) = norm > 1e-300 ? Vector(X.col(c) * (targets(c) / norm))
                               : Vector(Vector::Unit(X.rows(), 0) * targets(c));
    }
    return X;
  };
  double L = Eigen::SelfAdjointEigenSolver<Matrix>(symmetrize(B2), Eigen::EigenvaluesOnly)
                 .eigenvalues()
                 .maxCoeff() *
             Eigen::SelfAdjointEigenSolver<Matrix>(symmetrize(W), Eigen::EigenvaluesOnly)
                 .eigenvalues()
                 .maxCoeff();
  const double step = L > 1e-300 ? 1.0 / L : 1.0;

  Matrix best = project(C_update);
  double f_best = coefficient_objective(best, W, B1, B2);
  Matrix X = best;
  for (int it = 0; it < max_iter; ++it) {
    Matrix grad = 2.0 * (W * X * B2 - W * B1);
    X = project(X - step * grad);
    double f = coefficient_objective(X, W, B1, B2);
    double improvement = f_best - f;
    if (f < f_best) {
      best = X;
      f_best = f;
    }
    if (improvement < 1e-8) break;
  }
  return best;
}

std::vector<Matrix> apply_eigen_constraint(const std::vector<Matrix>& A_update,
                                           const std::vector<Matrix>& A_current,
                                           double epsilon, const Matrix& Qinv,
                                           const Matrix& SA1, const Matrix& SA2) {
  Matrix Q1 = Matrix::Identity(A_update[0].rows(), A_update[0].cols());
  double rho = spectral_radius(make_companion(A_update, Q1).A_tilde);
  if (rho < 1.0) return A_update;
  std::vector<Matrix> shrunk = shrink_to_stable(A_update, epsilon);
  auto row = [](const std::vector<Matrix>& blocks) {
    const int r = static_cast<int>(blocks[0].rows());
    const int p = static_cast<int>(blocks.size());
    Matrix out(r, p * r);
    for (int l = 0; l < p; ++l) out.block(0, l * r, r, r) = blocks[l];
    return out;
  };
  double f_shrunk = coefficient_objective(row(shrunk), Qinv, SA1, SA2);
  double f_current = coefficient_objective(row(A_current), Qinv, SA1, SA2);
  return f_shrunk < f_current ? shrunk : A_current;
}

namespace {

Matrix diag_only(const Matrix& X) { return X.diagonal().asDiagonal(); }

/// Shared-across-regimes coefficient solve: minimize sum_j f_j(X) with
/// W_j = per-regime precision; optional pinned entries.
Matrix solve_shared(const std::vector<Matrix>& Ws, const std::vector<Matrix>& B1s,
                    const std::vector<Matrix>& B2s,
                    const std::optional<FixedMask>& fixed) {
  const int nr = static_cast<int>(B1s[0].rows());
  const int ncols = static_cast<int>(B1s[0].cols());
  Matrix H = Matrix::Zero(nr * ncols, nr * ncols);
  Matrix G = Matrix::Zero(nr, ncols);
  for (size_t j = 0; j < Ws.size(); ++j) {
    H += Eigen::kroneckerProduct(B2s[j], Ws[j]);
    G += Ws[j] * B1s[j];
  }
  Eigen::Map<const Vector> g(G.data(), G.size());
  if (!fixed || !fixed->any()) {
    Vector x = solve_gram(H, g.transpose()).transpose();
    return Eigen::Map<const Matrix>(x.data(), nr, ncols);
  }
  // reuse the masked machinery with the pooled system: W = I, B1 = G, B2 via H
  // is not expressible directly, so solve the masked KKT here.
  std::vector<int> free_idx, pin_idx;
  for (int c = 0; c < ncols; ++c)
    for (int i = 0; i < nr; ++i)
      (fixed->mask(i, c) != 0 ? pin_idx : free_idx).push_back(c * nr + i);
  Matrix X = Matrix::Zero(nr, ncols);
  for (int idx : pin_idx)
    X(idx % nr, idx / nr) = fixed->values(idx % nr, idx / nr);
  if (free_idx.empty()) return X;
  const int nf = static_cast<int>(free_idx.size());
  Matrix Hff(nf, nf);
  Vector rhs(nf);
  for (int a = 0; a < nf; ++a) {
    rhs(a) = g(free_idx[a]);
    for (int b = 0; b < nf; ++b) Hff(a, b) = H(free_idx[a], free_idx[b]);
    for (int idx : pin_idx) rhs(a) -= H(free_idx[a], idx) * X(idx % nr, idx / nr);
  }
  Vector xf = solve_gram(Hff, rhs.transpose()).transpose();
  for (int a = 0; a < nf; ++a) X(free_idx[a] % nr, free_idx[a] / nr) = xf(a);
  return X;
}

}  // namespace

SmoothedStats temper_stats(const SmoothedStats& stats, double beta) {
  if (beta == 1.0) return stats;
  SmoothedStats s = stats;
  const int M = static_cast<int>(stats.W_smooth.rows());
  const int T = static_cast<int>(stats.W_smooth.cols());
  if (T == 1 || s.W_joint.empty()) {
    Vector w = stats.W_smooth.col(0).array().pow(beta);
    s.W_smooth.col(0) = w / w.sum();
    return s;
  }
  for (int t = 0; t + 1 < T; ++t) {
    Matrix J = stats.W_joint[t].array().pow(beta);
    double sum = J.sum();
    if (sum > 1e-300)
      J /= sum;
    else
      J.setConstant(1.0 / (M * M));
    s.W_joint[t] = J;
    s.W_smooth.col(t) = J.rowwise().sum();
  }
  s.W_smooth.col(T - 1) = s.W_joint[T - 2].colwise().sum().transpose();
  return s;
}

ThetaParams m_step(const ThetaParams& theta, const SufficientMoments& m,
                   const ModelSpec& spec, bool update_pi_Z) {
  const ConstraintSet& cons = spec.constraints;
  const int M = spec.M, r = spec.r;
  ThetaParams t = theta;
  double q_cur = q_function(t, m, spec);

  auto try_accept = [&](ThetaParams&& cand) {
    double q_new;
    try {
      q_new = q_function(cand, m, spec);
    } catch (const NumericalFailure&) {
      return false;
    }
    if (!(q_new >= q_cur - 1e-12 * (1.0 + std::abs(q_cur)))) return false;
    t = std::move(cand);
    q_cur = q_new;
    return true;
  };

  // ---- A ----
  {
    ThetaParams cand = t;
    const bool equal_A = cons.equal_across_regimes.count(ParamField::A) > 0;
    std::vector<Matrix> Qinv(M);
    for (int j = 0; j < M; ++j) Qinv[j] = prec_logdet(t.Q[j], "Q").second;
    if (equal_A) {
      std::vector<Matrix> Ws, B1s, B2s;
      for (int j = 0; j < M; ++j) {
        if (m.swA[j] <= kWeightFloor) continue;
        Ws.push_back(Qinv[j]);
        B1s.push_back(m.SA1[j]);
        B2s.push_back(m.SA2[j]);
      }
      if (!Ws.empty()) {
        Matrix shared = solve_shared(Ws, B1s, B2s, cons.fixed_A);
        for (int j = 0; j < M; ++j) cand.set_A_row(j, shared);
      }
    } else {
      for (int j = 0; j < M; ++j) {
        if (m.swA[j] <= kWeightFloor) continue;
        Matrix raw = solve_gram(m.SA2[j], m.SA1[j]);
        if (cons.fixed_A)
          raw = apply_fixed_constraints(raw, *cons.fixed_A, Qinv[j], m.SA1[j],
                                        m.SA2[j]);
        cand.set_A_row(j, raw);
      }
    }
    if (cons.stable_A) {
      for (int j = 0; j < M; ++j) {
        if (m.swA[j] <= kWeightFloor) continue;
        cand.A[j] = apply_eigen_constraint(cand.A[j], t.A[j], cons.stability_margin,
                                           Qinv[j], m.SA1[j], m.SA2[j]);
      }
    }
    try_accept(std::move(cand));
  }

  // ---- Q (conditional on the accepted A) ----
  {
    ThetaParams cand = t;
    const bool equal_Q = cons.equal_across_regimes.count(ParamField::Q) > 0;
    auto q_for = [&](int j) {
      Matrix A = t.A_row(j);
      return Matrix(symmetrize(m.SQ[j] - A * m.SA1[j].transpose() -
                               m.SA1[j] * A.transpose() +
                               A * m.SA2[j] * A.transpose()));
    };
    if (equal_Q) {
      Matrix num = Matrix::Zero(r, r);
      double den = 0.0;
      for (int j = 0; j < M; ++j) {
        if (m.swA[j] <= kWeightFloor) continue;
        num += q_for(j);
        den += m.swA[j];
      }
      if (den > kWeightFloor) {
        Matrix Qshared = num / den;
        if (cons.diag_Q) Qshared = diag_only(Qshared);
        for (int j = 0; j < M; ++j) cand.Q[j] = Qshared;
      }
    } else {
      for (int j = 0; j < M; ++j) {
        if (m.swA[j] <= kWeightFloor) continue;
        Matrix Qj = q_for(j) / m.swA[j];
        if (cons.diag_Q) Qj = diag_only(Qj);
        cand.Q[j] = Qj;
      }
    }
    try_accept(std::move(cand));
  }

  // ---- C (pooled for Dyn, per regime for Obs, fixed identity for Var) ----
  if (spec.kind != ModelKind::Var) {
    ThetaParams cand = t;
    Matrix Rinv = prec_logdet(t.R[0], "R").second;
    const bool pooled = spec.kind == ModelKind::Dyn ||
                        cons.equal_across_regimes.count(ParamField::C) > 0;
    if (pooled) {
      Matrix B1 = Matrix::Zero(spec.N, r), B2 = Matrix::Zero(r, r);
      for (int j = 0; j < M; ++j) {
        B1 += m.SC1[j];
        B2 += m.SC2[j];
      }
      Matrix C = solve_gram(B2, B1);
      if (cons.fixed_C) C = apply_fixed_constraints(C, *cons.fixed_C, Rinv, B1, B2);
      if (cons.scale_C)
        C = apply_scaling_constraint(C, *cons.scale_C, Rinv, B1, B2);
      for (int j = 0; j < M; ++j) cand.C[j] = C;
    } else {
      for (int j = 0; j < M; ++j) {
        if (m.swC[j] <= kWeightFloor) continue;
        Matrix C = solve_gram(m.SC2[j], m.SC1[j]);
        if (cons.fixed_C)
          C = apply_fixed_constraints(C, *cons.fixed_C, Rinv, m.SC1[j], m.SC2[j]);
        if (cons.scale_C)
          C = apply_scaling_constraint(C, *cons.scale_C, Rinv, m.SC1[j], m.SC2[j]);
        cand.C[j] = C;
      }
    }
    try_accept(std::move(cand));
  }

  // ---- R (tied across regimes for Dyn/Obs; structurally zero for Var) ----
  if (spec.kind != ModelKind::Var) {
    ThetaParams cand = t;
    Matrix num = Matrix::Zero(spec.N, spec.N);
    double den = 0.0;
    for (int j = 0; j < M; ++j) {
      const Matrix& C = t.C[j];
      num += m.Syy[j] - C * m.SC1[j].transpose() - m.SC1[j] * C.transpose() +
             C * m.SC2[j] * C.transpose();
      den += m.swC[j];
    }
    if (den > kWeightFloor) {
      Matrix R = symmetrize(num / den);
      if (cons.diag_R) R = diag_only(R);
      for (int j = 0; j < M; ++j) cand.R[j] = R;
      try_accept(std::move(cand));
    }
  }

  // ---- mu ----
  {
    ThetaParams cand = t;
    if (cons.equal_across_regimes.count(ParamField::Mu) > 0) {
      Vector num = Vector::Zero(spec.state_dim());
      double den = 0.0;
      for (int j = 0; j < M; ++j) {
        num += m.w1[j] * m.x1[j];
        den += m.w1[j];
      }
      if (den > kWeightFloor)
        for (int j = 0; j < M; ++j) cand.mu[j] = num / den;
    } else {
      for (int j = 0; j < M; ++j)
        if (m.w1[j] > kWeightFloor) cand.mu[j] = m.x1[j];
    }
    try_accept(std::move(cand));
  }

  // ---- Sigma (conditional on the accepted mu) ----
  {
    ThetaParams cand = t;
    auto sig_for = [&](int j) {
      const Vector& mu = t.mu[j];
      return Matrix(symmetrize(m.P1[j] - m.x1[j] * mu.transpose() -
                               mu * m.x1[j].transpose() + mu * mu.transpose()));
    };
    if (cons.equal_across_regimes.count(ParamField::Sigma) > 0) {
      Matrix num = Matrix::Zero(spec.state_dim(), spec.state_dim());
      double den = 0.0;
      for (int j = 0; j < M; ++j) {
        if (m.w1[j] <= kWeightFloor) continue;
        num += m.w1[j] * sig_for(j);
        den += m.w1[j];
      }
      if (den > kWeightFloor) {
        Matrix S = num / den;
        if (cons.diag_Sigma) S = diag_only(S);
        for (int j = 0; j < M; ++j) cand.Sigma[j] = S;
      }
    } else {
      for (int j = 0; j < M; ++j) {
        if (m.w1[j] <= kWeightFloor) continue;
        Matrix S = sig_for(j);
        if (cons.diag_Sigma) S = diag_only(S);
        cand.Sigma[j] = S;
      }
    }
    try_accept(std::move(cand));
  }

  // ---- pi, Z (exact maximizers) ----
  if (update_pi_Z) {
    ThetaParams cand = t;
    Vector pi = m.W1.cwiseMax(0.0);
    if (pi.sum() > kWeightFloor) cand.pi = pi / pi.sum();
    for (int i = 0; i < M; ++i) {
      double rowsum = m.Zcount.row(i).sum();
      if (rowsum > kWeightFloor) cand.Z.row(i) = m.Zcount.row(i) / rowsum;
    }
    try_accept(std::move(cand));
  }

  return t;
}

}  // namespace mssm
