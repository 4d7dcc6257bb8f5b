#include "mssm/init.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include "mssm/errors.hpp"
#include "mssm/kmeans.hpp"
#include "mssm/numerics.hpp"
#include "mssm/rng.hpp"

namespace mssm {

namespace {

Matrix center_rows(const Matrix& Y) {
  return Y.colwise() - Vector(Y.rowwise().mean());
}

struct VarFit {
  std::vector<Matrix> A;  // p lag blocks
  Matrix Q;               // residual covariance
  double sse = 0.0;
  int n_obs = 0;
};

/// VAR(p) by OLS over the listed target times; each target t must have its
/// full lag window available in X (caller guarantees membership).
VarFit var_ols(const Matrix& X, const std::vector<int>& targets, int p) {
  const int r = static_cast<int>(X.rows());
  const int n = static_cast<int>(targets.size());
  VarFit fit;
  fit.A.assign(p, Matrix::Zero(r, r));
  fit.Q = Matrix::Identity(r, r);
  fit.n_obs = n;
  if (n == 0) return fit;

  Matrix Yt(r, n), Xr(p * r, n);
  for (int k = 0; k < n; ++k) {
    int t = targets[k];
    Yt.col(k) = X.col(t);
    for (int l = 0; l < p; ++l) Xr.col(k).segment(l * r, r) = X.col(t - l - 1);
  }
  Matrix G = Xr * Xr.transpose();
  G.diagonal().array() += 1e-8 * (1.0 + G.trace() / G.rows());
  Matrix B = (Yt * Xr.transpose()) * G.ldlt().solve(Matrix::Identity(p * r, p * r));
  Matrix resid = Yt - B * Xr;
  for (int l = 0; l < p; ++l) fit.A[l] = B.block(0, l * r, r, r);
  fit.Q = symmetrize(resid * resid.transpose() / std::max(1, n));
  fit.sse = resid.squaredNorm();
  return fit;
}

std::vector<int> window_targets(int lo, int hi, int p) {  // [lo, hi] inclusive
  std::vector<int> t;
  for (int i = lo + p; i <= hi; ++i) t.push_back(i);
  return t;
}

Matrix floor_pd(Matrix S, double rel = 1e-8) {
  double scale = std::max(S.trace() / S.rows(), 1e-12);
  S.diagonal().array() += rel * scale + 1e-12;
  return symmetrize(S);
}

/// mu/Sigma from the first p state vectors (companion-stacked), the step-3
/// recipe: identity Sigma at p = 1, diagonal sample variances otherwise.
void initial_moments(const Matrix& X, int p, Vector& mu_out, Matrix& Sigma_out) {
  const int r = static_cast<int>(X.rows());
  Vector mean = X.leftCols(p).rowwise().mean();
  Matrix Sig;
  if (p > 1) {
    Vector var = Vector::Zero(r);
    for (int t = 0; t < p; ++t) var += (X.col(t) - mean).cwiseAbs2();
    var /= (p - 1);
    Sig = Matrix(var.cwiseMax(1e-8).asDiagonal());
  } else {
    Sig = Matrix::Identity(r, r);
  }
  mu_out = mean.replicate(p, 1);
  Sigma_out = Matrix::Zero(p * r, p * r);
  for (int l = 0; l < p; ++l) Sigma_out.block(l * r, l * r, r, r) = Sig;
}

int default_kappa(int T, const ModelSpec& spec) {
  int kappa = T / (10 * spec.p * spec.r);
  return std::clamp(kappa, spec.M + 1, 50);
}

std::vector<std::pair<int, int>> equal_partition(int T, int kappa) {
  std::vector<std::pair<int, int>> iv;
  for (int k = 0; k < kappa; ++k) {
    int lo = static_cast<int>(static_cast<long>(k) * T / kappa);
    int hi = static_cast<int>(static_cast<long>(k + 1) * T / kappa) - 1;
    iv.emplace_back(lo, hi);
  }
  return iv;
}

void hard_chain_estimates(const RegimeSequence& S, int M, Vector& pi, Matrix& Z) {
  pi = Vector::Zero(M);
  pi(S[0]) = 1.0;
  Z = Matrix::Zero(M, M);
  Vector from = Vector::Zero(M);
  for (size_t t = 1; t < S.size(); ++t) {
    Z(S[t - 1], S[t]) += 1.0;
    from(S[t - 1]) += 1.0;
  }
  for (int i = 0; i < M; ++i) {
    if (from(i) > 0)
      Z.row(i) /= from(i);
    else
      Z.row(i).setConstant(1.0 / M);
  }
}

/// Relabel clusters by first occurrence in time so runs are deterministic.
void relabel_by_first_occurrence(std::vector<int>& labels, int M) {
  std::vector<int> map(M, -1);
  int next = 0;
  for (int l : labels)
    if (map[l] < 0) map[l] = next++;
  for (int k = 0; k < M; ++k)
    if (map[k] < 0) map[k] = next++;
  for (int& l : labels) l = map[l];
}

struct DynPipeline {
  ThetaParams theta;
  RegimeSequence S;
  Matrix xhat;  // r x T state estimates
};

/// Steps 1-6 for the Dyn kind; the Var kind runs the same pipeline with
/// xhat = y (steps 1-2 skipped). When `labels` is given the clustering
/// step is skipped (oracle fits).
DynPipeline dyn_pipeline(const Matrix& y, const ModelSpec& spec,
                         const InitOptions& opts, const RegimeSequence* labels) {
  const int T = static_cast<int>(y.cols());
  const int M = spec.M, p = spec.p, r = spec.r;
  const bool is_var = spec.kind == ModelKind::Var;

  DynPipeline out;
  out.theta = make_theta_shell(spec);
  ThetaParams& th = out.theta;

  if (is_var) {
    out.xhat = y;
  } else {
    Matrix Yc = center_rows(y);
    Eigen::BDCSVD<Matrix> svd(Yc, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.singularValues().size() < r ||
        svd.singularValues()(r - 1) <= 1e-12 * svd.singularValues()(0))
      throw RankDeficientError("init: data matrix rank below r");
    Matrix C = svd.matrixU().leftCols(r);
    out.xhat = svd.singularValues().head(r).asDiagonal() *
               svd.matrixV().leftCols(r).transpose();
    for (int j = 0; j < M; ++j) th.C[j] = C;
    Matrix resid = Yc - C * out.xhat;
    Vector rowvar = resid.cwiseAbs2().rowwise().sum() / std::max(1, T - 1);
    Matrix R = Matrix(rowvar.cwiseMax(1e-10).asDiagonal());
    for (int j = 0; j < M; ++j) th.R[j] = R;
  }

  Vector mu;
  Matrix Sigma;
  initial_moments(out.xhat, p, mu, Sigma);
  for (int j = 0; j < M; ++j) {
    th.mu[j] = mu;
    th.Sigma[j] = Sigma;
  }

  if (labels) {
    out.S = *labels;
  } else {
    std::vector<std::pair<int, int>> intervals;
    if (opts.use_binary_segmentation) {
      int min_len = opts.min_seg_len > 0 ? opts.min_seg_len : p + 1;
      std::vector<int> cps =
          binary_segmentation(out.xhat, p, opts.binseg_epsilon, min_len);
      int lo = 0;
      for (int cp : cps) {
        intervals.emplace_back(lo, cp - 1);
        lo = cp;
      }
      intervals.emplace_back(lo, T - 1);
    } else {
      int kappa = opts.kappa > 0 ? opts.kappa : default_kappa(T, spec);
      if (kappa * (p + 1) > T)
        throw std::invalid_argument("init: kappa * (p+1) exceeds T");
      intervals = equal_partition(T, kappa);
    }
    const int kappa = static_cast<int>(intervals.size());

    // step 4: per-interval VAR fits
    std::vector<VarFit> fits(kappa);
    Matrix feats(kappa, p * r * r + r * (r + 1) / 2);
    for (int k = 0; k < kappa; ++k) {
      fits[k] = var_ols(
          out.xhat, window_targets(intervals[k].first, intervals[k].second, p), p);
      int col = 0;
      for (int l = 0; l < p; ++l)
        for (int cc = 0; cc < r; ++cc)
          for (int i = 0; i < r; ++i) feats(k, col++) = fits[k].A[l](i, cc);
      for (int cc = 0; cc < r; ++cc)
        for (int i = cc; i < r; ++i) feats(k, col++) = fits[k].Q(i, cc);
    }
    // step 5: cluster the (A, Q) features, standardized per coordinate
    std::vector<int> cluster(kappa, 0);
    if (M > 1) {
      Matrix Fs = feats;
      for (int c = 0; c < Fs.cols(); ++c) {
        double mean = Fs.col(c).mean();
        double sd = std::sqrt((Fs.col(c).array() - mean).square().sum() /
                              std::max(1, kappa - 1));
        Fs.col(c) = (Fs.col(c).array() - mean) / (sd > 1e-12 ? sd : 1.0);
      }
      cluster = kmeans(Fs, M, 10, opts.seed).labels;
      relabel_by_first_occurrence(cluster, M);
    }
    out.S.assign(T, 0);
    for (int k = 0; k < kappa; ++k)
      for (int t = intervals[k].first; t <= intervals[k].second; ++t)
        out.S[t] = cluster[k];
  }

  // steps 5b/6: refit per regime over its own stretches, hard pi/Z
  for (int j = 0; j < M; ++j) {
    std::vector<int> targets;
    for (int t = p; t < T; ++t) {
      bool ok = out.S[t] == j;
      for (int l = 1; l <= p && ok; ++l) ok = out.S[t - l] == j;
      if (ok) targets.push_back(t);
    }
    VarFit fit = targets.size() >= static_cast<size_t>(p * r + 1)
                     ? var_ols(out.xhat, targets, p)
                     : var_ols(out.xhat, window_targets(0, T - 1, p), p);
    th.A[j] = shrink_to_stable(fit.A, spec.constraints.stable_A
                                          ? spec.constraints.stability_margin
                                          : 0.02);
    th.Q[j] = floor_pd(fit.Q);
  }
  hard_chain_estimates(out.S, M, th.pi, th.Z);
  return out;
}

ThetaParams obs_pipeline(const Matrix& y, const ModelSpec& spec,
                         const InitOptions& opts, const RegimeSequence* labels) {
  const int T = static_cast<int>(y.cols());
  const int M = spec.M, p = spec.p, r = spec.r;

  RegimeSequence S;
  if (labels) {
    S = *labels;
  } else {
    ModelSpec dyn_spec = spec;
    dyn_spec.kind = ModelKind::Dyn;
    S = dyn_pipeline(y, dyn_spec, opts, nullptr).S;
  }

  ThetaParams th = make_theta_shell(spec);
  Matrix Yc = center_rows(y);

  std::vector<std::vector<int>> members(M);
  for (int t = 0; t < T; ++t) members[S[t]].push_back(t);
  int largest = 0;
  for (int j = 1; j < M; ++j)
    if (members[j].size() > members[largest].size()) largest = j;

  Matrix R_avg = Matrix::Zero(spec.N, spec.N);
  std::vector<int> merged;
  for (int j = 0; j < M; ++j) {
    const auto& Tj = members[j];
    if (Tj.size() < static_cast<size_t>(std::max({r, p + 1, 2}))) {
      merged.push_back(j);
      continue;
    }
    Matrix Yj(spec.N, Tj.size());
    for (size_t k = 0; k < Tj.size(); ++k) Yj.col(k) = Yc.col(Tj[k]);
    Eigen::BDCSVD<Matrix> svd(Yj, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.singularValues().size() < r ||
        svd.singularValues()(r - 1) <= 1e-12 * svd.singularValues()(0)) {
      merged.push_back(j);
      continue;
    }
    th.C[j] = svd.matrixU().leftCols(r);
    Matrix Xj = svd.singularValues().head(r).asDiagonal() *
                svd.matrixV().leftCols(r).transpose();
    Matrix resid = Yj - th.C[j] * Xj;
    R_avg += (static_cast<double>(Tj.size()) / T) *
             symmetrize(resid * resid.transpose() / (Tj.size() - 1.0));

    Vector mu;
    Matrix Sigma;
    initial_moments(Xj, p, mu, Sigma);
    th.mu[j] = mu;
    th.Sigma[j] = Sigma;

    // VAR targets: positions in Tj whose p predecessors are consecutive
    // members of the same regime
    std::vector<int> targets;
    for (size_t k = p; k < Tj.size(); ++k) {
      bool consecutive = true;
      for (int l = 1; l <= p && consecutive; ++l)
        consecutive = Tj[k - l] == Tj[k] - l;
      if (consecutive) targets.push_back(static_cast<int>(k));
    }
    VarFit fit =
        targets.size() >= static_cast<size_t>(p * r + 1)
            ? var_ols(Xj, targets, p)
            : var_ols(Xj, window_targets(0, static_cast<int>(Tj.size()) - 1, p), p);
    th.A[j] = shrink_to_stable(fit.A, spec.constraints.stable_A
                                          ? spec.constraints.stability_margin
                                          : 0.02);
    th.Q[j] = floor_pd(fit.Q);
  }

  for (int j : merged) {
    if (j == largest) continue;
    std::cerr << "init_obs: regime " << j + 1
              << " has too few samples; merged into regime " << largest + 1 << "\n";
    th.C[j] = th.C[largest];
    th.A[j] = th.A[largest];
    th.Q[j] = th.Q[largest];
    th.mu[j] = th.mu[largest];
    th.Sigma[j] = th.Sigma[largest];
  }
  Matrix R = floor_pd(R_avg);
  for (int j = 0; j < M; ++j) th.R[j] = R;
  hard_chain_estimates(S, M, th.pi, th.Z);
  return th;
}

}  // namespace

ThetaParams init_dyn(const Matrix& y, const ModelSpec& spec, const InitOptions& opts) {
  return dyn_pipeline(y, spec, opts, nullptr).theta;
}

ThetaParams init_var(const Matrix& y, const ModelSpec& spec, const InitOptions& opts) {
  return dyn_pipeline(y, spec, opts, nullptr).theta;
}

ThetaParams init_obs(const Matrix& y, const ModelSpec& spec, const InitOptions& opts) {
  return obs_pipeline(y, spec, opts, nullptr);
}

ThetaParams init_with_labels(const Matrix& y, const ModelSpec& spec,
                             const RegimeSequence& S, const InitOptions& opts) {
  if (static_cast<int>(S.size()) != y.cols())
    throw std::invalid_argument("init_with_labels: label length mismatch");
  if (spec.kind == ModelKind::Obs) return obs_pipeline(y, spec, opts, &S);
  return dyn_pipeline(y, spec, opts, &S).theta;
}

std::vector<int> binary_segmentation(const Matrix& xhat, int p, double epsilon,
                                     int min_len) {
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw std::invalid_argument("binary_segmentation: epsilon must be in (0,1)");
  if (min_len < p + 1)
    throw std::invalid_argument("binary_segmentation: min_len must be >= p+1");
  const int T = static_cast<int>(xhat.cols());
  std::vector<int> cps;

  auto sse_of = [&](int lo, int hi) {
    return var_ols(xhat, window_targets(lo, hi, p), p).sse;
  };

  std::vector<std::pair<int, int>> stack{{0, T - 1}};
  while (!stack.empty()) {
    auto [lo, hi] = stack.back();
    stack.pop_back();
    int len = hi - lo + 1;
    if (len < 2 * min_len) continue;
    double whole = sse_of(lo, hi);
    double best = std::numeric_limits<double>::infinity();
    int best_tau = -1;
    for (int tau = lo + min_len; tau + min_len - 1 <= hi; ++tau) {
      double split = sse_of(lo, tau - 1) + sse_of(tau, hi);
      if (split < best) {
        best = split;
        best_tau = tau;
      }
    }
    if (best_tau < 0 || best > (1.0 - epsilon) * whole) continue;
    cps.push_back(best_tau);
    stack.emplace_back(lo, best_tau - 1);
    stack.emplace_back(best_tau, hi);
  }
  std::sort(cps.begin(), cps.end());
  return cps;
}

std::pair<RegimeSequence, std::vector<Matrix>> sliding_window_km(
    const Matrix& y, int M, int window_len, int stride, std::uint64_t seed) {
  const int T = static_cast<int>(y.cols());
  const int N = static_cast<int>(y.rows());
  if (window_len < 2) throw std::invalid_argument("sliding_window_km: window < 2");
  if (window_len > T) throw std::invalid_argument("sliding_window_km: window > T");
  if (stride < 1) throw std::invalid_argument("sliding_window_km: stride < 1");

  const int K = (T - window_len) / stride + 1;
  const int nfeat = N * (N + 1) / 2;
  Matrix feats(K, nfeat);
  for (int k = 0; k < K; ++k) {
    int s = k * stride;
    Matrix W = y.middleCols(s, window_len);
    Matrix Wc = W.colwise() - Vector(W.rowwise().mean());
    Matrix cov = Wc * Wc.transpose() / (window_len - 1.0);
    int col = 0;
    for (int c = 0; c < N; ++c)
      for (int i = c; i < N; ++i) feats(k, col++) = cov(i, c);
  }

  std::vector<int> cluster(K, 0);
  if (M > 1) {
    cluster = kmeans(feats, M, 10, seed).labels;
    relabel_by_first_occurrence(cluster, M);
  }

  RegimeSequence S(T);
  const int half = window_len / 2;
  for (int t = 0; t < T; ++t) {
    int k = (t - half) / stride;
    S[t] = cluster[std::clamp(k, 0, K - 1)];
  }

  std::vector<Matrix> covs(M, Matrix::Zero(N, N));
  for (int j = 0; j < M; ++j) {
    std::vector<int> idx;
    for (int t = 0; t < T; ++t)
      if (S[t] == j) idx.push_back(t);
    if (idx.size() < 2) continue;
    Matrix Yj(N, idx.size());
    for (size_t k = 0; k < idx.size(); ++k) Yj.col(k) = y.col(idx[k]);
    Matrix Yc = Yj.colwise() - Vector(Yj.rowwise().mean());
    covs[j] = symmetrize(Yc * Yc.transpose() / (idx.size() - 1.0));
  }
  return {S, covs};
}

}  // namespace mssm
