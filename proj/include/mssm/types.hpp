#pragma once

#include <Eigen/Dense>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace mssm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Which flavor of switching state-space model.
///  Dyn: shared observation map, regime-switching state dynamics.
///  Var: observation IS the state (C = I, R = 0), switching VAR.
///  Obs: M independent state chains, the active regime picks which one is
///       observed (and through which observation matrix).
enum class ModelKind { Dyn, Var, Obs };

enum class ParamField { A, C, Q, Sigma, Mu };

/// Pinned coefficients for one coefficient matrix. mask(i,j) != 0 means
/// entry (i,j) is held at values(i,j) during the M-step.
struct FixedMask {
  Eigen::MatrixXi mask;
  Matrix values;
  bool any() const { return mask.size() > 0 && (mask.array() != 0).any(); }
};

struct ConstraintSet {
  std::optional<FixedMask> fixed_A;  // shape r x (p*r), lag blocks side by side
  std::optional<FixedMask> fixed_C;  // shape N x r
  bool diag_Q = false;
  bool diag_R = false;
  bool diag_Sigma = false;
  std::optional<Vector> scale_C;  // per-column norm targets, length r
  std::set<ParamField> equal_across_regimes;
  bool stable_A = false;
  double stability_margin = 0.02;  // epsilon in (0,1)
};

struct ModelSpec {
  ModelKind kind = ModelKind::Dyn;
  int M = 1;  // regimes
  int p = 1;  // autoregressive order
  int r = 1;  // state dimension (forced to N for Var)
  int N = 1;  // observation dimension
  ConstraintSet constraints;

  int state_dim() const { return p * r; }               // companion dim per chain
  int n_chains() const { return kind == ModelKind::Obs ? M : 1; }
};

/// Hidden regime labels, 0-based internally (0..M-1). File formats use
/// 1-based labels.
using RegimeSequence = std::vector<int>;

/// Full parameter set in companion-expanded form. A is stored as p lag
/// blocks per regime; companion()/A_row() provide the order-1 views that
/// the filtering and stationary-covariance code consume.
struct ThetaParams {
  std::vector<std::vector<Matrix>> A;  // A[j][l]: r x r, lag l+1
  std::vector<Matrix> C;               // N x r per regime (equal entries for Dyn, identity for Var)
  std::vector<Matrix> Q;               // r x r innovation covariances
  std::vector<Matrix> R;               // N x N observation noise (tied for Dyn/Obs, zero for Var)
  std::vector<Vector> mu;              // p*r initial state means (chain-indexed for Obs)
  std::vector<Matrix> Sigma;           // p*r x p*r initial state covariances
  Vector pi;                           // M
  Matrix Z;                            // M x M transition probabilities

  int n_regimes() const { return static_cast<int>(pi.size()); }
  int n_lags() const { return A.empty() ? 0 : static_cast<int>(A[0].size()); }

  /// pr x pr companion matrix of regime j's lag blocks.
  Matrix companion(int j) const;
  /// r x (p*r) stacked lag blocks [A_1 ... A_p] of regime j.
  Matrix A_row(int j) const;
  void set_A_row(int j, const Matrix& row);
};

/// Zero-initialized parameter set with the shapes the spec requires
/// (identity C / zero R for Var, uniform pi/Z rows).
ThetaParams make_theta_shell(const ModelSpec& spec);

/// Empty list iff all ThetaParams invariants hold; each violation names
/// the parameter, index, and rule (indices reported 1-based).
std::vector<std::string> validate(const ThetaParams& theta, const ModelSpec& spec);

/// Best label permutation sigma (0-based, sigma[est_label] = true_label) by
/// classification rate, ties broken by lexicographically smallest sigma.
/// Throws std::invalid_argument for M > 8.
std::pair<std::vector<int>, double> match_regimes_by_classification(
    const RegimeSequence& S_hat, const RegimeSequence& S_true, int M);

/// Relabel all regime-indexed parameters: new label sigma[j] receives old
/// regime j's parameters; Z rows and columns are both permuted.
ThetaParams permute_regimes(const ThetaParams& theta, const std::vector<int>& sigma);

/// Classification rate of S_hat against S_true under the best permutation.
double classification_rate(const RegimeSequence& S_hat, const RegimeSequence& S_true, int M);

Matrix symmetrize(const Matrix& X);

}  // namespace mssm
