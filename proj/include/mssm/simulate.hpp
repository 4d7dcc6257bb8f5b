#pragma once

#include <cstdint>

#include "mssm/rng.hpp"
#include "mssm/types.hpp"

namespace mssm {

struct SimOutput {
  Matrix y;                // N x T observations
  std::vector<Matrix> x;   // latent top-block state paths, r x T (M of them for Obs)
  RegimeSequence S;        // length T, 0-based labels
  std::uint64_t seed = 0;
};

/// Markov chain draw: S_1 ~ Multinomial(pi), S_t | S_{t-1}=i ~ row i of Z.
RegimeSequence simulate_chain(const Vector& pi, const Matrix& Z, int T, Rng& rng);

/// Generate observations from the model. For Obs kind all M state chains
/// evolve and only the active one is observed. force_regime >= 0 pins
/// S_t = force_regime for every t (used for single-regime diagnostics).
SimOutput simulate_model(const ThetaParams& theta, const ModelSpec& spec, int T,
                         Rng& rng, int force_regime = -1);

/// Parameter sets from the simulation-study generators: lag-1 entries
/// U[0,0.7] and lag-2+ entries U[0,0.3] redrawn until stable (diagonal
/// U[0.85,0.95] / U[-0.05,0.05] for Var), orthonormal C from the SVD of a
/// Gaussian matrix, Wishart Q, exchangeable R with signal-to-noise ratio
/// rejection kept in [5,10], Z with 0.98 diagonal.
ThetaParams make_study_theta(const ModelSpec& spec, Rng& rng);

/// Symmetric PSD square root used for Gaussian sampling.
Matrix cov_sqrt(const Matrix& S);

/// Wishart(dof, scale) via Bartlett decomposition.
Matrix wishart(double dof, const Matrix& scale, Rng& rng);

}  // namespace mssm
