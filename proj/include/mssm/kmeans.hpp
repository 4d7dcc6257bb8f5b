#pragma once

#include <cstdint>

#include "mssm/types.hpp"

namespace mssm {

struct KMeansResult {
  std::vector<int> labels;  // per row of X
  Matrix centers;           // k x d
  double inertia = 0.0;
};

/// Lloyd's algorithm with k-means++ seeding, `restarts` seeded restarts,
/// minimum-inertia winner. Deterministic per seed.
KMeansResult kmeans(const Matrix& X, int k, int restarts = 10,
                    std::uint64_t seed = 12345, int max_iter = 100);

}  // namespace mssm
