#include "mssm/kmeans.hpp"

#include <limits>

#include "mssm/rng.hpp"

namespace mssm {

namespace {

double assign_labels(const Matrix& X, const Matrix& centers, std::vector<int>& labels) {
  const int n = static_cast<int>(X.rows());
  const int k = static_cast<int>(centers.rows());
  double inertia = 0.0;
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (int c = 0; c < k; ++c) {
      double d = (X.row(i) - centers.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        arg = c;
      }
    }
    labels[i] = arg;
    inertia += best;
  }
  return inertia;
}

Matrix plus_plus_centers(const Matrix& X, int k, Rng& rng) {
  const int n = static_cast<int>(X.rows());
  Matrix centers(k, X.cols());
  centers.row(0) = X.row(static_cast<int>(rng.uniform() * n) % n);
  Vector d2 = (X.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    double total = d2.sum();
    int pick;
    if (total <= 0) {
      pick = static_cast<int>(rng.uniform() * n) % n;
    } else {
      double u = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2(i);
        if (u < acc) {
          pick = i;
          break;
        }
      }
    }
    centers.row(c) = X.row(pick);
    d2 = d2.cwiseMin((X.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  return centers;
}

}  // namespace

KMeansResult kmeans(const Matrix& X, int k, int restarts, std::uint64_t seed,
                    int max_iter) {
  const int n = static_cast<int>(X.rows());
  if (k < 1) throw std::invalid_argument("kmeans: k < 1");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();

  for (int rep = 0; rep < restarts; ++rep) {
    Rng rng = Rng::substream(seed, rep);
    Matrix centers = plus_plus_centers(X, k, rng);
    std::vector<int> labels(n, -1), prev(n, -2);
    double inertia = 0.0;
    for (int it = 0; it < max_iter; ++it) {
      inertia = assign_labels(X, centers, labels);
      if (labels == prev) break;
      prev = labels;
      for (int c = 0; c < k; ++c) {
        int count = 0;
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(X.cols());
        for (int i = 0; i < n; ++i)
          if (labels[i] == c) {
            mean += X.row(i);
            ++count;
          }
        if (count > 0) {
          centers.row(c) = mean / count;
        } else {
          // reseat an empty cluster at the point farthest from its center
          int far = 0;
          double dmax = -1.0;
          for (int i = 0; i < n; ++i) {
            double d = (X.row(i) - centers.row(labels[i])).squaredNorm();
            if (d > dmax) {
              dmax = d;
              far = i;
            }
          }
          centers.row(c) = X.row(far);
        }
      }
    }
    inertia = assign_labels(X, centers, labels);
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.labels = labels;
      best.centers = centers;
    }
  }
  return best;
}

}  // namespace mssm
