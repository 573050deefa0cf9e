#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "sidrec/tensor.h"

namespace sidrec {

struct KMeansResult {
  Tensor centroids;             // [k, d]
  std::vector<int> assignment;  // per point, nearest centroid (tie -> lowest index)
  double mse = 0.0;             // mean squared distance under final assignment
  int iterations = 0;
};

// Lloyd's from explicit initial centroids. Empty clusters are re-seeded to
// the point currently farthest from its assigned centroid. Always runs at
// least one update+assign cycle, so the final MSE never exceeds the MSE
// against any fixed per-cluster center (in particular the zero vector).
KMeansResult lloyd(const Tensor& points, Tensor initial_centroids, int max_iters = 100, double rel_tol = 1e-6);

// k-means++ seeding: first centroid uniform, the rest sampled with
// probability proportional to squared distance from the chosen set.
Tensor kmeans_pp_init(const Tensor& points, int k, std::mt19937_64& rng);

KMeansResult kmeans(const Tensor& points, int k, uint64_t seed, int max_iters = 100, double rel_tol = 1e-6);

int nearest_row(const Tensor& rows, const double* p, int64_t d);
double squared_dist(const double* a, const double* b, int64_t d);

}  // namespace sidrec
