#include "sidrec/kmeans.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sidrec {

double squared_dist(const double* a, const double* b, int64_t d) {
  double s = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    const double c = a[i] - b[i];
    s += c * c;
  }
  return s;
}

int nearest_row(const Tensor& rows, const double* p, int64_t d) {
  int best = 0;
  double best_d = squared_dist(rows.data.data(), p, d);
  for (int64_t k = 1; k < rows.shape[0]; ++k) {
    const double dist = squared_dist(rows.data.data() + k * d, p, d);
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<int>(k);
    }
  }
  return best;
}

Tensor kmeans_pp_init(const Tensor& points, int k, std::mt19937_64& rng) {
  const int64_t n = points.shape[0], d = points.shape[1];
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Tensor centroids = Tensor::zeros({k, d});
  std::vector<double> d2(static_cast<size_t>(n), 0.0);

  const int64_t first = static_cast<int64_t>(uni(rng) * static_cast<double>(n)) % n;
  std::copy_n(points.data.data() + first * d, d, centroids.data.data());

  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double best = squared_dist(points.data.data() + i * d, centroids.data.data(), d);
      for (int cc = 1; cc < c; ++cc)
        best = std::min(best, squared_dist(points.data.data() + i * d, centroids.data.data() + cc * d, d));
      d2[static_cast<size_t>(i)] = best;
      total += best;
    }
    int64_t pick = 0;
    if (total > 0.0) {
      const double r = uni(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (int64_t i = 0; i < n; ++i) {
        acc += d2[static_cast<size_t>(i)];
        if (r < acc) {
          pick = i;
          break;
        }
      }
    } else {
      // degenerate data (all points coincide with chosen centroids)
      pick = static_cast<int64_t>(uni(rng) * static_cast<double>(n)) % n;
    }
    std::copy_n(points.data.data() + pick * d, d, centroids.data.data() + c * d);
  }
  return centroids;
}

KMeansResult lloyd(const Tensor& points, Tensor initial_centroids, int max_iters, double rel_tol) {
  const int64_t n = points.shape[0], d = points.shape[1];
  const int k = static_cast<int>(initial_centroids.shape[0]);
  KMeansResult res;
  res.centroids = std::move(initial_centroids);
  res.assignment.assign(static_cast<size_t>(n), 0);

  auto assign = [&]() {
    double sse = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const int a = nearest_row(res.centroids, points.data.data() + i * d, d);
      res.assignment[static_cast<size_t>(i)] = a;
      sse += squared_dist(points.data.data() + i * d, res.centroids.data.data() + a * d, d);
    }
    return sse / static_cast<double>(n);
  };

  double prev = assign();
  for (int iter = 1; iter <= max_iters; ++iter) {
    // update step: centroids become cluster means
    Tensor sums = Tensor::zeros({k, d});
    std::vector<int64_t> counts(static_cast<size_t>(k), 0);
    for (int64_t i = 0; i < n; ++i) {
      const int a = res.assignment[static_cast<size_t>(i)];
      counts[static_cast<size_t>(a)]++;
      for (int64_t j = 0; j < d; ++j) sums.at(a, j) += points.at(i, j);
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] == 0) continue;
      const double inv = 1.0 / static_cast<double>(counts[static_cast<size_t>(c)]);
      for (int64_t j = 0; j < d; ++j) res.centroids.at(c, j) = sums.at(c, j) * inv;
    }
    // re-seed empty clusters to the point farthest from its centroid
    std::vector<bool> taken(static_cast<size_t>(n), false);
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] != 0) continue;
      int64_t far_i = 0;
      double far_d = -1.0;
      for (int64_t i = 0; i < n; ++i) {
        if (taken[static_cast<size_t>(i)]) continue;
        const int a = res.assignment[static_cast<size_t>(i)];
        const double dist = squared_dist(points.data.data() + i * d, res.centroids.data.data() + a * d, d);
        if (dist > far_d) {
          far_d = dist;
          far_i = i;
        }
      }
      taken[static_cast<size_t>(far_i)] = true;
      std::copy_n(points.data.data() + far_i * d, d, res.centroids.data.data() + c * d);
    }

    const double cur = assign();
    res.iterations = iter;
    res.mse = cur;
    if (prev - cur <= rel_tol * std::max(prev, 1e-300)) break;
    prev = cur;
  }
  if (res.iterations == 0) res.mse = prev;
  return res;
}

KMeansResult kmeans(const Tensor& points, int k, uint64_t seed, int max_iters, double rel_tol) {
  if (points.rank() != 2 || points.shape[0] < 1) throw_shape_error("kmeans", points);
  if (k < 1 || k > points.shape[0]) throw std::runtime_error("kmeans: k out of range");
  std::mt19937_64 rng(seed);
  return lloyd(points, kmeans_pp_init(points, k, rng), max_iters, rel_tol);
}

}  // namespace sidrec
