#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "sidrec/kmeans.h"
#include "sidrec/tokenizer.h"

using namespace sidrec;

namespace {

Tensor random_points(int64_t n, int64_t d, uint64_t seed, double spread = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, spread);
  Tensor t = Tensor::zeros({n, d});
  for (double& v : t.data) v = dist(rng);
  return t;
}

// Independent Lloyd's used as the exhaustive-seeding oracle: plain
// assign/update loop, no k-means++ and no empty-cluster handling.
Tensor oracle_lloyd_2means(const Tensor& pts, int64_t seed_a, int64_t seed_b) {
  const int64_t n = pts.shape[0], d = pts.shape[1];
  std::array<std::array<double, 2>, 2> c{};
  for (int64_t j = 0; j < d; ++j) {
    c[0][static_cast<size_t>(j)] = pts.at(seed_a, j);
    c[1][static_cast<size_t>(j)] = pts.at(seed_b, j);
  }
  std::vector<int> assign(static_cast<size_t>(n), 0);
  for (int iter = 0; iter < 50; ++iter) {
    for (int64_t i = 0; i < n; ++i) {
      double d0 = 0.0, d1 = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        d0 += (pts.at(i, j) - c[0][static_cast<size_t>(j)]) * (pts.at(i, j) - c[0][static_cast<size_t>(j)]);
        d1 += (pts.at(i, j) - c[1][static_cast<size_t>(j)]) * (pts.at(i, j) - c[1][static_cast<size_t>(j)]);
      }
      assign[static_cast<size_t>(i)] = d1 < d0 ? 1 : 0;
    }
    std::array<std::array<double, 2>, 2> sums{};
    std::array<int, 2> counts{};
    for (int64_t i = 0; i < n; ++i) {
      counts[static_cast<size_t>(assign[static_cast<size_t>(i)])]++;
      for (int64_t j = 0; j < d; ++j)
        sums[static_cast<size_t>(assign[static_cast<size_t>(i)])][static_cast<size_t>(j)] += pts.at(i, j);
    }
    for (int k = 0; k < 2; ++k)
      if (counts[static_cast<size_t>(k)])
        for (int64_t j = 0; j < d; ++j)
          c[static_cast<size_t>(k)][static_cast<size_t>(j)] =
              sums[static_cast<size_t>(k)][static_cast<size_t>(j)] / counts[static_cast<size_t>(k)];
  }
  Tensor out = Tensor::zeros({2, d});
  for (int k = 0; k < 2; ++k)
    for (int64_t j = 0; j < d; ++j) out.at(k, j) = c[static_cast<size_t>(k)][static_cast<size_t>(j)];
  return out;
}

bool centroid_sets_match(const Tensor& a, const Tensor& b, double tol) {
  // up to index permutation (2x2 case)
  auto close = [&](int64_t i, int64_t j) {
    for (int64_t c = 0; c < a.shape[1]; ++c)
      if (std::abs(a.at(i, c) - b.at(j, c)) > tol) return false;
    return true;
  };
  return (close(0, 0) && close(1, 1)) || (close(0, 1) && close(1, 0));
}

}  // namespace

TEST_CASE("four-point worked example matches the exhaustive seeding oracle") {
  DtypeGuard mode(Dtype::f64);
  const Tensor pts = Tensor::from({4, 2}, {0, 0, 0, 1, 10, 0, 10, 1});
  const Tensor expected_l1 = Tensor::from({2, 2}, {0, 0.5, 10, 0.5});
  const Tensor expected_l2 = Tensor::from({2, 2}, {0, -0.5, 0, 0.5});

  // oracle: every seeding that separates the two x-groups converges to the
  // stated level-1 centroids in one step
  for (int64_t a : {0, 1})
    for (int64_t b : {2, 3}) {
      CHECK(centroid_sets_match(oracle_lloyd_2means(pts, a, b), expected_l1, 1e-12));
      CHECK(centroid_sets_match(oracle_lloyd_2means(pts, b, a), expected_l1, 1e-12));
    }

  const Codebook cb = fit_codebook(pts, 2, 2, 7);
  CHECK(centroid_sets_match(cb.centroids[0], expected_l1, 1e-9));
  CHECK(centroid_sets_match(cb.centroids[1], expected_l2, 1e-9));
  CHECK(cb.level_mse[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(cb.level_mse[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("k=1 codebook is the mean; every item shares (0,0,0)") {
  DtypeGuard mode(Dtype::f64);
  const Tensor pts = Tensor::from({3, 2}, {0, 0, 3, 0, 0, 3});
  const Codebook cb = fit_codebook(pts, 1, 3, 1);
  CHECK(cb.centroids[0].at(0, 0) == doctest::Approx(1.0));
  CHECK(cb.centroids[0].at(0, 1) == doctest::Approx(1.0));
  for (int64_t i = 0; i < 3; ++i) {
    const auto codes = assign_codes(cb, pts.data.data() + i * 2, 2);
    CHECK(codes == std::vector<uint16_t>{0, 0, 0});
  }
}

TEST_CASE("embeddings equal to K distinct points leave zero residual at level 1") {
  DtypeGuard mode(Dtype::f64);
  const Tensor pts = random_points(8, 4, 3);
  const Codebook cb = fit_codebook(pts, 8, 3, 11);
  CHECK(cb.level_mse[0] == doctest::Approx(0.0).epsilon(1e-20));
  CHECK(cb.level_mse[1] == doctest::Approx(0.0).epsilon(1e-20));
  CHECK(cb.level_mse[2] == doctest::Approx(0.0).epsilon(1e-20));
}

TEST_CASE("fit_codebook preconditions") {
  DtypeGuard mode(Dtype::f64);
  Tensor dup = Tensor::from({3, 2}, {1, 1, 1, 1, 2, 2});  // only 2 distinct
  CHECK_THROWS_WITH_AS(fit_codebook(dup, 3, 1, 1), doctest::Contains("distinct"), std::runtime_error);
  Tensor bad = Tensor::from({2, 2}, {1, 1, std::nan(""), 0});
  CHECK_THROWS_WITH_AS(fit_codebook(bad, 1, 1, 1), doctest::Contains("item 1"), std::runtime_error);
}

TEST_CASE("assign_codes follows the exact centroid chain and breaks ties low") {
  DtypeGuard mode(Dtype::f64);
  Codebook cb;
  cb.dim = 2;
  cb.k_per_level = 3;
  cb.levels = 3;
  cb.centroids.push_back(Tensor::from({3, 2}, {0, 0, 5, 0, 9, 3}));
  cb.centroids.push_back(Tensor::from({3, 2}, {0.5, 0.5, -1, 0, 0, -1}));
  cb.centroids.push_back(Tensor::from({3, 2}, {0, 0, 0.25, 0, 0, 0.25}));

  // embedding = c1[2] + c2[0] + c3[1]
  Tensor emb = Tensor::from({2}, {9 + 0.5 + 0.25, 3 + 0.5 + 0});
  const auto codes = assign_codes(cb, emb);
  CHECK(codes == std::vector<uint16_t>{2, 0, 1});
  // residual after the chain is exactly zero
  double rx = emb.at(0) - 9 - 0.5 - 0.25, ry = emb.at(1) - 3 - 0.5 - 0;
  CHECK(rx == 0.0);
  CHECK(ry == 0.0);

  // equidistant from level-1 centroids 0 and 1 -> lower index wins
  Tensor mid = Tensor::from({2}, {2.5, 0.0});
  CHECK(assign_codes(cb, mid)[0] == 0);

  CHECK_THROWS_WITH_AS(assign_codes(cb, Tensor::from({3}, {1, 2, 3})), doctest::Contains("dimension mismatch"),
                       std::runtime_error);
}

TEST_CASE("three-level reconstruction beats level-1-only quantization") {
  DtypeGuard mode(Dtype::f64);
  const Tensor pts = random_points(200, 8, 21);
  const Codebook cb = fit_codebook(pts, 8, 3, 5);
  // level-1-only oracle: quantize with just the first table
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int64_t> pick(0, pts.shape[0] - 1);
  const int64_t i = pick(rng);
  const double* x = pts.data.data() + i * 8;
  const auto codes = assign_codes(cb, x, 8);
  double full = 0.0, l1_only = 0.0;
  for (int64_t j = 0; j < 8; ++j) {
    const double rec3 = cb.centroids[0].at(codes[0], j) + cb.centroids[1].at(codes[1], j) +
                        cb.centroids[2].at(codes[2], j);
    const double rec1 = cb.centroids[0].at(codes[0], j);
    full += (x[j] - rec3) * (x[j] - rec3);
    l1_only += (x[j] - rec1) * (x[j] - rec1);
  }
  CHECK(full <= l1_only);
}

TEST_CASE("monotone residuals across levels on 10 random datasets") {
  DtypeGuard mode(Dtype::f64);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor pts = random_points(150, 6, 1000 + seed, 2.0);
    const Codebook cb = fit_codebook(pts, 12, 3, seed);
    double prev = 1e300;
    for (double mse : cb.level_mse) {
      CHECK(mse <= prev + 1e-12);
      prev = mse;
    }
    // level 1 MSE itself cannot exceed the raw second moment
    double raw = 0.0;
    for (double v : pts.data) raw += v * v;
    raw /= static_cast<double>(pts.shape[0]);
    CHECK(cb.level_mse[0] <= raw);
  }
}

TEST_CASE("resolve_collisions gives distinct s4 inside groups and a complete trie") {
  std::vector<std::array<uint16_t, 3>> codes{{1, 2, 3}, {1, 2, 3}};
  const SidIndex index = resolve_collisions(codes, 64, 9);
  CHECK(index.item_to_sid[0].s4 != index.item_to_sid[1].s4);
  for (uint32_t item = 0; item < 2; ++item) {
    const SemanticId& sid = index.item_to_sid[item];
    const std::array<uint16_t, 4> path{sid.s1, sid.s2, sid.s3, sid.s4};
    const int32_t leaf = index.trie.walk(path);
    REQUIRE(leaf >= 0);
    CHECK(index.trie.node(leaf).item == static_cast<int32_t>(item));
  }
  CHECK(index.trie.leaf_count() == 2);
}

TEST_CASE("resolve_collisions bijection and pigeonhole error") {
  std::vector<std::array<uint16_t, 3>> distinct{{0, 0, 0}, {0, 0, 1}, {1, 0, 0}};
  const SidIndex index = resolve_collisions(distinct, 4, 1);
  CHECK(index.sid_to_item.size() == 3);
  for (uint32_t item = 0; item < 3; ++item) CHECK(*index.try_item_of(index.sid_of(item)) == item);

  std::vector<std::array<uint16_t, 3>> crowded(5, {7, 7, 7});
  CHECK_THROWS_WITH_AS(resolve_collisions(crowded, 4, 1), doctest::Contains("group of size 5"), std::runtime_error);
}

TEST_CASE("uniqueness: distinct SID count equals catalog size") {
  DtypeGuard mode(Dtype::f64);
  const Tensor pts = random_points(300, 4, 77);
  const Codebook cb = fit_codebook(pts, 4, 3, 77);
  std::vector<std::array<uint16_t, 3>> codes(300);
  for (int64_t i = 0; i < 300; ++i) {
    const auto c = assign_codes(cb, pts.data.data() + i * 4, 4);
    codes[static_cast<size_t>(i)] = {c[0], c[1], c[2]};
  }
  const SidIndex index = resolve_collisions(codes, 64, 3);
  std::set<uint64_t> unique;
  for (const SemanticId& sid : index.item_to_sid) unique.insert(sid.packed());
  CHECK(unique.size() == 300);
  CHECK(index.trie.leaf_count() == 300);
}

TEST_CASE("determinism: same embeddings and seed reproduce codebook and SIDs") {
  DtypeGuard mode(Dtype::f64);
  const Tensor pts = random_points(60, 4, 5);
  const Codebook a = fit_codebook(pts, 6, 3, 42);
  const Codebook b = fit_codebook(pts, 6, 3, 42);
  for (int lvl = 0; lvl < 3; ++lvl) CHECK(a.centroids[lvl].data == b.centroids[lvl].data);
}

TEST_CASE("codebook file round-trip") {
  DtypeGuard mode(Dtype::f32);
  const Tensor pts = random_points(50, 4, 13);
  const Codebook cb = fit_codebook(pts, 5, 3, 13);
  std::vector<std::array<uint16_t, 3>> codes(50);
  for (int64_t i = 0; i < 50; ++i) {
    const auto c = assign_codes(cb, pts.data.data() + i * 4, 4);
    codes[static_cast<size_t>(i)] = {c[0], c[1], c[2]};
  }
  const SidIndex index = resolve_collisions(codes, 16, 13);
  const std::string path = "test_codebook.bin";
  save_codebook(path, cb, index);
  const LoadedCodebook loaded = load_codebook(path);

  // codes bit-exact; centroids bit-identical here because f32 mode already
  // keeps them float-representable
  for (uint32_t item = 0; item < 50; ++item) CHECK(loaded.index.sid_of(item) == index.sid_of(item));
  for (int lvl = 0; lvl < 3; ++lvl) CHECK(loaded.codebook.centroids[lvl].data == cb.centroids[lvl].data);
  // assign_codes of every catalog item unchanged after reload
  for (int64_t i = 0; i < 50; ++i)
    CHECK(assign_codes(loaded.codebook, pts.data.data() + i * 4, 4) == assign_codes(cb, pts.data.data() + i * 4, 4));
  std::remove(path.c_str());
}

TEST_CASE("64-bit centroids survive the float32 file format within 1e-7") {
  DtypeGuard mode(Dtype::f64);
  const Tensor pts = random_points(40, 3, 17);
  const Codebook cb = fit_codebook(pts, 4, 3, 17);
  std::vector<std::array<uint16_t, 3>> codes(40);
  for (int64_t i = 0; i < 40; ++i) {
    const auto c = assign_codes(cb, pts.data.data() + i * 3, 3);
    codes[static_cast<size_t>(i)] = {c[0], c[1], c[2]};
  }
  const std::string path = "test_codebook64.bin";
  save_codebook(path, cb, resolve_collisions(codes, 16, 17));
  const LoadedCodebook loaded = load_codebook(path);
  for (int lvl = 0; lvl < 3; ++lvl)
    for (size_t i = 0; i < cb.centroids[lvl].data.size(); ++i) {
      const double orig = cb.centroids[lvl].data[i];
      CHECK(std::abs(loaded.codebook.centroids[lvl].data[i] - orig) <= 1e-7 * std::max(1.0, std::abs(orig)));
    }
  std::remove(path.c_str());
}

TEST_CASE("truncated codebook file reports a byte offset instead of crashing") {
  DtypeGuard mode(Dtype::f32);
  const Tensor pts = random_points(20, 3, 3);
  const Codebook cb = fit_codebook(pts, 3, 3, 3);
  std::vector<std::array<uint16_t, 3>> codes(20);
  for (int64_t i = 0; i < 20; ++i) {
    const auto c = assign_codes(cb, pts.data.data() + i * 3, 3);
    codes[static_cast<size_t>(i)] = {c[0], c[1], c[2]};
  }
  const std::string path = "test_codebook_trunc.bin";
  save_codebook(path, cb, resolve_collisions(codes, 8, 3));
  // truncate mid-file
  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
  }
  CHECK_THROWS_WITH_AS(load_codebook(path), doctest::Contains("byte offset"), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("mismatched dimension is rejected") {
  Codebook cb;
  cb.dim = 16;
  CHECK_THROWS_WITH_AS(validate_codebook(cb, 128, 10, 10), doctest::Contains("dimension"), std::runtime_error);
  cb.dim = 128;
  CHECK_THROWS_WITH_AS(validate_codebook(cb, 128, 10, 9), doctest::Contains("items"), std::runtime_error);
}
