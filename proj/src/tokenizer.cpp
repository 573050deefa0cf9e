#include "sidrec/tokenizer.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

#include "sidrec/bin_io.h"
#include "sidrec/kmeans.h"

namespace sidrec {

uint16_t SemanticId::level(int h) const {
  switch (h) {
    case 1: return s1;
    case 2: return s2;
    case 3: return s3;
    case 4: return s4;
    default: throw std::runtime_error("SemanticId::level: level must be 1..4");
  }
}

std::string SemanticId::str() const {
  return "(" + std::to_string(s1) + "," + std::to_string(s2) + "," + std::to_string(s3) + "," + std::to_string(s4) +
         ")";
}

// ---- trie ------------------------------------------------------------------

int32_t SidTrie::child_of(int32_t id, uint16_t code) const {
  const auto& ch = nodes_[static_cast<size_t>(id)].children;
  auto it = std::lower_bound(ch.begin(), ch.end(), code,
                             [](const std::pair<uint16_t, int32_t>& a, uint16_t b) { return a.first < b; });
  if (it == ch.end() || it->first != code) return -1;
  return it->second;
}

void SidTrie::insert(const SemanticId& sid, uint32_t item) {
  int32_t cur = 0;
  for (int h = 1; h <= 4; ++h) {
    const uint16_t code = sid.level(h);
    int32_t next = child_of(cur, code);
    if (next < 0) {
      next = static_cast<int32_t>(nodes_.size());
      nodes_.emplace_back();
      auto& ch = nodes_[static_cast<size_t>(cur)].children;
      ch.insert(std::lower_bound(ch.begin(), ch.end(), code,
                                 [](const std::pair<uint16_t, int32_t>& a, uint16_t b) { return a.first < b; }),
                {code, next});
    }
    cur = next;
  }
  Node& leaf = nodes_[static_cast<size_t>(cur)];
  if (leaf.item >= 0) throw std::runtime_error("SidTrie: duplicate SID " + sid.str());
  leaf.item = static_cast<int32_t>(item);
  leaves_++;
}

int32_t SidTrie::walk(std::span<const uint16_t> prefix) const {
  int32_t cur = 0;
  for (uint16_t code : prefix) {
    cur = child_of(cur, code);
    if (cur < 0) return -1;
  }
  return cur;
}

const SemanticId& SidIndex::sid_of(uint32_t item) const {
  if (item >= item_to_sid.size()) throw std::runtime_error("SidIndex: unknown item " + std::to_string(item));
  return item_to_sid[item];
}

std::optional<uint32_t> SidIndex::try_item_of(const SemanticId& sid) const {
  auto it = sid_to_item.find(sid.packed());
  if (it == sid_to_item.end()) return std::nullopt;
  return it->second;
}

// ---- fitting ----------------------------------------------------------------

Codebook fit_codebook(const Tensor& embeddings, int k, int levels, uint64_t seed) {
  if (embeddings.rank() != 2) throw_shape_error("fit_codebook", embeddings);
  const int64_t n = embeddings.shape[0], d = embeddings.shape[1];
  if (k < 1 || levels < 1) throw std::runtime_error("fit_codebook: k and levels must be positive");
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      if (!std::isfinite(embeddings.at(i, j)))
        throw std::runtime_error("fit_codebook: non-finite embedding for item " + std::to_string(i));

  // precondition: at least k distinct embeddings
  {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      return std::lexicographical_compare(embeddings.data.begin() + a * d, embeddings.data.begin() + (a + 1) * d,
                                          embeddings.data.begin() + b * d, embeddings.data.begin() + (b + 1) * d);
    });
    int64_t distinct = n == 0 ? 0 : 1;
    for (int64_t i = 1; i < n; ++i) {
      if (!std::equal(embeddings.data.begin() + order[static_cast<size_t>(i)] * d,
                      embeddings.data.begin() + (order[static_cast<size_t>(i)] + 1) * d,
                      embeddings.data.begin() + order[static_cast<size_t>(i - 1)] * d))
        distinct++;
    }
    if (distinct < k)
      throw std::runtime_error("fit_codebook: need at least " + std::to_string(k) + " distinct embeddings, have " +
                               std::to_string(distinct));
  }

  Codebook cb;
  cb.dim = d;
  cb.k_per_level = k;
  cb.levels = levels;
  cb.seed = seed;

  std::mt19937_64 rng(seed);
  Tensor residual = embeddings;
  for (int lvl = 0; lvl < levels; ++lvl) {
    KMeansResult km = lloyd(residual, kmeans_pp_init(residual, k, rng));
    km.centroids.round_to_mode();  // keeps f32-mode codebooks exact under the float32 file format
    cb.centroids.push_back(km.centroids);
    double sse = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const int a = km.assignment[static_cast<size_t>(i)];
      for (int64_t j = 0; j < d; ++j) {
        residual.at(i, j) -= km.centroids.at(a, j);
        sse += residual.at(i, j) * residual.at(i, j);
      }
    }
    cb.level_mse.push_back(sse / static_cast<double>(n));
  }
  return cb;
}

std::vector<uint16_t> assign_codes(const Codebook& cb, const double* embedding, int64_t dim) {
  if (dim != cb.dim)
    throw std::runtime_error("assign_codes: dimension mismatch, embedding has " + std::to_string(dim) +
                             ", codebook has " + std::to_string(cb.dim));
  std::vector<double> residual(embedding, embedding + dim);
  std::vector<uint16_t> codes;
  codes.reserve(static_cast<size_t>(cb.levels));
  for (int lvl = 0; lvl < cb.levels; ++lvl) {
    const Tensor& table = cb.centroids[static_cast<size_t>(lvl)];
    const int a = nearest_row(table, residual.data(), dim);
    codes.push_back(static_cast<uint16_t>(a));
    for (int64_t j = 0; j < dim; ++j) residual[static_cast<size_t>(j)] -= table.at(a, j);
  }
  return codes;
}

std::vector<uint16_t> assign_codes(const Codebook& cb, const Tensor& embedding) {
  return assign_codes(cb, embedding.data.data(), embedding.numel());
}

// ---- collision resolution ----------------------------------------------------

SidIndex resolve_collisions(const std::vector<std::array<uint16_t, 3>>& codes_per_item, uint32_t s4_max,
                            uint64_t seed) {
  SidIndex index;
  index.s4_max = s4_max;
  index.item_to_sid.resize(codes_per_item.size());

  // group items by (s1,s2,s3) in deterministic prefix order
  std::map<std::array<uint16_t, 3>, std::vector<uint32_t>> groups;
  for (uint32_t item = 0; item < codes_per_item.size(); ++item) groups[codes_per_item[item]].push_back(item);

  std::mt19937_64 rng(seed);
  std::vector<uint16_t> pool(s4_max);
  for (const auto& [prefix, members] : groups) {
    if (members.size() > s4_max)
      throw std::runtime_error("resolve_collisions: collision group of size " + std::to_string(members.size()) +
                               " exceeds s4_max=" + std::to_string(s4_max));
    std::iota(pool.begin(), pool.end(), static_cast<uint16_t>(0));
    std::shuffle(pool.begin(), pool.end(), rng);
    for (size_t i = 0; i < members.size(); ++i) {
      const uint32_t item = members[i];
      SemanticId sid{prefix[0], prefix[1], prefix[2], pool[i]};
      index.item_to_sid[item] = sid;
      index.sid_to_item.emplace(sid.packed(), item);
      index.trie.insert(sid, item);
    }
  }
  if (index.sid_to_item.size() != codes_per_item.size())
    throw std::runtime_error("resolve_collisions: SID uniqueness violated");
  return index;
}

void validate_codebook(const Codebook& cb, int64_t embedding_dim, uint32_t n_items, uint32_t index_items) {
  if (cb.dim != embedding_dim)
    throw std::runtime_error("codebook dimension " + std::to_string(cb.dim) +
                             " does not match embeddings dimension " + std::to_string(embedding_dim));
  if (index_items != n_items)
    throw std::runtime_error("codebook covers " + std::to_string(index_items) + " items, catalog has " +
                             std::to_string(n_items));
}

// ---- persistence --------------------------------------------------------------

namespace {
constexpr uint32_t kCodebookVersion = 1;
}

void save_codebook(const std::string& path, const Codebook& cb, const SidIndex& index) {
  if (cb.levels != 3) throw std::runtime_error("save_codebook: pipeline codebooks have exactly 3 quantized levels");
  BinWriter w(path);
  w.magic("RQKM");
  w.u32(kCodebookVersion);
  w.u32(static_cast<uint32_t>(cb.dim));
  w.u32(static_cast<uint32_t>(cb.k_per_level));
  w.u32(static_cast<uint32_t>(cb.levels));
  w.u32(index.s4_max);
  w.u64(cb.seed);
  for (const Tensor& table : cb.centroids) {
    for (double v : table.data) w.f32(static_cast<float>(v));
  }
  w.u64(index.item_to_sid.size());
  for (uint32_t item = 0; item < index.item_to_sid.size(); ++item) {
    const SemanticId& sid = index.item_to_sid[item];
    w.u64(item);
    w.u16(sid.s1);
    w.u16(sid.s2);
    w.u16(sid.s3);
    w.u16(sid.s4);
  }
  w.close();
}

LoadedCodebook load_codebook(const std::string& path) {
  BinReader r(path);
  r.magic("RQKM");
  const uint32_t version = r.u32();
  if (version != kCodebookVersion) r.fail("version " + std::to_string(version));
  LoadedCodebook out;
  Codebook& cb = out.codebook;
  cb.dim = r.u32();
  cb.k_per_level = static_cast<int>(r.u32());
  cb.levels = static_cast<int>(r.u32());
  out.index.s4_max = r.u32();
  cb.seed = r.u64();
  if (cb.dim <= 0 || cb.k_per_level <= 0 || cb.levels != 3) r.fail("codebook header");
  for (int lvl = 0; lvl < cb.levels; ++lvl) {
    Tensor table = Tensor::zeros({cb.k_per_level, cb.dim});
    for (double& v : table.data) v = static_cast<double>(r.f32());
    cb.centroids.push_back(std::move(table));
  }
  const uint64_t n_items = r.u64();
  out.index.item_to_sid.resize(n_items);
  std::vector<std::array<uint16_t, 3>> seen;
  for (uint64_t i = 0; i < n_items; ++i) {
    const uint64_t item = r.u64();
    if (item >= n_items) r.fail("item id " + std::to_string(item));
    SemanticId sid;
    sid.s1 = r.u16();
    sid.s2 = r.u16();
    sid.s3 = r.u16();
    sid.s4 = r.u16();
    if (sid.s1 >= cb.k_per_level || sid.s2 >= cb.k_per_level || sid.s3 >= cb.k_per_level ||
        sid.s4 >= out.index.s4_max)
      r.fail("SID record " + sid.str());
    out.index.item_to_sid[item] = sid;
    if (!out.index.sid_to_item.emplace(sid.packed(), static_cast<uint32_t>(item)).second)
      r.fail("duplicate SID " + sid.str());
    out.index.trie.insert(sid, static_cast<uint32_t>(item));
  }
  return out;
}

}  // namespace sidrec
