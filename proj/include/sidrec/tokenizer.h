#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sidrec/tensor.h"

namespace sidrec {

// 4-level semantic ID: three residual-quantizer codes plus a
// disambiguation integer making the tuple unique per item.
struct SemanticId {
  uint16_t s1 = 0, s2 = 0, s3 = 0, s4 = 0;

  friend bool operator==(const SemanticId&, const SemanticId&) = default;
  friend auto operator<=>(const SemanticId&, const SemanticId&) = default;

  uint64_t packed() const {
    return (static_cast<uint64_t>(s1) << 48) | (static_cast<uint64_t>(s2) << 32) |
           (static_cast<uint64_t>(s3) << 16) | static_cast<uint64_t>(s4);
  }
  uint16_t level(int h) const;  // h in 1..4
  std::string str() const;
};

// Per-level centroid tables from residual k-means.
struct Codebook {
  int64_t dim = 0;
  int k_per_level = 0;
  int levels = 0;
  uint64_t seed = 0;
  std::vector<Tensor> centroids;   // levels tables of [K, dim]
  std::vector<double> level_mse;   // mean squared residual after levels 1..L
};

// Fixed-depth-4 prefix tree over all catalog SIDs.
class SidTrie {
 public:
  struct Node {
    std::vector<std::pair<uint16_t, int32_t>> children;  // sorted by code
    int32_t item = -1;                                   // set at depth 4
  };

  SidTrie() { nodes_.emplace_back(); }

  void insert(const SemanticId& sid, uint32_t item);
  // Node id after walking prefix from the root, or -1 if the path is absent.
  int32_t walk(std::span<const uint16_t> prefix) const;
  const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }
  size_t leaf_count() const { return leaves_; }
  bool empty() const { return leaves_ == 0; }

 private:
  int32_t child_of(int32_t id, uint16_t code) const;
  std::vector<Node> nodes_;
  size_t leaves_ = 0;
};

// Bijection between catalog items and their SIDs, plus the prefix trie.
struct SidIndex {
  uint32_t s4_max = 0;
  std::vector<SemanticId> item_to_sid;               // dense item id -> SID
  std::unordered_map<uint64_t, uint32_t> sid_to_item;  // packed SID -> item
  SidTrie trie;

  uint32_t size() const { return static_cast<uint32_t>(item_to_sid.size()); }
  const SemanticId& sid_of(uint32_t item) const;
  std::optional<uint32_t> try_item_of(const SemanticId& sid) const;
};

// Residual k-means fit: level 1 on the embeddings, each deeper level on the
// residual after subtracting the assigned centroids of all previous levels.
Codebook fit_codebook(const Tensor& embeddings, int k, int levels, uint64_t seed);

// Greedy per-level nearest-centroid codes for one embedding.
std::vector<uint16_t> assign_codes(const Codebook& cb, const double* embedding, int64_t dim);
std::vector<uint16_t> assign_codes(const Codebook& cb, const Tensor& embedding);

// Assign distinct s4 values within each (s1,s2,s3) collision group, drawn
// without replacement from a seeded shuffle of [0, s4_max).
SidIndex resolve_collisions(const std::vector<std::array<uint16_t, 3>>& codes_per_item, uint32_t s4_max,
                            uint64_t seed);

// Check a loaded codebook against the catalog it will be used with.
void validate_codebook(const Codebook& cb, int64_t embedding_dim, uint32_t n_items, uint32_t index_items);

void save_codebook(const std::string& path, const Codebook& cb, const SidIndex& index);
struct LoadedCodebook {
  Codebook codebook;
  SidIndex index;
};
LoadedCodebook load_codebook(const std::string& path);

}  // namespace sidrec
