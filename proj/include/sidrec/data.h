#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "sidrec/tensor.h"

namespace sidrec {

// Item catalog with frozen embeddings. Internal item ids are dense [0, N);
// external (file) ids map through id_map.
struct Catalog {
  int64_t dim = 0;
  Tensor embeddings;                               // [N, dim]
  std::vector<uint64_t> external_ids;              // internal -> external
  std::unordered_map<uint64_t, uint32_t> id_map;   // external -> internal
  std::vector<int> cluster_labels;                 // synthetic only

  uint32_t size() const { return static_cast<uint32_t>(external_ids.size()); }
  const double* emb(uint32_t item) const { return embeddings.data.data() + static_cast<int64_t>(item) * dim; }
  Tensor emb_row(uint32_t item) const;
};

struct UserSequence {
  uint64_t user_id = 0;
  std::vector<uint32_t> events;  // internal item ids, oldest first
};

struct Corpus {
  Catalog catalog;
  std::vector<UserSequence> sequences;
};

// One evaluation/training instance: predict events[target_pos] from the
// events before it.
struct InstanceRef {
  uint32_t user_index = 0;
  uint32_t target_pos = 0;
};

struct Split {
  std::vector<InstanceRef> train, valid, test;
};

struct SyntheticParams {
  uint32_t n_items = 1000;
  uint32_t n_users = 2000;
  uint32_t clusters = 8;
  double self_prob = 0.6;
  double noise_sigma = 0.15;
  uint32_t seq_len = 40;
  uint32_t dim = 16;
  uint64_t seed = 1;
};

// Planted-structure generator: items cluster on the unit sphere and users
// walk a cluster-level Markov chain, so both the sequential signal and the
// candidate-aware retrieval signal are learnable.
Corpus generate_synthetic(const SyntheticParams& params);

struct LoadReport {
  uint64_t dropped_events = 0;     // events referencing unknown items
  uint64_t dropped_sequences = 0;  // sequences left with < 2 events
};

Corpus load_corpus(const std::string& embeddings_path, const std::string& sequences_path, uint32_t max_history,
                   LoadReport* report = nullptr);

void save_embeddings(const std::string& path, const Catalog& catalog);
void save_sequences(const std::string& path, const Corpus& corpus);
Catalog load_embeddings(const std::string& path);

// Leave-last-out: last event is the test target, second-to-last validation,
// earlier events are train targets. Users with < 3 events go to train only.
Split make_splits(const std::vector<UserSequence>& sequences);

}  // namespace sidrec
