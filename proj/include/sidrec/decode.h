#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sidrec/model.h"
#include "sidrec/tokenizer.h"
#include "sidrec/vocab.h"

namespace sidrec {

// One beam result. The branch state holds the KV cache after
// [prefix, BOS, s1..s4] so reranking can continue incrementally.
struct Candidate {
  SemanticId sid;
  uint32_t item = 0;
  double gen_logprob = 0.0;
  std::vector<uint32_t> retrieved;
  double yhat = -1.0;
  double log_yhat = 0.0;
  double combined = 0.0;
  DecodeState state;
  Tensor last_hidden;  // hidden at the s4 position
};

struct PrefixState {
  DecodeState state;
  Tensor last_hidden;  // hidden at the trailing BOS
};

// Run the history prefix (already ending in BOS) through the decoder.
PrefixState encode_prefix(const Model& model, std::span<const int64_t> tokens);

struct BeamSearchStats {
  int rounds = 0;             // incremental decoding rounds, one per SID level
  int incremental_calls = 0;  // per-beam single-token extensions
  int dropped_invalid = 0;    // unconstrained mode: SIDs with no catalog item
};

struct BeamTableRow {
  int round = 0;
  std::vector<uint16_t> prefix;
  double logprob = 0.0;
};

// Trie-constrained hierarchical beam search: four expansion rounds, per-step
// scores from the log-softmax over that SID level's full token range, top C
// kept globally, ties broken by lexicographically smaller code tuple.
std::vector<Candidate> beam_search(const Model& model, const PrefixState& prefix, const SidIndex& index,
                                   int beam_width, bool constrained = true, BeamSearchStats* stats = nullptr,
                                   std::vector<BeamTableRow>* table = nullptr);

// Deterministic SID -> item mapping (total under constrained decoding).
uint32_t map_sid_to_item(const SemanticId& sid, const SidIndex& index);

std::string beam_table_csv(const std::vector<BeamTableRow>& rows);

}  // namespace sidrec
