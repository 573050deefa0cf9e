#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sidrec/graph.h"
#include "sidrec/vocab.h"

namespace sidrec {

struct ModelConfig {
  int layers = 2;
  int d_model = 64;
  int heads = 4;
  int ffn = 256;
  int64_t context_window = 256;
  double dropout = 0.0;
  uint64_t seed = 1;
  Vocab vocab;

  int64_t vocab_size() const { return vocab.size(); }
  void validate() const;
};

// Per-layer key/value caches for incremental decoding. Value semantics:
// branching a state is a copy, and a branch never mutates its parent.
struct DecodeState {
  std::vector<Tensor> k_cache;  // per layer [count, d_model]
  std::vector<Tensor> v_cache;
  int64_t count = 0;
};

// Decoder-only transformer: pre-norm residual blocks, GELU feed-forward,
// learned absolute positions, an SID head over the full vocab and a scalar
// rank head read at the candidate scoring position.
class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  DecodeState new_state() const;

  // Tape forward over `tokens`. With a state, cached positions enter the
  // attention as constants and the new K/V rows are appended to the state.
  // With trunk_as_const the trunk weights enter as constants so gradients
  // reach only what the caller wires up afterwards (rank-head-only mode).
  Var forward(Graph& g, std::span<const int64_t> tokens, DecodeState* state = nullptr, bool train_mode = false,
              uint64_t dropout_seed = 0, bool trunk_as_const = false) const;

  // Whole-sequence convenience pass (fresh state, no recording).
  struct FullForward {
    Tensor hidden;         // [T, d_model]
    Tensor sid_log_probs;  // [T, V], log-softmax over the full vocab
  };
  FullForward forward_full(std::span<const int64_t> tokens) const;

  // Incremental pass reusing `state`; returns hidden rows for the new
  // tokens only. Empty input is a no-op returning an empty tensor.
  Tensor forward_incremental(DecodeState& state, std::span<const int64_t> tokens) const;

  // SID head over the full vocab.
  Var sid_logits(Graph& g, Var hidden, bool head_as_const = false) const;
  // Log-softmax restricted to one SID level's token range, from one hidden
  // row; raw kernel used by beam search.
  Tensor sid_level_log_probs(const Tensor& hidden_row, int level) const;

  // Rank head: scalar logits per hidden row.
  Var rank_logits(Graph& g, Var hidden_rows) const;
  double rank_probability(const Tensor& hidden_row) const;

  void save(const std::string& path) const;
  static Model load(const std::string& path);

 private:
  void init_params();
  ModelConfig cfg_;
  ParamStore params_;
};

}  // namespace sidrec
