#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sidrec/tokenizer.h"

namespace sidrec {

enum class TokenKind { Bos, Sid1, Sid2, Sid3, Sid4, Item, Pad };

// Disjoint token-id ranges: [BOS][SID1 x K][SID2 x K][SID3 x K][SID4 x s4_max][ITEM x N][PAD]
struct Vocab {
  uint32_t k = 0;
  uint32_t s4_max = 0;
  uint32_t n_items = 0;

  int64_t bos() const { return 0; }
  int64_t sid_begin(int level) const;
  int64_t sid_size(int level) const { return level == 4 ? s4_max : k; }
  int64_t item_begin() const { return 1 + 3 * static_cast<int64_t>(k) + s4_max; }
  int64_t pad() const { return item_begin() + n_items; }
  int64_t size() const { return pad() + 1; }

  int64_t encode(TokenKind kind, uint32_t value) const;
  std::pair<TokenKind, uint32_t> decode(int64_t token) const;
  int64_t sid_token(int level, uint16_t code) const { return encode(sid_kind(level), code); }
  int64_t item_token(uint32_t item) const { return encode(TokenKind::Item, item); }

  static TokenKind sid_kind(int level);
};

// Every item occupies exactly six consecutive positions.
constexpr int64_t kBlockLen = 6;

struct SerializedSequence {
  std::vector<int64_t> tokens;
  std::vector<bool> target_mask;      // true where the NEXT token is a supervised SID target
  std::vector<int64_t> block_starts;  // index of each item's BOS
};

// Flatten a chronological item history into [BOS, s1..s4, ITEM] blocks.
SerializedSequence serialize_history(std::span<const uint32_t> items, const SidIndex& index, const Vocab& vocab,
                                     int64_t context_window);

// Inverse of serialize_history (layout check + item recovery).
std::vector<uint32_t> deserialize_history(const std::vector<int64_t>& tokens, const Vocab& vocab);

// Position of target s_t^h in the flattened sequence: 6t + h. The logit
// that predicts it is read one position earlier.
int64_t target_pos(int64_t item_index, int level, int64_t n_items);

struct RerankSuffix {
  std::vector<int64_t> tokens;
  int64_t scoring_index = 0;  // always the final candidate ITEM token
};

// [BOS, S1..S4 of the candidate, ITEM(retrieved...), ITEM(candidate)]
RerankSuffix build_rerank_suffix(const SemanticId& candidate_sid, std::span<const uint32_t> retrieved_items,
                                 uint32_t candidate_item, const Vocab& vocab);

std::string debug_tokens(std::span<const int64_t> tokens, const Vocab& vocab);

}  // namespace sidrec
