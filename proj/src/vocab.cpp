#include "sidrec/vocab.h"

#include <stdexcept>

namespace sidrec {

TokenKind Vocab::sid_kind(int level) {
  switch (level) {
    case 1: return TokenKind::Sid1;
    case 2: return TokenKind::Sid2;
    case 3: return TokenKind::Sid3;
    case 4: return TokenKind::Sid4;
    default: throw std::runtime_error("Vocab: SID level must be 1..4");
  }
}

int64_t Vocab::sid_begin(int level) const {
  if (level < 1 || level > 4) throw std::runtime_error("Vocab: SID level must be 1..4");
  return 1 + static_cast<int64_t>(level - 1) * k;
}

int64_t Vocab::encode(TokenKind kind, uint32_t value) const {
  switch (kind) {
    case TokenKind::Bos:
      if (value != 0) throw std::runtime_error("Vocab: BOS takes no value");
      return bos();
    case TokenKind::Sid1:
    case TokenKind::Sid2:
    case TokenKind::Sid3:
    case TokenKind::Sid4: {
      const int level = kind == TokenKind::Sid1 ? 1 : kind == TokenKind::Sid2 ? 2 : kind == TokenKind::Sid3 ? 3 : 4;
      if (value >= static_cast<uint32_t>(sid_size(level)))
        throw std::runtime_error("Vocab: SID level " + std::to_string(level) + " code " + std::to_string(value) +
                                 " out of range");
      return sid_begin(level) + value;
    }
    case TokenKind::Item:
      if (value >= n_items) throw std::runtime_error("Vocab: item " + std::to_string(value) + " out of range");
      return item_begin() + value;
    case TokenKind::Pad:
      if (value != 0) throw std::runtime_error("Vocab: PAD takes no value");
      return pad();
  }
  throw std::runtime_error("Vocab: bad token kind");
}

std::pair<TokenKind, uint32_t> Vocab::decode(int64_t token) const {
  if (token < 0 || token >= size()) throw std::runtime_error("Vocab: token " + std::to_string(token) + " out of range");
  if (token == bos()) return {TokenKind::Bos, 0};
  for (int level = 1; level <= 4; ++level) {
    const int64_t b = sid_begin(level);
    if (token >= b && token < b + sid_size(level)) return {sid_kind(level), static_cast<uint32_t>(token - b)};
  }
  if (token >= item_begin() && token < pad()) return {TokenKind::Item, static_cast<uint32_t>(token - item_begin())};
  return {TokenKind::Pad, 0};
}

SerializedSequence serialize_history(std::span<const uint32_t> items, const SidIndex& index, const Vocab& vocab,
                                     int64_t context_window) {
  const int64_t required = static_cast<int64_t>(items.size()) * kBlockLen;
  if (required > context_window)
    throw std::runtime_error("serialize_history: need " + std::to_string(required) + " positions, context window has " +
                             std::to_string(context_window));
  SerializedSequence out;
  out.tokens.reserve(static_cast<size_t>(required));
  out.target_mask.reserve(static_cast<size_t>(required));
  out.block_starts.reserve(items.size());
  for (uint32_t item : items) {
    const SemanticId& sid = index.sid_of(item);  // throws on unknown item
    out.block_starts.push_back(static_cast<int64_t>(out.tokens.size()));
    out.tokens.push_back(vocab.bos());
    for (int h = 1; h <= 4; ++h) out.tokens.push_back(vocab.sid_token(h, sid.level(h)));
    out.tokens.push_back(vocab.item_token(item));
    // positions predicting s1..s4 (BOS and the first three SID slots)
    out.target_mask.push_back(true);
    out.target_mask.push_back(true);
    out.target_mask.push_back(true);
    out.target_mask.push_back(true);
    out.target_mask.push_back(false);  // s4 slot predicts the ITEM token
    out.target_mask.push_back(false);  // ITEM slot predicts the next BOS
  }
  return out;
}

std::vector<uint32_t> deserialize_history(const std::vector<int64_t>& tokens, const Vocab& vocab) {
  if (tokens.size() % kBlockLen != 0) throw std::runtime_error("deserialize_history: length not a multiple of 6");
  std::vector<uint32_t> items;
  for (size_t b = 0; b < tokens.size(); b += kBlockLen) {
    if (tokens[b] != vocab.bos()) throw std::runtime_error("deserialize_history: block does not start with BOS");
    for (int h = 1; h <= 4; ++h) {
      auto [kind, value] = vocab.decode(tokens[b + static_cast<size_t>(h)]);
      if (kind != Vocab::sid_kind(h)) throw std::runtime_error("deserialize_history: bad SID token in block");
    }
    auto [kind, value] = vocab.decode(tokens[b + 5]);
    if (kind != TokenKind::Item) throw std::runtime_error("deserialize_history: block does not end with ITEM");
    items.push_back(value);
  }
  return items;
}

int64_t target_pos(int64_t item_index, int level, int64_t n_items) {
  if (item_index < 0 || item_index >= n_items) throw std::runtime_error("target_pos: item index out of range");
  if (level < 1 || level > 4) throw std::runtime_error("target_pos: level must be 1..4");
  return kBlockLen * item_index + level;
}

RerankSuffix build_rerank_suffix(const SemanticId& candidate_sid, std::span<const uint32_t> retrieved_items,
                                 uint32_t candidate_item, const Vocab& vocab) {
  RerankSuffix out;
  out.tokens.push_back(vocab.bos());
  for (int h = 1; h <= 4; ++h) out.tokens.push_back(vocab.sid_token(h, candidate_sid.level(h)));
  for (uint32_t item : retrieved_items) out.tokens.push_back(vocab.item_token(item));
  out.tokens.push_back(vocab.item_token(candidate_item));
  out.scoring_index = static_cast<int64_t>(out.tokens.size()) - 1;
  return out;
}

std::string debug_tokens(std::span<const int64_t> tokens, const Vocab& vocab) {
  std::string s = "[";
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += " ";
    auto [kind, value] = vocab.decode(tokens[i]);
    switch (kind) {
      case TokenKind::Bos: s += "BOS"; break;
      case TokenKind::Sid1: s += "s1:" + std::to_string(value); break;
      case TokenKind::Sid2: s += "s2:" + std::to_string(value); break;
      case TokenKind::Sid3: s += "s3:" + std::to_string(value); break;
      case TokenKind::Sid4: s += "s4:" + std::to_string(value); break;
      case TokenKind::Item: s += "item:" + std::to_string(value); break;
      case TokenKind::Pad: s += "PAD"; break;
    }
  }
  return s + "]";
}

}  // namespace sidrec
