#include "sidrec/decode.h"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace sidrec {

PrefixState encode_prefix(const Model& model, std::span<const int64_t> tokens) {
  if (tokens.empty()) throw std::runtime_error("encode_prefix: empty prefix");
  PrefixState ps;
  ps.state = model.new_state();
  Tensor hidden = model.forward_incremental(ps.state, tokens);
  ps.last_hidden = pick_rows(hidden, {hidden.shape[0] - 1});
  ps.last_hidden.shape = {ps.last_hidden.numel()};
  return ps;
}

namespace {

struct LiveBeam {
  std::vector<uint16_t> codes;
  double logprob = 0.0;
  DecodeState state;
  Tensor hidden;  // [d]
};

struct Expansion {
  size_t parent = 0;
  uint16_t code = 0;
  double logprob = 0.0;
};

bool tuple_less(const std::vector<uint16_t>& a, uint16_t ca, const std::vector<uint16_t>& b, uint16_t cb) {
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return a[i] < b[i];
  }
  return ca < cb;
}

}  // namespace

std::vector<Candidate> beam_search(const Model& model, const PrefixState& prefix, const SidIndex& index,
                                   int beam_width, bool constrained, BeamSearchStats* stats,
                                   std::vector<BeamTableRow>* table) {
  if (beam_width < 1) throw std::runtime_error("beam_search: beam width must be >= 1");
  if (constrained && index.trie.empty()) throw std::runtime_error("beam_search: empty SID trie");

  BeamSearchStats local;
  BeamSearchStats& st = stats ? *stats : local;
  st = BeamSearchStats{};

  std::vector<LiveBeam> live(1);
  live[0].state = prefix.state;
  live[0].hidden = prefix.last_hidden;

  for (int level = 1; level <= 4; ++level) {
    std::vector<Expansion> expansions;
    for (size_t b = 0; b < live.size(); ++b) {
      const Tensor lp = model.sid_level_log_probs(live[b].hidden, level);
      if (constrained) {
        const int32_t node = index.trie.walk(live[b].codes);
        if (node < 0) continue;
        for (const auto& [code, child] : index.trie.node(node).children)
          expansions.push_back({b, code, live[b].logprob + lp.at(0, code)});
      } else {
        for (int64_t code = 0; code < lp.shape[1]; ++code)
          expansions.push_back({b, static_cast<uint16_t>(code), live[b].logprob + lp.at(0, code)});
      }
    }
    if (expansions.empty()) throw std::runtime_error("beam_search: no valid expansions at level " + std::to_string(level));
    std::sort(expansions.begin(), expansions.end(), [&](const Expansion& a, const Expansion& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      return tuple_less(live[a.parent].codes, a.code, live[b.parent].codes, b.code);
    });
    if (static_cast<int>(expansions.size()) > beam_width) expansions.resize(static_cast<size_t>(beam_width));

    std::vector<LiveBeam> next;
    next.reserve(expansions.size());
    for (const Expansion& e : expansions) {
      LiveBeam nb;
      nb.codes = live[e.parent].codes;
      nb.codes.push_back(e.code);
      nb.logprob = e.logprob;
      nb.state = live[e.parent].state;  // branch: copy, parent untouched
      const int64_t token = model.config().vocab.sid_token(level, e.code);
      Tensor hidden = model.forward_incremental(nb.state, std::span<const int64_t>(&token, 1));
      st.incremental_calls++;
      nb.hidden = std::move(hidden);
      nb.hidden.shape = {nb.hidden.numel()};
      if (table) table->push_back({level, nb.codes, nb.logprob});
      next.push_back(std::move(nb));
    }
    live = std::move(next);
    st.rounds++;
  }

  std::vector<Candidate> out;
  out.reserve(live.size());
  for (LiveBeam& b : live) {
    SemanticId sid{b.codes[0], b.codes[1], b.codes[2], b.codes[3]};
    auto item = index.try_item_of(sid);
    if (!item) {
      st.dropped_invalid++;
      continue;
    }
    Candidate c;
    c.sid = sid;
    c.item = *item;
    c.gen_logprob = b.logprob;
    c.state = std::move(b.state);
    c.last_hidden = std::move(b.hidden);
    out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    if (a.gen_logprob != b.gen_logprob) return a.gen_logprob > b.gen_logprob;
    return a.sid < b.sid;
  });
  return out;
}

uint32_t map_sid_to_item(const SemanticId& sid, const SidIndex& index) {
  auto item = index.try_item_of(sid);
  if (!item) throw std::runtime_error("map_sid_to_item: SID " + sid.str() + " not in index");
  return *item;
}

std::string beam_table_csv(const std::vector<BeamTableRow>& rows) {
  std::ostringstream os;
  os << "round,sid_prefix,logprob\n";
  os.precision(9);
  os << std::fixed;
  for (const BeamTableRow& r : rows) {
    os << r.round << ",";
    for (size_t i = 0; i < r.prefix.size(); ++i) {
      if (i) os << "-";
      os << r.prefix[i];
    }
    os << "," << r.logprob << "\n";
  }
  return os.str();
}

}  // namespace sidrec
