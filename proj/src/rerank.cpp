#include "sidrec/rerank.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sidrec {

double cosine_sim(const double* a, const double* b, int64_t dim) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (int64_t i = 0; i < dim; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw std::runtime_error("cosine_sim: zero vector");
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

double cosine_sim(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw_shape_error("cosine_sim", a, b);
  return cosine_sim(a.data.data(), b.data.data(), a.numel());
}

RetrievalPool make_pool(const Catalog& catalog, std::span<const uint32_t> history, uint32_t max_history) {
  RetrievalPool pool;
  pool.catalog = &catalog;
  const size_t take = std::min<size_t>(history.size(), max_history);
  pool.items.assign(history.end() - static_cast<std::ptrdiff_t>(take), history.end());
  return pool;
}

std::vector<uint32_t> gsu_retrieve(const double* candidate_emb, const RetrievalPool& pool, int m) {
  if (m < 0) throw std::runtime_error("gsu_retrieve: retrieval length must be >= 0");
  if (m == 0 || pool.items.empty()) return {};
  const Catalog& cat = *pool.catalog;
  const size_t n = pool.items.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> sims(n);
  for (size_t i = 0; i < n; ++i) sims[i] = cosine_sim(candidate_emb, cat.emb(pool.items[i]), cat.dim);
  // similarity descending; equal similarity prefers the more recent position
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return a > b;
  });
  const size_t take = std::min<size_t>(static_cast<size_t>(m), n);
  std::vector<size_t> selected(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
  std::sort(selected.begin(), selected.end());  // back to chronological order
  std::vector<uint32_t> out;
  out.reserve(take);
  for (size_t i : selected) out.push_back(pool.items[i]);
  return out;
}

namespace {

std::vector<int64_t> suffix_item_tokens(const Candidate& candidate, std::span<const uint32_t> retrieved,
                                        const Vocab& vocab) {
  // The BOS and SID tokens are already in the candidate's branch cache;
  // only the ITEM tail is fed here.
  std::vector<int64_t> tokens;
  tokens.reserve(retrieved.size() + 1);
  for (uint32_t item : retrieved) tokens.push_back(vocab.item_token(item));
  tokens.push_back(vocab.item_token(candidate.item));
  return tokens;
}

}  // namespace

double rerank_candidate(const Model& model, const Candidate& candidate, std::span<const uint32_t> retrieved,
                        const Vocab& vocab) {
  const std::vector<int64_t> tokens = suffix_item_tokens(candidate, retrieved, vocab);
  DecodeState branch = candidate.state;
  if (branch.count + static_cast<int64_t>(tokens.size()) > model.config().context_window)
    throw std::runtime_error("rerank_candidate: cache of " + std::to_string(branch.count) + " plus suffix of " +
                             std::to_string(tokens.size()) + " overflows context window " +
                             std::to_string(model.config().context_window));
  Tensor hidden = model.forward_incremental(branch, tokens);
  Tensor last = pick_rows(hidden, {hidden.shape[0] - 1});
  last.shape = {last.numel()};
  return model.rank_probability(last);
}

Var rerank_candidate_grad(const Model& model, Graph& g, const Candidate& candidate,
                          std::span<const uint32_t> retrieved, const Vocab& vocab, bool rank_head_only) {
  const std::vector<int64_t> tokens = suffix_item_tokens(candidate, retrieved, vocab);
  DecodeState branch = candidate.state;
  if (branch.count + static_cast<int64_t>(tokens.size()) > model.config().context_window)
    throw std::runtime_error("rerank_candidate_grad: cache of " + std::to_string(branch.count) + " plus suffix of " +
                             std::to_string(tokens.size()) + " overflows context window " +
                             std::to_string(model.config().context_window));
  Var hidden = model.forward(g, tokens, &branch, false, 0, rank_head_only);
  Var last = g.pick_rows(hidden, {static_cast<int64_t>(tokens.size()) - 1});
  return g.sigmoid(model.rank_logits(g, last));
}

double combined_score(double gen_logprob, double yhat) {
  return gen_logprob + std::log(std::max(yhat, 1e-12));
}

void sort_by_combined(std::vector<Candidate>& candidates) {
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.combined != b.combined) return a.combined > b.combined;
    if (a.gen_logprob != b.gen_logprob) return a.gen_logprob > b.gen_logprob;
    return a.sid < b.sid;
  });
}

}  // namespace sidrec
