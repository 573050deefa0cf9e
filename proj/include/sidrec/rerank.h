#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sidrec/data.h"
#include "sidrec/decode.h"

namespace sidrec {

double cosine_sim(const double* a, const double* b, int64_t dim);
double cosine_sim(const Tensor& a, const Tensor& b);

// The user's full available history (independent of the serialized window):
// chronological item ids whose embeddings live in the catalog.
struct RetrievalPool {
  std::vector<uint32_t> items;  // oldest first
  const Catalog* catalog = nullptr;
};

RetrievalPool make_pool(const Catalog& catalog, std::span<const uint32_t> history, uint32_t max_history);

// Top-M by cosine similarity to the candidate embedding (ties prefer the
// more recent item), returned re-sorted into chronological order.
std::vector<uint32_t> gsu_retrieve(const double* candidate_emb, const RetrievalPool& pool, int m);

// Feed [ITEM(i1)..ITEM(iM), ITEM(candidate)] on a branch of the candidate's
// post-generation cache and read the rank head at the final position.
double rerank_candidate(const Model& model, const Candidate& candidate, std::span<const uint32_t> retrieved,
                        const Vocab& vocab);

// Recording variant for Stage II: returns sigmoid(rank logit) as a graph
// node; the cached prefix enters the attention as constants.
Var rerank_candidate_grad(const Model& model, Graph& g, const Candidate& candidate,
                          std::span<const uint32_t> retrieved, const Vocab& vocab, bool rank_head_only = false);

// score = gen_logprob + ln(yhat), ln argument clamped at 1e-12.
double combined_score(double gen_logprob, double yhat);

// Final ordering: combined desc, ties by gen_logprob then lexicographic SID.
void sort_by_combined(std::vector<Candidate>& candidates);

}  // namespace sidrec
