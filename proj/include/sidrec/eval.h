#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sidrec/data.h"
#include "sidrec/decode.h"
#include "sidrec/rerank.h"

namespace sidrec {

// 1 iff the single ground-truth item appears in the top K.
double recall_at_k(std::span<const uint32_t> ranked, uint32_t truth, int k);
// 1/log2(rank+1) if the truth sits at rank <= K (IDCG = 1 for one relevant item).
double ndcg_at_k(std::span<const uint32_t> ranked, uint32_t truth, int k);

enum class YhatMode {
  Model,     // rank-head probability from the reranking pass
  Constant,  // yhat = 0.5 for every candidate (ablation: ranking must equal Base)
  Oracle,    // truth gets yhat = 1, others sit below the per-query dominance bound
};

struct EvalOptions {
  int beam_width = 20;
  int retrieval_len = 10;
  int seq_window = 32;  // serialized window in items
  uint32_t max_history = 1000;
  YhatMode yhat_mode = YhatMode::Model;
  int threads = 1;
  int64_t max_instances = -1;  // cap for quick runs; -1 = all
};

struct MetricRow {
  double recall1 = 0.0;
  double recall5 = 0.0;
  double recall10 = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
};

struct EvalResult {
  MetricRow base;  // ordering by generation log-probability
  MetricRow rank;  // ordering by combined generation + rerank score
  uint64_t instances = 0;
  uint64_t skipped = 0;
  double beam_hit_rate = 0.0;  // fraction of instances whose truth SID is in the beam
};

EvalResult evaluate(const Model& model, const Corpus& corpus, std::span<const InstanceRef> instances,
                    const SidIndex& index, const EvalOptions& opts);

// Per-candidate rows for one query (the `infer` CLI output).
struct InferRow {
  SemanticId sid;
  uint32_t item = 0;
  double gen_logprob = 0.0;
  double yhat = 0.0;
  double combined = 0.0;
  int base_rank = 0;
  int rerank_rank = 0;
};

std::vector<InferRow> infer_user(const Model& model, const Corpus& corpus, const SidIndex& index,
                                 std::span<const uint32_t> history, const EvalOptions& opts);
std::string infer_csv(std::span<const InferRow> rows, const Corpus& corpus);

enum class AblationAxis { Beam, SeqLen, RetrievalLen };

struct AblationCell {
  int axis_value = 0;
  EvalResult result;
};

struct AblationGrid {
  AblationAxis axis;
  std::vector<AblationCell> cells;
};

AblationGrid run_ablation(const Model& model, const Corpus& corpus, std::span<const InstanceRef> instances,
                          const SidIndex& index, const EvalOptions& base_opts, AblationAxis axis,
                          std::span<const int> values);

const char* axis_name(AblationAxis axis);
std::string ablation_csv(const AblationGrid& grid);
std::string ablation_table(const AblationGrid& grid);
std::string eval_csv(const EvalResult& result);

}  // namespace sidrec
