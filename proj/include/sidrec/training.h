#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sidrec/data.h"
#include "sidrec/decode.h"
#include "sidrec/model.h"
#include "sidrec/rerank.h"

namespace sidrec {

struct TrainConfig {
  double peak_lr = 3e-4;
  double weight_decay = 1e-4;
  int64_t warmup_steps = 200;
  int64_t total_steps = 5000;
  int batch_size = 16;
  int grad_accum = 1;
  int beam_width = 20;
  int retrieval_len = 10;
  int seq_window = 32;  // serialized window in items
  uint32_t max_history = 1000;
  uint64_t seed = 1;
  bool rank_head_only = false;  // restrict L_rank gradients to the rank head
  double rank_pos_weight = 1.0; // optional positive-class weight, 1 = paper's plain BCE
  int threads = 1;

  // The paper's full-scale schedule (§3 values), mostly useful for tests.
  static TrainConfig paper_scale();
  void validate() const;
};

// Linear warmup to peak, then cosine decay to zero at total_steps.
double lr_at(int64_t step, const TrainConfig& cfg);

// Decoupled-weight-decay Adam.
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;

  void step(ParamStore& params, double lr, double weight_decay);
};

// Stage-I objective: NLL summed over masked SID targets only.
Var loss_sid(const Model& model, Graph& g, const SerializedSequence& seq);

// Inner NLL used by loss_sid, exposed for logit-injection tests:
// rows of log_probs correspond to predicting positions, one target each.
Var nll_over_targets(Graph& g, Var log_probs, std::vector<int64_t> targets);

// Beam-level labels: y = 1 iff the candidate SID equals the ground truth.
std::vector<double> make_beam_labels(const std::vector<Candidate>& candidates, const SemanticId& truth);

// -sum_c [y ln yhat + (1-y) ln(1-yhat)], ln clamped at 1e-12.
double loss_rank_value(std::span<const double> yhats, std::span<const double> labels);

struct TrainLogRow {
  int64_t step = 0;
  double loss_sid = 0.0;
  double loss_rank = 0.0;
  double lr = 0.0;
};

struct TrainContext {
  const Corpus* corpus = nullptr;
  const Split* split = nullptr;
  const SidIndex* index = nullptr;
  Vocab vocab;
};

using ProgressFn = std::function<void(const TrainLogRow&)>;

std::vector<TrainLogRow> train_stage1(Model& model, const TrainContext& ctx, const TrainConfig& cfg,
                                      const ProgressFn& progress = nullptr);

struct Stage2Diagnostics {
  uint64_t skipped_instances = 0;
  uint64_t positive_labels = 0;
  uint64_t instances = 0;
};

std::vector<TrainLogRow> train_stage2(Model& model, const TrainContext& ctx, const TrainConfig& cfg,
                                      const ProgressFn& progress = nullptr, Stage2Diagnostics* diag = nullptr);

// One Stage-II instance pass used by the training loop and by tests:
// teacher-forced L_SID on the full window plus beam-level L_rank on the
// prefix, gradients accumulated into `sink` scaled by `grad_scale`.
struct Stage2InstanceResult {
  double loss_sid = 0.0;
  double loss_rank = 0.0;
  double total() const { return loss_sid + loss_rank; }
  int positives = 0;
  bool skipped = false;
};

Stage2InstanceResult stage2_instance(const Model& model, const TrainContext& ctx, const TrainConfig& cfg,
                                     std::span<const uint32_t> window, uint32_t target_item,
                                     std::span<const uint32_t> pool_history,
                                     std::unordered_map<std::string, Tensor>* sink, double grad_scale);

// Window of at most cfg.seq_window items ending at (and including) target_pos.
std::span<const uint32_t> instance_window(const UserSequence& seq, uint32_t target_pos, int seq_window);

std::string train_log_csv(std::span<const TrainLogRow> rows);

}  // namespace sidrec
