#include "sidrec/training.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>

#include "sidrec/parallel.h"

namespace sidrec {

TrainConfig TrainConfig::paper_scale() {
  TrainConfig cfg;
  cfg.peak_lr = 1e-5;
  cfg.weight_decay = 1e-4;
  cfg.warmup_steps = 20000;
  cfg.total_steps = 120000;
  cfg.batch_size = 32;
  cfg.grad_accum = 4;
  cfg.beam_width = 20;
  cfg.retrieval_len = 10;
  cfg.seq_window = 32;
  return cfg;
}

void TrainConfig::validate() const {
  if (peak_lr <= 0.0 || weight_decay < 0.0) throw std::runtime_error("TrainConfig: bad lr/weight decay");
  if (warmup_steps < 0 || total_steps <= 0 || warmup_steps > total_steps)
    throw std::runtime_error("TrainConfig: warmup must be within total steps");
  if (batch_size < 1 || grad_accum < 1) throw std::runtime_error("TrainConfig: bad batch settings");
  if (beam_width < 1 || retrieval_len < 0 || seq_window < 2) throw std::runtime_error("TrainConfig: bad beam/window");
  if (rank_pos_weight <= 0.0) throw std::runtime_error("TrainConfig: rank_pos_weight must be positive");
}

double lr_at(int64_t step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) throw std::runtime_error("lr_at: step out of range");
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  if (step >= cfg.total_steps) return 0.0;
  const double span = static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  const double x = static_cast<double>(step - cfg.warmup_steps) / span;
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(x * 3.14159265358979323846));
}

void AdamW::step(ParamStore& params, double lr, double weight_decay) {
  t++;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (Param* p : params.all()) {
    if (!p->grad.defined()) continue;
    for (double g : p->grad.data)
      if (!std::isfinite(g)) throw std::runtime_error("AdamW: non-finite gradient in parameter " + p->name);
    if (!p->adam_m.defined()) {
      p->adam_m = Tensor::zeros(p->value.shape);
      p->adam_v = Tensor::zeros(p->value.shape);
    }
    for (size_t i = 0; i < p->value.data.size(); ++i) {
      const double g = p->grad.data[i];
      p->adam_m.data[i] = beta1 * p->adam_m.data[i] + (1.0 - beta1) * g;
      p->adam_v.data[i] = beta2 * p->adam_v.data[i] + (1.0 - beta2) * g * g;
      const double mhat = p->adam_m.data[i] / bc1;
      const double vhat = p->adam_v.data[i] / bc2;
      p->value.data[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p->value.data[i]);
    }
    p->adam_m.round_to_mode();
    p->adam_v.round_to_mode();
    p->value.round_to_mode();
  }
}

Var nll_over_targets(Graph& g, Var log_probs, std::vector<int64_t> targets) {
  return g.nll_pick(log_probs, std::move(targets));
}

Var loss_sid(const Model& model, Graph& g, const SerializedSequence& seq) {
  std::vector<int64_t> predict_rows;
  std::vector<int64_t> targets;
  for (size_t i = 0; i < seq.target_mask.size(); ++i) {
    if (!seq.target_mask[i]) continue;
    predict_rows.push_back(static_cast<int64_t>(i));
    targets.push_back(seq.tokens[i + 1]);
  }
  if (targets.empty()) throw std::runtime_error("loss_sid: sequence has no supervised SID targets");
  Var hidden = model.forward(g, seq.tokens);
  Var picked = g.pick_rows(hidden, std::move(predict_rows));
  Var logp = g.log_softmax_rows(model.sid_logits(g, picked));
  return nll_over_targets(g, logp, std::move(targets));
}

std::vector<double> make_beam_labels(const std::vector<Candidate>& candidates, const SemanticId& truth) {
  std::vector<double> labels(candidates.size(), 0.0);
  for (size_t i = 0; i < candidates.size(); ++i)
    if (candidates[i].sid == truth) labels[i] = 1.0;
  return labels;
}

double loss_rank_value(std::span<const double> yhats, std::span<const double> labels) {
  if (yhats.size() != labels.size())
    throw std::runtime_error("loss_rank: " + std::to_string(yhats.size()) + " predictions vs " +
                             std::to_string(labels.size()) + " labels");
  double loss = 0.0;
  for (size_t i = 0; i < yhats.size(); ++i) {
    loss -= labels[i] * std::log(std::max(yhats[i], 1e-12)) +
            (1.0 - labels[i]) * std::log(std::max(1.0 - yhats[i], 1e-12));
  }
  return loss;
}

std::span<const uint32_t> instance_window(const UserSequence& seq, uint32_t target_pos, int seq_window) {
  if (target_pos >= seq.events.size()) throw std::runtime_error("instance_window: target position out of range");
  const uint32_t count = std::min<uint32_t>(target_pos + 1, static_cast<uint32_t>(seq_window));
  return std::span<const uint32_t>(seq.events.data() + target_pos + 1 - count, count);
}

namespace {

void merge_grads(ParamStore& params, const std::unordered_map<std::string, Tensor>& sink) {
  for (Param* p : params.all()) {
    auto it = sink.find(p->name);
    if (it == sink.end()) continue;
    if (!p->grad.defined()) p->grad = Tensor::zeros(p->value.shape);
    for (size_t i = 0; i < p->grad.data.size(); ++i) p->grad.data[i] += it->second.data[i];
    p->grad.round_to_mode();
  }
}

}  // namespace

std::vector<TrainLogRow> train_stage1(Model& model, const TrainContext& ctx, const TrainConfig& cfg,
                                      const ProgressFn& progress) {
  cfg.validate();
  if (ctx.split->train.empty()) throw std::runtime_error("train_stage1: empty train split");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<size_t> pick(0, ctx.split->train.size() - 1);
  AdamW opt;
  std::vector<TrainLogRow> log;
  const int64_t ctx_window = model.config().context_window;

  for (int64_t step = 0; step < cfg.total_steps; ++step) {
    const double lr = lr_at(step + 1, cfg);
    const double scale = 1.0 / static_cast<double>(cfg.batch_size * cfg.grad_accum);
    model.params().zero_grad();
    double loss_sum = 0.0;
    for (int acc = 0; acc < cfg.grad_accum; ++acc) {
      std::vector<InstanceRef> batch(static_cast<size_t>(cfg.batch_size));
      for (auto& inst : batch) inst = ctx.split->train[pick(rng)];
      std::vector<std::unordered_map<std::string, Tensor>> sinks(batch.size());
      std::vector<double> losses(batch.size(), 0.0);
      parallel_for(batch.size(), cfg.threads, [&](size_t i) {
        const UserSequence& seq = (*ctx.corpus).sequences[batch[i].user_index];
        const auto window = instance_window(seq, batch[i].target_pos, cfg.seq_window);
        const SerializedSequence ser = serialize_history(window, *ctx.index, ctx.vocab, ctx_window);
        Graph g;
        Var loss = loss_sid(model, g, ser);
        losses[i] = g.value(loss).item();
        g.backward(g.scale(loss, scale), sinks[i]);
      });
      for (size_t i = 0; i < batch.size(); ++i) {
        merge_grads(model.params(), sinks[i]);
        loss_sum += losses[i];
      }
    }
    opt.step(model.params(), lr, cfg.weight_decay);
    TrainLogRow row{step, loss_sum / static_cast<double>(cfg.batch_size * cfg.grad_accum), 0.0, lr};
    log.push_back(row);
    if (progress) progress(row);
  }
  return log;
}

Stage2InstanceResult stage2_instance(const Model& model, const TrainContext& ctx, const TrainConfig& cfg,
                                     std::span<const uint32_t> window, uint32_t target_item,
                                     std::span<const uint32_t> pool_history,
                                     std::unordered_map<std::string, Tensor>* sink, double grad_scale) {
  Stage2InstanceResult res;
  const int64_t ctx_window = model.config().context_window;
  const SerializedSequence full = serialize_history(window, *ctx.index, ctx.vocab, ctx_window);

  // (a) teacher-forced SID loss over the whole window
  Graph g1(sink != nullptr);
  Var sid = loss_sid(model, g1, full);
  res.loss_sid = g1.value(sid).item();
  if (sink) g1.backward(g1.scale(sid, grad_scale), *sink);

  // (b) beam candidates from the history prefix (no gradients)
  std::vector<int64_t> prefix(full.tokens.begin(), full.tokens.end() - kBlockLen);
  prefix.push_back(ctx.vocab.bos());
  PrefixState ps = encode_prefix(model, prefix);
  std::vector<Candidate> candidates = beam_search(model, ps, *ctx.index, cfg.beam_width);
  if (candidates.empty()) {
    res.skipped = true;
    return res;
  }

  // (c)+(d) candidate-aware rerank with gradients through the suffix passes
  const SemanticId truth = ctx.index->sid_of(target_item);
  const std::vector<double> labels = make_beam_labels(candidates, truth);
  RetrievalPool pool = make_pool(ctx.corpus->catalog, pool_history, cfg.max_history);
  Graph g2(sink != nullptr);
  Var rank_total;
  std::vector<double> yhats(candidates.size());
  for (size_t c = 0; c < candidates.size(); ++c) {
    candidates[c].retrieved = gsu_retrieve(ctx.corpus->catalog.emb(candidates[c].item), pool, cfg.retrieval_len);
    Var yhat = rerank_candidate_grad(model, g2, candidates[c], candidates[c].retrieved, ctx.vocab,
                                     cfg.rank_head_only);
    yhats[c] = g2.value(yhat).item();
    Var bce = g2.bce_sum(yhat, {labels[c]});
    if (labels[c] == 1.0) {
      res.positives++;
      if (cfg.rank_pos_weight != 1.0) bce = g2.scale(bce, cfg.rank_pos_weight);
    }
    rank_total = rank_total.valid() ? g2.add(rank_total, bce) : bce;
  }
  res.loss_rank = loss_rank_value(yhats, labels);
  if (sink) g2.backward(g2.scale(rank_total, grad_scale), *sink);
  return res;
}

std::vector<TrainLogRow> train_stage2(Model& model, const TrainContext& ctx, const TrainConfig& cfg,
                                      const ProgressFn& progress, Stage2Diagnostics* diag) {
  cfg.validate();
  if (ctx.split->train.empty()) throw std::runtime_error("train_stage2: empty train split");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<size_t> pick(0, ctx.split->train.size() - 1);
  AdamW opt;
  std::vector<TrainLogRow> log;
  Stage2Diagnostics local;
  Stage2Diagnostics& dg = diag ? *diag : local;

  for (int64_t step = 0; step < cfg.total_steps; ++step) {
    const double lr = lr_at(step + 1, cfg);
    const double scale = 1.0 / static_cast<double>(cfg.batch_size * cfg.grad_accum);
    model.params().zero_grad();
    double sid_sum = 0.0, rank_sum = 0.0;
    for (int acc = 0; acc < cfg.grad_accum; ++acc) {
      std::vector<InstanceRef> batch(static_cast<size_t>(cfg.batch_size));
      for (auto& inst : batch) inst = ctx.split->train[pick(rng)];
      std::vector<std::unordered_map<std::string, Tensor>> sinks(batch.size());
      std::vector<Stage2InstanceResult> results(batch.size());
      parallel_for(batch.size(), cfg.threads, [&](size_t i) {
        const UserSequence& seq = (*ctx.corpus).sequences[batch[i].user_index];
        const uint32_t pos = batch[i].target_pos;
        const auto window = instance_window(seq, pos, cfg.seq_window);
        const std::span<const uint32_t> pool_hist(seq.events.data(), pos);
        results[i] = stage2_instance(model, ctx, cfg, window, seq.events[pos], pool_hist, &sinks[i], scale);
      });
      for (size_t i = 0; i < batch.size(); ++i) {
        dg.instances++;
        if (results[i].skipped) {
          dg.skipped_instances++;
          continue;
        }
        dg.positive_labels += static_cast<uint64_t>(results[i].positives);
        merge_grads(model.params(), sinks[i]);
        sid_sum += results[i].loss_sid;
        rank_sum += results[i].loss_rank;
      }
    }
    opt.step(model.params(), lr, cfg.weight_decay);
    const double denom = static_cast<double>(cfg.batch_size * cfg.grad_accum);
    TrainLogRow row{step, sid_sum / denom, rank_sum / denom, lr};
    log.push_back(row);
    if (progress) progress(row);
  }
  return log;
}

std::string train_log_csv(std::span<const TrainLogRow> rows) {
  std::string out = "step,loss_sid,loss_rank,lr\n";
  char buf[128];
  for (const TrainLogRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.6f,%.8f\n", static_cast<long long>(r.step), r.loss_sid, r.loss_rank,
                  r.lr);
    out += buf;
  }
  return out;
}

}  // namespace sidrec
