#include "sidrec/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "sidrec/parallel.h"
#include "sidrec/vocab.h"

namespace sidrec {

double recall_at_k(std::span<const uint32_t> ranked, uint32_t truth, int k) {
  if (k < 1) throw std::runtime_error("recall_at_k: k must be >= 1");
  const size_t top = std::min<size_t>(static_cast<size_t>(k), ranked.size());
  for (size_t i = 0; i < top; ++i)
    if (ranked[i] == truth) return 1.0;
  return 0.0;
}

double ndcg_at_k(std::span<const uint32_t> ranked, uint32_t truth, int k) {
  if (k < 1) throw std::runtime_error("ndcg_at_k: k must be >= 1");
  const size_t top = std::min<size_t>(static_cast<size_t>(k), ranked.size());
  for (size_t i = 0; i < top; ++i)
    if (ranked[i] == truth) return 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return 0.0;
}

namespace {

struct InstanceOutcome {
  MetricRow base, rank;
  bool beam_hit = false;
  bool skipped = false;
};

MetricRow metrics_of(std::span<const uint32_t> ranked, uint32_t truth) {
  MetricRow m;
  m.recall1 = recall_at_k(ranked, truth, 1);
  m.recall5 = recall_at_k(ranked, truth, 5);
  m.recall10 = recall_at_k(ranked, truth, 10);
  m.ndcg5 = ndcg_at_k(ranked, truth, 5);
  m.ndcg10 = ndcg_at_k(ranked, truth, 10);
  return m;
}

// Produces candidates with gen/base ordering plus yhat+combined filled per mode.
std::vector<Candidate> score_candidates(const Model& model, const Corpus& corpus, const SidIndex& index,
                                        std::span<const uint32_t> history, const EvalOptions& opts,
                                        const SemanticId* truth) {
  const Vocab& vocab = model.config().vocab;
  const uint32_t window = std::min<uint32_t>(static_cast<uint32_t>(history.size()), static_cast<uint32_t>(opts.seq_window));
  const std::span<const uint32_t> recent = history.subspan(history.size() - window, window);
  SerializedSequence ser = serialize_history(recent, index, vocab, model.config().context_window);
  std::vector<int64_t> prefix = std::move(ser.tokens);
  prefix.push_back(vocab.bos());
  PrefixState ps = encode_prefix(model, prefix);
  std::vector<Candidate> candidates = beam_search(model, ps, index, opts.beam_width);

  RetrievalPool pool = make_pool(corpus.catalog, history, opts.max_history);
  double min_gen = 1e300, max_gen = -1e300;
  for (const Candidate& c : candidates) {
    min_gen = std::min(min_gen, c.gen_logprob);
    max_gen = std::max(max_gen, c.gen_logprob);
  }
  for (Candidate& c : candidates) {
    c.retrieved = gsu_retrieve(corpus.catalog.emb(c.item), pool, opts.retrieval_len);
    switch (opts.yhat_mode) {
      case YhatMode::Model:
        c.yhat = rerank_candidate(model, c, c.retrieved, vocab);
        c.log_yhat = std::log(std::max(c.yhat, 1e-12));
        c.combined = combined_score(c.gen_logprob, c.yhat);
        break;
      case YhatMode::Constant:
        c.yhat = 0.5;
        c.log_yhat = std::log(0.5);
        c.combined = combined_score(c.gen_logprob, c.yhat);
        break;
      case YhatMode::Oracle: {
        // truth dominates: ln(eps) strictly below min_gen - max_gen
        const double log_eps = (min_gen - max_gen) - 1.0;
        if (truth && c.sid == *truth) {
          c.yhat = 1.0;
          c.log_yhat = 0.0;
        } else {
          c.yhat = std::exp(log_eps);
          c.log_yhat = log_eps;
        }
        c.combined = c.gen_logprob + c.log_yhat;
        break;
      }
    }
    c.state = DecodeState{};  // caches are no longer needed
  }
  return candidates;
}

}  // namespace

EvalResult evaluate(const Model& model, const Corpus& corpus, std::span<const InstanceRef> instances,
                    const SidIndex& index, const EvalOptions& opts) {
  if (instances.empty()) throw std::runtime_error("evaluate: empty instance set");
  const size_t count = opts.max_instances < 0
                           ? instances.size()
                           : std::min<size_t>(instances.size(), static_cast<size_t>(opts.max_instances));
  std::vector<InstanceOutcome> outcomes(count);
  parallel_for(count, opts.threads, [&](size_t i) {
    const InstanceRef ref = instances[i];
    const UserSequence& seq = corpus.sequences[ref.user_index];
    const uint32_t pos = ref.target_pos;
    if (pos == 0 || pos >= seq.events.size()) {
      outcomes[i].skipped = true;
      return;
    }
    const uint32_t truth = seq.events[pos];
    const SemanticId truth_sid = index.sid_of(truth);
    const std::span<const uint32_t> history(seq.events.data(), pos);
    std::vector<Candidate> cands = score_candidates(model, corpus, index, history, opts, &truth_sid);

    std::vector<uint32_t> base_items;
    base_items.reserve(cands.size());
    for (const Candidate& c : cands) {
      base_items.push_back(c.item);
      if (c.sid == truth_sid) outcomes[i].beam_hit = true;
    }
    sort_by_combined(cands);
    std::vector<uint32_t> rank_items;
    rank_items.reserve(cands.size());
    for (const Candidate& c : cands) rank_items.push_back(c.item);

    outcomes[i].base = metrics_of(base_items, truth);
    outcomes[i].rank = metrics_of(rank_items, truth);
  });

  EvalResult res;
  auto add = [](MetricRow& acc, const MetricRow& m) {
    acc.recall1 += m.recall1;
    acc.recall5 += m.recall5;
    acc.recall10 += m.recall10;
    acc.ndcg5 += m.ndcg5;
    acc.ndcg10 += m.ndcg10;
  };
  uint64_t hits = 0;
  for (const InstanceOutcome& o : outcomes) {
    if (o.skipped) {
      res.skipped++;
      continue;
    }
    res.instances++;
    add(res.base, o.base);
    add(res.rank, o.rank);
    if (o.beam_hit) hits++;
  }
  if (res.instances > 0) {
    const double inv = 1.0 / static_cast<double>(res.instances);
    for (MetricRow* m : {&res.base, &res.rank}) {
      m->recall1 *= inv;
      m->recall5 *= inv;
      m->recall10 *= inv;
      m->ndcg5 *= inv;
      m->ndcg10 *= inv;
    }
    res.beam_hit_rate = static_cast<double>(hits) * inv;
  }
  return res;
}

std::vector<InferRow> infer_user(const Model& model, const Corpus& corpus, const SidIndex& index,
                                 std::span<const uint32_t> history, const EvalOptions& opts) {
  if (history.empty()) throw std::runtime_error("infer_user: empty history");
  std::vector<Candidate> cands = score_candidates(model, corpus, index, history, opts, nullptr);
  std::vector<InferRow> rows(cands.size());
  for (size_t i = 0; i < cands.size(); ++i) {
    rows[i].sid = cands[i].sid;
    rows[i].item = cands[i].item;
    rows[i].gen_logprob = cands[i].gen_logprob;
    rows[i].yhat = cands[i].yhat;
    rows[i].combined = cands[i].combined;
    rows[i].base_rank = static_cast<int>(i) + 1;
  }
  // rerank order for the rerank_rank column, rows themselves sorted by combined
  std::vector<size_t> order(rows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (rows[a].combined != rows[b].combined) return rows[a].combined > rows[b].combined;
    if (rows[a].gen_logprob != rows[b].gen_logprob) return rows[a].gen_logprob > rows[b].gen_logprob;
    return rows[a].sid < rows[b].sid;
  });
  std::vector<InferRow> out;
  out.reserve(rows.size());
  for (size_t r = 0; r < order.size(); ++r) {
    InferRow row = rows[order[r]];
    row.rerank_rank = static_cast<int>(r) + 1;
    out.push_back(row);
  }
  return out;
}

std::string infer_csv(std::span<const InferRow> rows, const Corpus& corpus) {
  std::string out = "sid,item,gen_logprob,yhat,combined_score,base_rank,rerank_rank\n";
  char buf[256];
  for (const InferRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%u-%u-%u-%u,%llu,%.6f,%.6f,%.6f,%d,%d\n", r.sid.s1, r.sid.s2, r.sid.s3, r.sid.s4,
                  static_cast<unsigned long long>(corpus.catalog.external_ids[r.item]), r.gen_logprob, r.yhat,
                  r.combined, r.base_rank, r.rerank_rank);
    out += buf;
  }
  return out;
}

const char* axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::Beam: return "beam";
    case AblationAxis::SeqLen: return "seq_len";
    case AblationAxis::RetrievalLen: return "retrieval_len";
  }
  return "?";
}

AblationGrid run_ablation(const Model& model, const Corpus& corpus, std::span<const InstanceRef> instances,
                          const SidIndex& index, const EvalOptions& base_opts, AblationAxis axis,
                          std::span<const int> values) {
  AblationGrid grid;
  grid.axis = axis;
  for (int v : values) {
    EvalOptions opts = base_opts;
    switch (axis) {
      case AblationAxis::Beam: opts.beam_width = v; break;
      case AblationAxis::SeqLen: opts.seq_window = v; break;
      case AblationAxis::RetrievalLen: opts.retrieval_len = v; break;
    }
    grid.cells.push_back({v, evaluate(model, corpus, instances, index, opts)});
  }
  return grid;
}

namespace {

double rel_gain_pct(double base, double rank) { return base > 0.0 ? (rank - base) / base * 100.0 : 0.0; }

struct MetricAccess {
  const char* name;
  double MetricRow::*field;
};

constexpr MetricAccess kMetrics[] = {
    {"recall@5", &MetricRow::recall5},
    {"recall@10", &MetricRow::recall10},
    {"ndcg@5", &MetricRow::ndcg5},
    {"ndcg@10", &MetricRow::ndcg10},
};

}  // namespace

std::string ablation_csv(const AblationGrid& grid) {
  std::string out = "axis_value,metric,base,rank,rel_gain_pct\n";
  char buf[160];
  for (const AblationCell& cell : grid.cells) {
    for (const MetricAccess& m : kMetrics) {
      const double b = cell.result.base.*(m.field);
      const double r = cell.result.rank.*(m.field);
      std::snprintf(buf, sizeof(buf), "%d,%s,%.6f,%.6f,%.2f\n", cell.axis_value, m.name, b, r, rel_gain_pct(b, r));
      out += buf;
    }
  }
  return out;
}

std::string ablation_table(const AblationGrid& grid) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-14s", axis_name(grid.axis));
  os << buf;
  for (const MetricAccess& m : kMetrics) {
    std::snprintf(buf, sizeof(buf), " | %-26s", m.name);
    os << buf;
  }
  os << "\n";
  std::snprintf(buf, sizeof(buf), "%-14s", "");
  os << buf;
  for (size_t i = 0; i < 4; ++i) {
    std::snprintf(buf, sizeof(buf), " | %-8s %-17s", "Base", "Rank");
    os << buf;
  }
  os << "\n";
  for (const AblationCell& cell : grid.cells) {
    std::snprintf(buf, sizeof(buf), "%-14d", cell.axis_value);
    os << buf;
    for (const MetricAccess& m : kMetrics) {
      const double b = cell.result.base.*(m.field);
      const double r = cell.result.rank.*(m.field);
      std::snprintf(buf, sizeof(buf), " | %.4f   %.4f (%+.2f%%)  ", b, r, rel_gain_pct(b, r));
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

std::string eval_csv(const EvalResult& result) {
  std::string out = "metric,base,rank,rel_gain_pct\n";
  char buf[128];
  for (const MetricAccess& m : kMetrics) {
    const double b = result.base.*(m.field);
    const double r = result.rank.*(m.field);
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.2f\n", m.name, b, r, rel_gain_pct(b, r));
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "instances,%llu,%llu,\n", static_cast<unsigned long long>(result.instances),
                static_cast<unsigned long long>(result.instances));
  out += buf;
  std::snprintf(buf, sizeof(buf), "beam_hit_rate,%.6f,%.6f,\n", result.beam_hit_rate, result.beam_hit_rate);
  out += buf;
  return out;
}

}  // namespace sidrec
