#include "sidrec/model.h"

#include <cmath>
#include <random>
#include <stdexcept>

#include "sidrec/bin_io.h"

namespace sidrec {

void ModelConfig::validate() const {
  if (layers < 1) throw std::runtime_error("ModelConfig: layers must be >= 1");
  if (d_model < 1 || heads < 1 || ffn < 1) throw std::runtime_error("ModelConfig: bad dimensions");
  if (d_model % heads != 0)
    throw std::runtime_error("ModelConfig: d_model " + std::to_string(d_model) + " not divisible by heads " +
                             std::to_string(heads));
  if (context_window < kBlockLen) throw std::runtime_error("ModelConfig: context window too small");
  if (dropout < 0.0 || dropout >= 1.0) throw std::runtime_error("ModelConfig: dropout must be in [0,1)");
  if (vocab.k == 0 || vocab.n_items == 0) throw std::runtime_error("ModelConfig: vocab not set");
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  init_params();
}

void Model::init_params() {
  std::mt19937_64 rng(cfg_.seed);
  std::normal_distribution<double> gauss(0.0, 0.02);
  const Dtype mode = default_dtype();
  auto randn = [&](std::vector<int64_t> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = mode_round(gauss(rng), mode);
    return t;
  };
  const int64_t d = cfg_.d_model, f = cfg_.ffn, v = cfg_.vocab_size();

  params_.add("tok_emb", randn({v, d}));
  params_.add("pos_emb", randn({cfg_.context_window, d}));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    params_.add(p + "ln1.g", Tensor::full({d}, 1.0));
    params_.add(p + "ln1.b", Tensor::zeros({d}));
    params_.add(p + "attn.wq", randn({d, d}));
    params_.add(p + "attn.bq", Tensor::zeros({d}));
    params_.add(p + "attn.wk", randn({d, d}));
    params_.add(p + "attn.bk", Tensor::zeros({d}));
    params_.add(p + "attn.wv", randn({d, d}));
    params_.add(p + "attn.bv", Tensor::zeros({d}));
    params_.add(p + "attn.wo", randn({d, d}));
    params_.add(p + "attn.bo", Tensor::zeros({d}));
    params_.add(p + "ln2.g", Tensor::full({d}, 1.0));
    params_.add(p + "ln2.b", Tensor::zeros({d}));
    params_.add(p + "ffn.w1", randn({d, f}));
    params_.add(p + "ffn.b1", Tensor::zeros({f}));
    params_.add(p + "ffn.w2", randn({f, d}));
    params_.add(p + "ffn.b2", Tensor::zeros({d}));
  }
  params_.add("lnf.g", Tensor::full({d}, 1.0));
  params_.add("lnf.b", Tensor::zeros({d}));
  params_.add("sid_head.w", randn({d, v}));
  params_.add("sid_head.b", Tensor::zeros({v}));
  params_.add("rank_head.w", randn({d, 1}));
  params_.add("rank_head.b", Tensor::zeros({1}));
}

DecodeState Model::new_state() const {
  DecodeState s;
  s.k_cache.assign(static_cast<size_t>(cfg_.layers), Tensor::zeros({0, cfg_.d_model}));
  s.v_cache.assign(static_cast<size_t>(cfg_.layers), Tensor::zeros({0, cfg_.d_model}));
  return s;
}

Var Model::forward(Graph& g, std::span<const int64_t> tokens, DecodeState* state, bool train_mode,
                   uint64_t dropout_seed, bool trunk_as_const) const {
  if (tokens.empty()) throw std::runtime_error("forward: empty token sequence");
  const int64_t t = static_cast<int64_t>(tokens.size());
  const int64_t consumed = state ? state->count : 0;
  if (consumed + t > cfg_.context_window)
    throw std::runtime_error("forward: sequence of " + std::to_string(consumed + t) +
                             " tokens overflows context window " + std::to_string(cfg_.context_window));
  for (int64_t tok : tokens)
    if (tok < 0 || tok >= cfg_.vocab_size()) throw std::runtime_error("forward: token id out of vocab range");
  if (state && static_cast<int>(state->k_cache.size()) != cfg_.layers)
    throw std::runtime_error("forward: decode state layer count mismatch");

  auto& ps = const_cast<ParamStore&>(params_);
  auto weight = [&](const std::string& name) -> Var {
    Param& p = ps.at(name);
    return trunk_as_const ? g.constant(p.value) : g.param(p);
  };

  std::vector<int64_t> ids(tokens.begin(), tokens.end());
  std::vector<int64_t> positions(static_cast<size_t>(t));
  for (int64_t i = 0; i < t; ++i) positions[static_cast<size_t>(i)] = consumed + i;

  Var x = g.add(g.embedding(weight("tok_emb"), ids), g.embedding(weight("pos_emb"), positions));
  const double rate = train_mode ? cfg_.dropout : 0.0;
  uint64_t drop_salt = 0;
  auto maybe_dropout = [&](Var h) {
    if (rate == 0.0) return h;
    return g.dropout(h, rate, dropout_seed ^ (0x9e3779b97f4a7c15ULL * ++drop_salt));
  };
  x = maybe_dropout(x);

  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    Var h = g.layer_norm(x, weight(p + "ln1.g"), weight(p + "ln1.b"));
    Var q = g.linear(h, weight(p + "attn.wq"), weight(p + "attn.bq"));
    Var k = g.linear(h, weight(p + "attn.wk"), weight(p + "attn.bk"));
    Var v = g.linear(h, weight(p + "attn.wv"), weight(p + "attn.bv"));
    Var k_all = k, v_all = v;
    if (consumed > 0) {
      k_all = g.concat_rows(g.constant(state->k_cache[static_cast<size_t>(l)]), k);
      v_all = g.concat_rows(g.constant(state->v_cache[static_cast<size_t>(l)]), v);
    }
    Var attn = g.causal_attention(q, k_all, v_all, cfg_.heads, consumed);
    Var proj = g.linear(attn, weight(p + "attn.wo"), weight(p + "attn.bo"));
    x = g.add(x, maybe_dropout(proj));
    Var h2 = g.layer_norm(x, weight(p + "ln2.g"), weight(p + "ln2.b"));
    Var inner = g.gelu(g.linear(h2, weight(p + "ffn.w1"), weight(p + "ffn.b1")));
    Var outer = g.linear(inner, weight(p + "ffn.w2"), weight(p + "ffn.b2"));
    x = g.add(x, maybe_dropout(outer));
    if (state) {
      state->k_cache[static_cast<size_t>(l)] = concat_rows(state->k_cache[static_cast<size_t>(l)], g.value(k));
      state->v_cache[static_cast<size_t>(l)] = concat_rows(state->v_cache[static_cast<size_t>(l)], g.value(v));
    }
  }
  if (state) state->count += t;
  return g.layer_norm(x, weight("lnf.g"), weight("lnf.b"));
}

Model::FullForward Model::forward_full(std::span<const int64_t> tokens) const {
  Graph g(false);
  Var hidden = forward(g, tokens);
  Var logp = g.log_softmax_rows(sid_logits(g, hidden));
  FullForward out;
  out.hidden = g.value(hidden);
  out.sid_log_probs = g.value(logp);
  return out;
}

Tensor Model::forward_incremental(DecodeState& state, std::span<const int64_t> tokens) const {
  if (tokens.empty()) return Tensor::zeros({0, cfg_.d_model});
  Graph g(false);
  Var hidden = forward(g, tokens, &state);
  return g.value(hidden);
}

Var Model::sid_logits(Graph& g, Var hidden, bool head_as_const) const {
  auto& ps = const_cast<ParamStore&>(params_);
  Param& w = ps.at("sid_head.w");
  Param& b = ps.at("sid_head.b");
  if (head_as_const) return g.linear(hidden, g.constant(w.value), g.constant(b.value));
  return g.linear(hidden, g.param(w), g.param(b));
}

Tensor Model::sid_level_log_probs(const Tensor& hidden_row, int level) const {
  const Vocab& v = cfg_.vocab;
  const int64_t begin = v.sid_begin(level), n = v.sid_size(level);
  const Tensor& w = params_.at("sid_head.w").value;
  const Tensor& b = params_.at("sid_head.b").value;
  const int64_t d = cfg_.d_model;
  if (hidden_row.numel() != d) throw_shape_error("sid_level_log_probs", hidden_row);
  Tensor logits = Tensor::zeros({1, n});
  const Dtype mode = default_dtype();
  for (int64_t j = 0; j < n; ++j) {
    double acc = b.at(begin + j);
    for (int64_t c = 0; c < d; ++c) acc += hidden_row.at(c) * w.at(c, begin + j);
    logits.at(0, j) = mode_round(acc, mode);
  }
  return log_softmax_rows(logits);
}

Var Model::rank_logits(Graph& g, Var hidden_rows) const {
  auto& ps = const_cast<ParamStore&>(params_);
  return g.linear(hidden_rows, g.param(ps.at("rank_head.w")), g.param(ps.at("rank_head.b")));
}

double Model::rank_probability(const Tensor& hidden_row) const {
  const Tensor& w = params_.at("rank_head.w").value;
  const Tensor& b = params_.at("rank_head.b").value;
  if (hidden_row.numel() != cfg_.d_model) throw_shape_error("rank_probability", hidden_row);
  double z = b.at(0);
  for (int64_t c = 0; c < cfg_.d_model; ++c) z += hidden_row.at(c) * w.at(c, 0);
  z = mode_round(z, default_dtype());
  return sigmoid(Tensor::scalar(z)).item();
}

// ---- checkpoint ----------------------------------------------------------

namespace {
constexpr uint32_t kCheckpointVersion = 1;
}

void Model::save(const std::string& path) const {
  BinWriter w(path);
  w.magic("RCKP");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<uint32_t>(cfg_.layers));
  w.u32(static_cast<uint32_t>(cfg_.d_model));
  w.u32(static_cast<uint32_t>(cfg_.heads));
  w.u32(static_cast<uint32_t>(cfg_.ffn));
  w.u64(static_cast<uint64_t>(cfg_.context_window));
  w.f32(static_cast<float>(cfg_.dropout));
  w.u64(cfg_.seed);
  w.u32(cfg_.vocab.k);
  w.u32(cfg_.vocab.s4_max);
  w.u32(cfg_.vocab.n_items);
  const auto all = params_.all();
  w.u32(static_cast<uint32_t>(all.size()));
  for (const Param* p : all) {
    w.str(p->name);
    w.u32(static_cast<uint32_t>(p->value.rank()));
    for (int64_t dm : p->value.shape) w.u64(static_cast<uint64_t>(dm));
    for (double v : p->value.data) w.f32(static_cast<float>(v));
  }
  w.close();
}

Model Model::load(const std::string& path) {
  BinReader r(path);
  r.magic("RCKP");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("version " + std::to_string(version));
  ModelConfig cfg;
  cfg.layers = static_cast<int>(r.u32());
  cfg.d_model = static_cast<int>(r.u32());
  cfg.heads = static_cast<int>(r.u32());
  cfg.ffn = static_cast<int>(r.u32());
  cfg.context_window = static_cast<int64_t>(r.u64());
  cfg.dropout = static_cast<double>(r.f32());
  cfg.seed = r.u64();
  cfg.vocab.k = r.u32();
  cfg.vocab.s4_max = r.u32();
  cfg.vocab.n_items = r.u32();
  Model model(cfg);
  const uint32_t count = r.u32();
  if (count != model.params_.all().size()) r.fail("parameter count " + std::to_string(count));
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    if (!model.params_.contains(name)) r.fail("unknown parameter " + name);
    Param& p = model.params_.at(name);
    const uint32_t rank = r.u32();
    std::vector<int64_t> shape(rank);
    for (uint32_t dj = 0; dj < rank; ++dj) shape[dj] = static_cast<int64_t>(r.u64());
    if (shape != p.value.shape) r.fail("parameter shape for " + name);
    for (double& v : p.value.data) v = static_cast<double>(r.f32());
  }
  return model;
}

}  // namespace sidrec
