#include "sidrec/graph.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace sidrec {

const Tensor& Var::value() const { return g->value(*this); }

// ---- ParamStore ----------------------------------------------------------

Param& ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::runtime_error("ParamStore: duplicate parameter " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = std::move(init);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Param& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::runtime_error("ParamStore: unknown parameter " + name);
  return *params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::runtime_error("ParamStore: unknown parameter " + name);
  return *params_[it->second];
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) > 0; }

std::vector<Param*> ParamStore::all() {
  std::vector<Param*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Param*> ParamStore::all() const {
  std::vector<const Param*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (auto& p : params_) n += p->value.numel();
  return n;
}

// ---- Graph ---------------------------------------------------------------

Var Graph::emit(Tensor value, std::function<void(Graph&, int)> back) {
  Node n;
  n.value = std::move(value);
  if (recording_) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::constant(Tensor t) { return emit(std::move(t), {}); }

Var Graph::param(Param& p) {
  Node n;
  n.value = p.value;
  n.bound_param = recording_ ? &p : nullptr;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::accum_grad(int id, const Tensor& g) {
  Tensor& slot = grads_[static_cast<size_t>(id)];
  if (!slot.defined()) slot = Tensor::zeros(nodes_[static_cast<size_t>(id)].value.shape);
  if (!slot.same_shape(g)) throw_shape_error("accum_grad", slot, g);
  for (size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += g.data[i];
  slot.round_to_mode();
}

Var Graph::matmul(Var a, Var b) {
  Tensor out = sidrec::matmul(a.value(), b.value());
  const int ia = a.id, ib = b.id;
  return emit(std::move(out), [ia, ib](Graph& g, int self) {
    const Tensor& dy = g.grad_slot(self);
    const Tensor& av = g.nodes_[static_cast<size_t>(ia)].value;
    const Tensor& bv = g.nodes_[static_cast<size_t>(ib)].value;
    g.accum_grad(ia, sidrec::matmul(dy, transpose2d(bv)));
    g.accum_grad(ib, sidrec::matmul(transpose2d(av), dy));
  });
}

Var Graph::linear(Var x, Var w, Var b) {
  Tensor out = add_bias_rows(sidrec::matmul(x.value(), w.value()), b.value());
  const int ix = x.id, iw = w.id, ib = b.id;
  return emit(std::move(out), [ix, iw, ib](Graph& g, int self) {
    const Tensor& dy = g.grad_slot(self);
    const Tensor& xv = g.nodes_[static_cast<size_t>(ix)].value;
    const Tensor& wv = g.nodes_[static_cast<size_t>(iw)].value;
    g.accum_grad(ix, sidrec::matmul(dy, transpose2d(wv)));
    g.accum_grad(iw, sidrec::matmul(transpose2d(xv), dy));
    Tensor db = Tensor::zeros({dy.shape[1]});
    for (int64_t i = 0; i < dy.shape[0]; ++i)
      for (int64_t j = 0; j < dy.shape[1]; ++j) db.at(j) += dy.at(i, j);
    db.round_to_mode();
    g.accum_grad(ib, db);
  });
}

Var Graph::linear_cols(Var x, Var w, Var b, int64_t col_begin, int64_t col_end) {
  const Tensor& wt = w.value();
  if (wt.rank() != 2 || col_begin < 0 || col_end > wt.shape[1] || col_begin >= col_end)
    throw std::runtime_error("linear_cols: bad column range");
  const int64_t din = wt.shape[0], cols = col_end - col_begin;
  Tensor wsub = Tensor::zeros({din, cols});
  for (int64_t i = 0; i < din; ++i)
    for (int64_t j = 0; j < cols; ++j) wsub.at(i, j) = wt.at(i, col_begin + j);
  Tensor bsub = Tensor::zeros({cols});
  for (int64_t j = 0; j < cols; ++j) bsub.at(j) = b.value().at(col_begin + j);
  Tensor out = add_bias_rows(sidrec::matmul(x.value(), wsub), bsub);
  const int ix = x.id, iw = w.id, ib = b.id;
  return emit(std::move(out), [ix, iw, ib, col_begin, cols, wsub](Graph& g, int self) {
    const Tensor& dy = g.grad_slot(self);
    const Tensor& xv = g.nodes_[static_cast<size_t>(ix)].value;
    g.accum_grad(ix, sidrec::matmul(dy, transpose2d(wsub)));
    Tensor dwsub = sidrec::matmul(transpose2d(xv), dy);
    // scatter into the full-width parameter grads
    Tensor& wslot = g.grad_slot(iw);
    if (!wslot.defined()) wslot = Tensor::zeros(g.nodes_[static_cast<size_t>(iw)].value.shape);
    for (int64_t i = 0; i < dwsub.shape[0]; ++i)
      for (int64_t j = 0; j < cols; ++j) wslot.at(i, col_begin + j) += dwsub.at(i, j);
    wslot.round_to_mode();
    Tensor& bslot = g.grad_slot(ib);
    if (!bslot.defined()) bslot = Tensor::zeros(g.nodes_[static_cast<size_t>(ib)].value.shape);
    for (int64_t i = 0; i < dy.shape[0]; ++i)
      for (int64_t j = 0; j < cols; ++j) bslot.at(col_begin + j) += dy.at(i, j);
    bslot.round_to_mode();
  });
}

Var Graph::add(Var a, Var b) {
  Tensor out = sidrec::add(a.value(), b.value());
  const int ia = a.id, ib = b.id;
  return emit(std::move(out), [ia, ib](Graph& g, int self) {
    g.accum_grad(ia, g.grad_slot(self));
    g.accum_grad(ib, g.grad_slot(self));
  });
}

Var Graph::mul(Var a, Var b) {
  Tensor out = sidrec::mul(a.value(), b.value());
  const int ia = a.id, ib = b.id;
  return emit(std::move(out), [ia, ib](Graph& g, int self) {
    const Tensor& dy = g.grad_slot(self);
    g.accum_grad(ia, sidrec::mul(dy, g.nodes_[static_cast<size_t>(ib)].value));
    g.accum_grad(ib, sidrec::mul(dy, g.nodes_[static_cast<size_t>(ia)].value));
  });
}

Var Graph::scale(Var a, double c) {
  Tensor out = sidrec::scale(a.value(), c);
  const int ia = a.id;
  return emit(std::move(out), [ia, c](Graph& g, int self) { g.accum_grad(ia, sidrec::scale(g.grad_slot(self), c)); });
}

Var Graph::concat_rows(Var a, Var b) {
  Tensor out = sidrec::concat_rows(a.value(), b.value());
  const int ia = a.id, ib = b.id;
  const int64_t na = a.value().shape[0];
  return emit(std::move(out), [ia, ib, na](Graph& g, int self) {
    const Tensor& dy = g.grad_slot(self);
    const int64_t d = dy.shape[1];
    Tensor da = Tensor::zeros({na, d});
    Tensor db = Tensor::zeros({dy.shape[0] - na, d});
    std::copy(dy.data.begin(), dy.data.begin() + static_cast<size_t>(na * d), da.data.begin());
    std::copy(dy.data.begin() + static_cast<size_t>(na * d), dy.data.end(), db.data.begin());
    g.accum_grad(ia, da);
    g.accum_grad(ib, db);
  });
}

Var Graph::pick_rows(Var x, std::vector<int64_t> rows) {
  Tensor out = sidrec::pick_rows(x.value(), rows);
  const int ix = x.id;
  return emit(std::move(out), [ix, rows = std::move(rows)](Graph& g, int self) {
    const Tensor& dy = g.grad_slot(self);
    Tensor& slot = g.grad_slot(ix);
    if (!slot.defined()) slot = Tensor::zeros(g.nodes_[static_cast<size_t>(ix)].value.shape);
    const int64_t d = dy.shape[1];
    for (size_t i = 0; i < rows.size(); ++i)
      for (int64_t j = 0; j < d; ++j) slot.at(rows[i], j) += dy.at(static_cast<int64_t>(i), j);
    slot.round_to_mode();
  });
}

Var Graph::embedding(Var table, std::vector<int64_t> ids) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw_shape_error("embedding", tv);
  for (int64_t id : ids)
    if (id < 0 || id >= tv.shape[0]) throw std::runtime_error("embedding: id out of range");
  Tensor out = Tensor::zeros({static_cast<int64_t>(ids.size()), tv.shape[1]});
  const int64_t d = tv.shape[1];
  for (size_t i = 0; i < ids.size(); ++i)
    for (int64_t j = 0; j < d; ++j) out.at(static_cast<int64_t>(i), j) = tv.at(ids[i], j);
  const int it = table.id;
  return emit(std::move(out), [it, ids = std::move(ids)](Graph& g, int self) {
    const Tensor& dy = g.grad_slot(self);
    Tensor& slot = g.grad_slot(it);
    if (!slot.defined()) slot = Tensor::zeros(g.nodes_[static_cast<size_t>(it)].value.shape);
    const int64_t d = dy.shape[1];
    for (size_t i = 0; i < ids.size(); ++i)
      for (int64_t j = 0; j < d; ++j) slot.at(ids[i], j) += dy.at(static_cast<int64_t>(i), j);
    slot.round_to_mode();
  });
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw_shape_error("layer_norm", xv);
  const int64_t n = xv.shape[0], d = xv.shape[1];
  Tensor out = Tensor::zeros({n, d});
  Tensor xhat = Tensor::zeros({n, d});
  std::vector<double> rstd(static_cast<size_t>(n));
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (int64_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += xv.at(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = xv.at(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[static_cast<size_t>(i)] = rs;
    for (int64_t j = 0; j < d; ++j) {
      const double xh = (xv.at(i, j) - mean) * rs;
      xhat.at(i, j) = xh;
      out.at(i, j) = gv.at(j) * xh + bv.at(j);
    }
  }
  out.round_to_mode();
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return emit(std::move(out), [ix, ig, ib, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& g, int self) {
    const Tensor& dy = g.grad_slot(self);
    const Tensor& gv = g.nodes_[static_cast<size_t>(ig)].value;
    const int64_t n = dy.shape[0], d = dy.shape[1];
    Tensor dx = Tensor::zeros({n, d});
    Tensor dgamma = Tensor::zeros({d});
    Tensor dbeta = Tensor::zeros({d});
    for (int64_t i = 0; i < n; ++i) {
      double m1 = 0.0, m2 = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        const double dxh = dy.at(i, j) * gv.at(j);
        m1 += dxh;
        m2 += dxh * xhat.at(i, j);
        dgamma.at(j) += dy.at(i, j) * xhat.at(i, j);
        dbeta.at(j) += dy.at(i, j);
      }
      m1 /= static_cast<double>(d);
      m2 /= static_cast<double>(d);
      const double rs = rstd[static_cast<size_t>(i)];
      for (int64_t j = 0; j < d; ++j) {
        const double dxh = dy.at(i, j) * gv.at(j);
        dx.at(i, j) = rs * (dxh - m1 - xhat.at(i, j) * m2);
      }
    }
    dx.round_to_mode();
    dgamma.round_to_mode();
    dbeta.round_to_mode();
    g.accum_grad(ix, dx);
    g.accum_grad(ig, dgamma);
    g.accum_grad(ib, dbeta);
  });
}

Var Graph::gelu(Var x) {
  Tensor out = sidrec::gelu(x.value());
  const int ix = x.id;
  return emit(std::move(out), [ix](Graph& g, int self) {
    const Tensor& dy = g.grad_slot(self);
    const Tensor& xv = g.nodes_[static_cast<size_t>(ix)].value;
    Tensor dx = dy;
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    for (size_t i = 0; i < dx.data.size(); ++i) {
      const double v = xv.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      dx.data[i] *= cdf + v * pdf;
    }
    dx.round_to_mode();
    g.accum_grad(ix, dx);
  });
}

Var Graph::sigmoid(Var x) {
  Tensor out = sidrec::sigmoid(x.value());
  const int ix = x.id;
  Tensor saved = out;
  return emit(std::move(out), [ix, saved = std::move(saved)](Graph& g, int self) {
    const Tensor& dy = g.grad_slot(self);
    Tensor dx = dy;
    for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= saved.data[i] * (1.0 - saved.data[i]);
    dx.round_to_mode();
    g.accum_grad(ix, dx);
  });
}

Var Graph::softmax_rows(Var x) {
  Tensor out = sidrec::softmax_rows(x.value());
  const int ix = x.id;
  Tensor saved = out;
  return emit(std::move(out), [ix, saved = std::move(saved)](Graph& g, int self) {
    const Tensor& dy = g.grad_slot(self);
    const int64_t n = dy.shape[0], d = dy.shape[1];
    Tensor dx = Tensor::zeros({n, d});
    for (int64_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < d; ++j) s += saved.at(i, j) * dy.at(i, j);
      for (int64_t j = 0; j < d; ++j) dx.at(i, j) = saved.at(i, j) * (dy.at(i, j) - s);
    }
    dx.round_to_mode();
    g.accum_grad(ix, dx);
  });
}

Var Graph::log_softmax_rows(Var x) {
  Tensor out = sidrec::log_softmax_rows(x.value());
  const int ix = x.id;
  Tensor probs = out;
  for (double& v : probs.data) v = std::exp(v);
  probs.round_to_mode();
  return emit(std::move(out), [ix, probs = std::move(probs)](Graph& g, int self) {
    const Tensor& dy = g.grad_slot(self);
    const int64_t n = dy.shape[0], d = dy.shape[1];
    Tensor dx = Tensor::zeros({n, d});
    for (int64_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < d; ++j) s += dy.at(i, j);
      for (int64_t j = 0; j < d; ++j) dx.at(i, j) = dy.at(i, j) - probs.at(i, j) * s;
    }
    dx.round_to_mode();
    g.accum_grad(ix, dx);
  });
}

Var Graph::causal_attention(Var q, Var k, Var v, int heads, int64_t q_offset) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (qv.rank() != 2 || kv.rank() != 2 || !kv.same_shape(vv)) throw_shape_error("causal_attention", kv, vv);
  const int64_t tq = qv.shape[0], d = qv.shape[1], tkv = kv.shape[0];
  if (kv.shape[1] != d || d % heads != 0) throw_shape_error("causal_attention", qv, kv);
  if (tkv != q_offset + tq) throw std::runtime_error("causal_attention: kv length must equal q_offset + q length");
  const int64_t hd = d / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Dtype mode = default_dtype();

  Tensor out = Tensor::zeros({tq, d});
  Tensor probs = Tensor::zeros({static_cast<int64_t>(heads), tq, tkv});
  std::vector<double> scores(static_cast<size_t>(tkv));
  for (int h = 0; h < heads; ++h) {
    const int64_t hb = h * hd;
    for (int64_t i = 0; i < tq; ++i) {
      const int64_t last = q_offset + i;  // inclusive causal bound
      double mx = -1e300;
      for (int64_t j = 0; j <= last; ++j) {
        double s = 0.0;
        for (int64_t c = 0; c < hd; ++c) s += qv.at(i, hb + c) * kv.at(j, hb + c);
        s = mode_round(s * att_scale, mode);
        scores[static_cast<size_t>(j)] = s;
        mx = std::max(mx, s);
      }
      double sum = 0.0;
      for (int64_t j = 0; j <= last; ++j) {
        const double e = std::exp(scores[static_cast<size_t>(j)] - mx);
        scores[static_cast<size_t>(j)] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      double* prow = probs.data.data() + (static_cast<size_t>(h) * tq + static_cast<size_t>(i)) * tkv;
      for (int64_t j = 0; j <= last; ++j) prow[j] = mode_round(scores[static_cast<size_t>(j)] * inv, mode);
      for (int64_t c = 0; c < hd; ++c) {
        double acc = 0.0;
        for (int64_t j = 0; j <= last; ++j) acc += prow[j] * vv.at(j, hb + c);
        out.at(i, hb + c) = mode_round(acc, mode);
      }
    }
  }
  const int iq = q.id, ik = k.id, iv = v.id;
  return emit(std::move(out),
              [iq, ik, iv, heads, hd, tq, tkv, q_offset, att_scale, probs = std::move(probs)](Graph& g, int self) {
                const Tensor& dy = g.grad_slot(self);
                const Tensor& qv = g.nodes_[static_cast<size_t>(iq)].value;
                const Tensor& kv = g.nodes_[static_cast<size_t>(ik)].value;
                const Tensor& vv = g.nodes_[static_cast<size_t>(iv)].value;
                const int64_t d = qv.shape[1];
                Tensor dq = Tensor::zeros({tq, d});
                Tensor dk = Tensor::zeros({tkv, d});
                Tensor dv = Tensor::zeros({tkv, d});
                std::vector<double> dp(static_cast<size_t>(tkv));
                for (int h = 0; h < heads; ++h) {
                  const int64_t hb = h * hd;
                  for (int64_t i = 0; i < tq; ++i) {
                    const int64_t last = q_offset + i;
                    const double* prow = probs.data.data() + (static_cast<size_t>(h) * tq + static_cast<size_t>(i)) * tkv;
                    double dsum = 0.0;
                    for (int64_t j = 0; j <= last; ++j) {
                      double acc = 0.0;
                      for (int64_t c = 0; c < hd; ++c) acc += dy.at(i, hb + c) * vv.at(j, hb + c);
                      dp[static_cast<size_t>(j)] = acc;
                      dsum += prow[j] * acc;
                    }
                    for (int64_t j = 0; j <= last; ++j) {
                      const double ds = prow[j] * (dp[static_cast<size_t>(j)] - dsum) * att_scale;
                      for (int64_t c = 0; c < hd; ++c) {
                        dq.at(i, hb + c) += ds * kv.at(j, hb + c);
                        dk.at(j, hb + c) += ds * qv.at(i, hb + c);
                        dv.at(j, hb + c) += prow[j] * dy.at(i, hb + c);
                      }
                    }
                  }
                }
                dq.round_to_mode();
                dk.round_to_mode();
                dv.round_to_mode();
                g.accum_grad(iq, dq);
                g.accum_grad(ik, dk);
                g.accum_grad(iv, dv);
              });
}

Var Graph::dropout(Var x, double rate, uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw std::runtime_error("dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double keep = 1.0 - rate;
  Tensor mask = Tensor::zeros(x.value().shape);
  for (double& m : mask.data) m = uni(rng) < keep ? 1.0 / keep : 0.0;
  Tensor out = sidrec::mul(x.value(), mask);
  const int ix = x.id;
  return emit(std::move(out), [ix, mask = std::move(mask)](Graph& g, int self) {
    g.accum_grad(ix, sidrec::mul(g.grad_slot(self), mask));
  });
}

Var Graph::sum_all(Var x) {
  double s = 0.0;
  for (double v : x.value().data) s += v;
  Tensor out = Tensor::scalar(mode_round(s, default_dtype()));
  const int ix = x.id;
  return emit(std::move(out), [ix](Graph& g, int self) {
    const double d = g.grad_slot(self).item();
    Tensor dx = Tensor::full(g.nodes_[static_cast<size_t>(ix)].value.shape, d);
    g.accum_grad(ix, dx);
  });
}

Var Graph::nll_pick(Var log_probs, std::vector<int64_t> targets) {
  const Tensor& lp = log_probs.value();
  if (lp.rank() != 2 || lp.shape[0] != static_cast<int64_t>(targets.size()))
    throw std::runtime_error("nll_pick: need one target per row, got " + lp.shape_str() + " rows vs " +
                             std::to_string(targets.size()) + " targets");
  double loss = 0.0;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= lp.shape[1]) throw std::runtime_error("nll_pick: target out of range");
    loss -= lp.at(static_cast<int64_t>(i), targets[i]);
  }
  Tensor out = Tensor::scalar(mode_round(loss, default_dtype()));
  const int il = log_probs.id;
  return emit(std::move(out), [il, targets = std::move(targets)](Graph& g, int self) {
    const double d = g.grad_slot(self).item();
    Tensor& slot = g.grad_slot(il);
    if (!slot.defined()) slot = Tensor::zeros(g.nodes_[static_cast<size_t>(il)].value.shape);
    for (size_t i = 0; i < targets.size(); ++i) slot.at(static_cast<int64_t>(i), targets[i]) -= d;
    slot.round_to_mode();
  });
}

Var Graph::bce_sum(Var probs, std::vector<double> labels, double clamp) {
  const Tensor& p = probs.value();
  if (p.numel() != static_cast<int64_t>(labels.size())) throw_shape_error("bce_sum", p);
  double loss = 0.0;
  for (size_t i = 0; i < labels.size(); ++i) {
    const double y = labels[i];
    loss -= y * std::log(std::max(p.data[i], clamp)) + (1.0 - y) * std::log(std::max(1.0 - p.data[i], clamp));
  }
  Tensor out = Tensor::scalar(mode_round(loss, default_dtype()));
  const int ip = probs.id;
  return emit(std::move(out), [ip, clamp, labels = std::move(labels)](Graph& g, int self) {
    const double d = g.grad_slot(self).item();
    const Tensor& p = g.nodes_[static_cast<size_t>(ip)].value;
    Tensor dp = Tensor::zeros(p.shape);
    for (size_t i = 0; i < labels.size(); ++i) {
      const double y = labels[i];
      double grad = 0.0;
      if (p.data[i] > clamp) grad -= y / p.data[i];
      if (1.0 - p.data[i] > clamp) grad += (1.0 - y) / (1.0 - p.data[i]);
      dp.data[i] = grad * d;
    }
    dp.round_to_mode();
    g.accum_grad(ip, dp);
  });
}

void Graph::backward(Var loss) { backward_impl(loss, nullptr); }

void Graph::backward(Var loss, std::unordered_map<std::string, Tensor>& sink) { backward_impl(loss, &sink); }

void Graph::backward_impl(Var loss, std::unordered_map<std::string, Tensor>* sink) {
  if (!recording_) throw std::runtime_error("backward: graph was not recording");
  if (loss.g != this || loss.id < 0) throw std::runtime_error("backward: loss is not a node of this graph");
  if (value(loss).numel() != 1) throw std::runtime_error("backward: loss must be scalar, got " + value(loss).shape_str());
  grads_.assign(nodes_.size(), Tensor());
  grads_[static_cast<size_t>(loss.id)] = Tensor::scalar(1.0);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    const Tensor& g = grads_[static_cast<size_t>(id)];
    if (!g.defined()) continue;
    if (n.bound_param) {
      Param& p = *n.bound_param;
      Tensor& dst = sink ? (*sink)[p.name] : p.grad;
      if (!dst.defined()) dst = Tensor::zeros(p.value.shape);
      if (!dst.same_shape(g)) throw_shape_error("backward(param " + p.name + ")", dst, g);
      for (size_t i = 0; i < g.data.size(); ++i) dst.data[i] += g.data[i];
      dst.round_to_mode();
    }
    if (n.back) n.back(*this, id);
  }
}

// ---- finite-difference oracle ---------------------------------------------

GradCheckResult finite_difference_check(const std::function<double()>& eval_loss, ParamStore& params, double h,
                                        int64_t max_coords_per_param, uint64_t seed) {
  GradCheckResult res;
  std::mt19937_64 rng(seed);
  for (Param* p : params.all()) {
    const int64_t n = p->value.numel();
    std::vector<int64_t> coords;
    if (n <= max_coords_per_param) {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      std::uniform_int_distribution<int64_t> pick(0, n - 1);
      for (int64_t i = 0; i < max_coords_per_param; ++i) coords.push_back(pick(rng));
    }
    for (int64_t c : coords) {
      const double saved = p->value.at(c);
      p->value.at(c) = saved + h;
      const double fp = eval_loss();
      p->value.at(c) = saved - h;
      const double fm = eval_loss();
      p->value.at(c) = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double analytic = p->grad.defined() ? p->grad.at(c) : 0.0;
      if (!std::isfinite(fd) || !std::isfinite(analytic)) {
        res.nan_count++;
        continue;
      }
      const double rel = std::abs(analytic - fd) / (std::abs(analytic) + 1e-8);
      res.max_rel_err = std::max(res.max_rel_err, rel);
      res.checked++;
    }
  }
  return res;
}

}  // namespace sidrec
