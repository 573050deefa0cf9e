#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "sidrec/tensor.h"

namespace sidrec {

// Named trainable tensor with gradient and AdamW moment slots.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;  // lazily sized; accumulated by Graph::backward
  Tensor adam_m;
  Tensor adam_v;

  void zero_grad() { grad = Tensor(); }
};

class ParamStore {
 public:
  Param& add(const std::string& name, Tensor init);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  void zero_grad();
  int64_t total_elements() const;

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, size_t> index_;
};

class Graph;

// Handle to a node in a Graph.
struct Var {
  Graph* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor& value() const;
};

// Dynamic tape: ops record their output and a backward closure.
// With recording=false the closures are skipped and only values flow,
// which is what beam search and evaluation use.
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }

  Var constant(Tensor t);
  Var param(Param& p);

  Var matmul(Var a, Var b);
  Var linear(Var x, Var w, Var b);  // x[n,din] * w[din,dout] + b[dout]
  // Same as linear but against a column slice w[:, col_begin:col_end).
  Var linear_cols(Var x, Var w, Var b, int64_t col_begin, int64_t col_end);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var concat_rows(Var a, Var b);
  Var pick_rows(Var x, std::vector<int64_t> rows);
  Var embedding(Var table, std::vector<int64_t> ids);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var gelu(Var x);
  Var sigmoid(Var x);
  Var softmax_rows(Var x);
  Var log_softmax_rows(Var x);
  // Multi-head causal attention. q is [tq,d], k/v are [tkv,d] with
  // tkv == q_offset + tq; query i attends to kv positions <= q_offset + i.
  Var causal_attention(Var q, Var k, Var v, int heads, int64_t q_offset);
  Var dropout(Var x, double rate, uint64_t seed);
  Var sum_all(Var x);
  // -sum_i log_probs[i, targets[i]]
  Var nll_pick(Var log_probs, std::vector<int64_t> targets);
  // -sum_i [y_i ln max(p_i,clamp) + (1-y_i) ln max(1-p_i,clamp)]
  Var bce_sum(Var probs, std::vector<double> labels, double clamp = 1e-12);

  const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }

  // Reverse-mode pass from a scalar loss; accumulates into Param::grad.
  // Fixed traversal order makes repeated calls bitwise identical.
  void backward(Var loss);
  // Same pass, but parameter gradients land in `sink` keyed by name
  // (used by worker threads; Param objects stay read-only).
  void backward(Var loss, std::unordered_map<std::string, Tensor>& sink);

  // Gradient of an intermediate node after backward() (testing hook).
  const Tensor& grad_of(Var v) const { return grads_[static_cast<size_t>(v.id)]; }

 private:
  struct Node {
    Tensor value;
    Param* bound_param = nullptr;
    std::function<void(Graph&, int)> back;  // empty when not recording or leaf
  };

  void backward_impl(Var loss, std::unordered_map<std::string, Tensor>* sink);
  Var emit(Tensor value, std::function<void(Graph&, int)> back);
  void accum_grad(int id, const Tensor& g);
  Tensor& grad_slot(int id) { return grads_[static_cast<size_t>(id)]; }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool recording_;
};

// --- finite-difference oracle -------------------------------------------
// Central differences against analytic grads already stored in params.
// `eval_loss` must recompute the loss from current param values without
// touching the stored grads. 64-bit mode expected for meaningful bounds.
struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  int64_t nan_count = 0;
};

GradCheckResult finite_difference_check(const std::function<double()>& eval_loss, ParamStore& params, double h,
                                        int64_t max_coords_per_param = 24, uint64_t seed = 0x5eed);

}  // namespace sidrec
