#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sidrec {

// Global float mode: f32 rounds every op result to float precision,
// f64 keeps full double precision (used by gradient-check oracles).
enum class Dtype { f32, f64 };

Dtype default_dtype();
void set_default_dtype(Dtype mode);

// RAII guard for tests that flip the mode.
struct DtypeGuard {
  explicit DtypeGuard(Dtype mode) : saved_(default_dtype()) { set_default_dtype(mode); }
  ~DtypeGuard() { set_default_dtype(saved_); }
 private:
  Dtype saved_;
};

inline double mode_round(double v, Dtype mode) {
  return mode == Dtype::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

// Dense row-major tensor. Elements are stored as double; in f32 mode every
// op rounds its result elementwise so values stay float-representable.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor from(std::vector<int64_t> shape, std::vector<double> values);
  static Tensor scalar(double value);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool defined() const { return !shape.empty() || !data.empty(); }
  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return data[static_cast<size_t>(i)]; }
  double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
  double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }

  double item() const;
  bool all_finite() const;
  void round_to_mode();

  std::string shape_str() const;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

// Structured op error: names the primitive and the offending shapes.
[[noreturn]] void throw_shape_error(const std::string& op, const Tensor& a, const Tensor& b);
[[noreturn]] void throw_shape_error(const std::string& op, const Tensor& a);

// ---- raw kernels (forward only; the autograd graph wraps these) ----

Tensor matmul(const Tensor& a, const Tensor& b);              // [n,k]x[k,m]
Tensor add(const Tensor& a, const Tensor& b);                 // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);                 // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_bias_rows(const Tensor& x, const Tensor& bias);    // x[n,d] + bias[d]
Tensor transpose2d(const Tensor& a);
Tensor softmax_rows(const Tensor& x);                         // stable, rows sum to 1
Tensor log_softmax_rows(const Tensor& x);                     // max-subtracted
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);                                 // exact erf form
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor pick_rows(const Tensor& x, const std::vector<int64_t>& rows);

double dot(const double* a, const double* b, int64_t n);

}  // namespace sidrec
