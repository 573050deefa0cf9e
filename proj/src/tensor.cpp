#include "sidrec/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace sidrec {

namespace {
Dtype g_dtype = Dtype::f32;
}

Dtype default_dtype() { return g_dtype; }
void set_default_dtype(Dtype mode) { g_dtype = mode; }

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::string Tensor::shape_str() const { return sidrec::shape_str(shape); }

void throw_shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
  throw std::runtime_error(op + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

void throw_shape_error(const std::string& op, const Tensor& a) {
  throw std::runtime_error(op + ": bad shape " + a.shape_str());
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(static_cast<size_t>(shape_numel(t.shape)), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(static_cast<size_t>(shape_numel(t.shape)), value);
  return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<double> values) {
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(values);
  if (shape_numel(t.shape) != t.numel()) throw_shape_error("from", t);
  return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

double Tensor::item() const {
  if (numel() != 1) throw_shape_error("item", *this);
  return data[0];
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::round_to_mode() {
  if (g_dtype != Dtype::f32) return;
  for (double& v : data) v = static_cast<double>(static_cast<float>(v));
}

double dot(const double* a, const double* b, int64_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return ((s0 + s1) + (s2 + s3));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) throw_shape_error("matmul", a, b);
  const int64_t n = a.shape[0], k = a.shape[1], m = b.shape[1];
  Tensor out = Tensor::zeros({n, m});
  const double* ap = a.data.data();
  const double* bp = b.data.data();
  double* op = out.data.data();
  for (int64_t i = 0; i < n; ++i) {
    const double* arow = ap + i * k;
    double* orow = op + i * m;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = bp + kk * m;
      for (int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  out.round_to_mode();
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw_shape_error("add", a, b);
  Tensor out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  out.round_to_mode();
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw_shape_error("sub", a, b);
  Tensor out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
  out.round_to_mode();
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw_shape_error("mul", a, b);
  Tensor out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
  out.round_to_mode();
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (double& v : out.data) v *= c;
  out.round_to_mode();
  return out;
}

Tensor add_bias_rows(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.shape[0] != x.shape[1]) throw_shape_error("add_bias_rows", x, bias);
  Tensor out = x;
  const int64_t n = x.shape[0], d = x.shape[1];
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) out.at(i, j) += bias.at(j);
  out.round_to_mode();
  return out;
}

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw_shape_error("transpose2d", a);
  Tensor out = Tensor::zeros({a.shape[1], a.shape[0]});
  for (int64_t i = 0; i < a.shape[0]; ++i)
    for (int64_t j = 0; j < a.shape[1]; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw_shape_error("softmax_rows", x);
  Tensor out = x;
  const int64_t n = x.shape[0], d = x.shape[1];
  for (int64_t i = 0; i < n; ++i) {
    double mx = x.at(i, 0);
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, x.at(i, j));
    double sum = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double e = std::exp(x.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int64_t j = 0; j < d; ++j) out.at(i, j) *= inv;
  }
  out.round_to_mode();
  return out;
}

Tensor log_softmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw_shape_error("log_softmax_rows", x);
  Tensor out = x;
  const int64_t n = x.shape[0], d = x.shape[1];
  for (int64_t i = 0; i < n; ++i) {
    double mx = x.at(i, 0);
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, x.at(i, j));
    double sum = 0.0;
    for (int64_t j = 0; j < d; ++j) sum += std::exp(x.at(i, j) - mx);
    const double lse = mx + std::log(sum);
    for (int64_t j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) - lse;
  }
  out.round_to_mode();
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  out.round_to_mode();
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  out.round_to_mode();
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1]) throw_shape_error("concat_rows", a, b);
  Tensor out = Tensor::zeros({a.shape[0] + b.shape[0], a.shape[1]});
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
  return out;
}

Tensor pick_rows(const Tensor& x, const std::vector<int64_t>& rows) {
  if (x.rank() != 2) throw_shape_error("pick_rows", x);
  Tensor out = Tensor::zeros({static_cast<int64_t>(rows.size()), x.shape[1]});
  const int64_t d = x.shape[1];
  for (size_t i = 0; i < rows.size(); ++i) {
    const int64_t r = rows[i];
    if (r < 0 || r >= x.shape[0]) throw std::runtime_error("pick_rows: row index out of range");
    std::memcpy(out.data.data() + static_cast<size_t>(i) * d, x.data.data() + static_cast<size_t>(r) * d,
                static_cast<size_t>(d) * sizeof(double));
  }
  return out;
}

}  // namespace sidrec
