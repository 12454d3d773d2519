// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mdf/error.hpp"

namespace mdf {

namespace {

std::size_t product(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    n *= d;
  }
  return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::shape, "%s: shape mismatch %s vs %s", op, a.shape_string().c_str(), b.shape_string().c_str());
  }
}

void require_rank1(const Tensor& t, const char* op) {
  if (t.rank() != 1) {
    fail(ErrorCode::shape, "%s: expected a rank-1 tensor, got %s", op, t.shape_string().c_str());
  }
}

}  // namespace

std::string shape_to_string(std::span<const std::size_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) {
      s += ", ";
    }
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, float fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    fail(ErrorCode::shape, "tensor shape %s needs %zu values, got %zu", shape_string().c_str(), product(shape_),
         data_.size());
  }
}

Tensor Tensor::from_vector(std::vector<float> values) {
  std::vector<std::size_t> shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m > 0 ? rows.begin()->size() : 0;
  std::vector<float> data;
  data.reserve(m * n);
  for (const auto& r : rows) {
    if (r.size() != n) {
      fail(ErrorCode::shape, "ragged rows in Tensor::from_rows");
    }
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({m, n}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    fail(ErrorCode::shape, "axis %zu out of range for shape %s", axis, shape_string().c_str());
  }
  return shape_[axis];
}

std::span<const float> Tensor::row(std::size_t i) const {
  const std::size_t n = shape_.at(1);
  return std::span<const float>(data_).subspan(i * n, n);
}

std::span<float> Tensor::row(std::size_t i) {
  const std::size_t n = shape_.at(1);
  return std::span<float>(data_).subspan(i * n, n);
}

float Tensor::at(std::size_t i, std::size_t j) const { return data_[i * shape_.at(1) + j]; }

std::string Tensor::shape_string() const { return shape_to_string(shape_); }

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    fail(ErrorCode::shape, "matmul: cannot multiply %s by %s", a.shape_string().c_str(), b.shape_string().c_str());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += static_cast<double>(a[i * k + p]) * static_cast<double>(b[p * n + j]);
      }
      c[i * n + j] = static_cast<float>(acc);
    }
  }
  return c;
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    acc += static_cast<double>(a[p]) * static_cast<double>(b[p]);
  }
  return acc;
}

void matvec(std::span<const float> w, std::size_t rows, std::size_t cols, std::span<const float> x,
            std::span<float> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    y[r] = static_cast<float>(dot(w.subspan(r * cols, cols), x));
  }
}

void matvec(const Tensor& w, std::span<const float> x, std::span<float> y, const Tensor* bias) {
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  if (x.size() != cols || y.size() != rows) {
    fail(ErrorCode::shape, "matvec: %s times vector of %zu into %zu", w.shape_string().c_str(), x.size(), y.size());
  }
  if (bias == nullptr) {
    matvec(w.data(), rows, cols, x, y);
    return;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double acc = dot(w.data().subspan(r * cols, cols), x) + static_cast<double>((*bias)[r]);
    y[r] = static_cast<float>(acc);
  }
}

std::vector<double> softmax_f64(std::span<const float> x, double temperature) {
  if (x.empty()) {
    fail(ErrorCode::shape, "softmax: empty input");
  }
  if (!(temperature > 0.0)) {
    fail(ErrorCode::invalid_argument, "softmax: temperature must be positive, got %g", temperature);
  }
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> y(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp((static_cast<double>(x[i]) - mx) / temperature);
    sum += y[i];
  }
  for (double& v : y) {
    v /= sum;
  }
  return y;
}

Tensor softmax(const Tensor& x, double temperature) {
  require_rank1(x, "softmax");
  const std::vector<double> y = softmax_f64(x.data(), temperature);
  std::vector<float> out(y.begin(), y.end());
  return Tensor::from_vector(std::move(out));
}

double logsumexp(std::span<const float> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (float v : x) {
    sum += std::exp(static_cast<double>(v) - mx);
  }
  return mx + std::log(sum);
}

void log_softmax(std::span<const float> x, std::span<float> out) {
  if (x.empty()) {
    fail(ErrorCode::shape, "log_softmax: empty input");
  }
  const double lse = logsumexp(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(x[i]) - lse);
  }
}

Tensor log_softmax(const Tensor& x) {
  require_rank1(x, "log_softmax");
  Tensor out(x.shape());
  log_softmax(x.data(), out.data());
  return out;
}

void rms_norm(std::span<const float> x, std::span<const float> gain, double eps, std::span<float> out) {
  double ss = 0.0;
  for (float v : x) {
    ss += static_cast<double>(v) * static_cast<double>(v);
  }
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + eps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(gain[i]) * (static_cast<double>(x[i]) * inv));
  }
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  require_rank1(x, "rms_norm");
  require_same_shape(x, gain, "rms_norm");
  Tensor out(x.shape());
  rms_norm(x.data(), gain.data(), eps, out.data());
  return out;
}

void layer_norm(std::span<const float> x, std::span<const float> gain, std::span<const float> bias, double eps,
                std::span<float> out) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (float v : x) {
    mean += static_cast<double>(v);
  }
  mean /= n;
  double var = 0.0;
  for (float v : x) {
    const double d = static_cast<double>(v) - mean;
    var += d * d;
  }
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double b = bias.empty() ? 0.0 : static_cast<double>(bias[i]);
    out[i] = static_cast<float>(static_cast<double>(gain[i]) * ((static_cast<double>(x[i]) - mean) * inv) + b);
  }
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank1(x, "layer_norm");
  require_same_shape(x, gain, "layer_norm");
  require_same_shape(x, bias, "layer_norm");
  Tensor out(x.shape());
  layer_norm(x.data(), gain.data(), bias.data(), eps, out.data());
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out[i] = a[i] + b[i];
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(a[i]) * s);
  }
  return out;
}

float gelu(float x) {
  // tanh approximation, as used by GPT-2.
  const double v = x;
  const double inner = 0.7978845608028654 * (v + 0.044715 * v * v * v);
  return static_cast<float>(0.5 * v * (1.0 + std::tanh(inner)));
}

float silu(float x) {
  const double v = x;
  return static_cast<float>(v / (1.0 + std::exp(-v)));
}

std::size_t argmax(std::span<const float> x) {
  if (x.empty()) {
    fail(ErrorCode::shape, "argmax: empty input");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (x[i] > x[best]) {
      best = i;
    }
  }
  return best;
}

std::vector<std::size_t> top_k(std::span<const float> x, std::size_t k) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, x.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return x[a] > x[b] || (x[a] == x[b] && a < b); });
  idx.resize(k);
  return idx;
}

Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids) {
  if (table.rank() != 2) {
    fail(ErrorCode::shape, "gather_rows: table must be rank 2, got %s", table.shape_string().c_str());
  }
  const std::size_t n = table.dim(1);
  Tensor out({ids.size(), n});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.dim(0)) {
      fail(ErrorCode::range, "gather_rows: id %d out of range [0, %zu)", ids[i], table.dim(0));
    }
    const auto src = table.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace ops
}  // namespace mdf
