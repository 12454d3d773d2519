// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mdf {

// Dense row-major f32 array. All reductions in the ops below accumulate in
// double and sum in ascending index order, so results are bit-reproducible.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, float fill = 0.0f);
  Tensor(std::vector<std::size_t> shape, std::vector<float> data);

  static Tensor from_vector(std::vector<float> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  // Row i of a rank-2 tensor.
  std::span<const float> row(std::size_t i) const;
  std::span<float> row(std::size_t i);

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }
  float at(std::size_t i, std::size_t j) const;

  bool operator==(const Tensor& other) const = default;

  std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

std::string shape_to_string(std::span<const std::size_t> shape);

namespace ops {

// c[i,j] = sum_p a[i,p] * b[p,j]
Tensor matmul(const Tensor& a, const Tensor& b);

// y = W x (+ bias) for W with shape [rows, cols] stored row-major.
void matvec(std::span<const float> w, std::size_t rows, std::size_t cols, std::span<const float> x,
            std::span<float> y);
void matvec(const Tensor& w, std::span<const float> x, std::span<float> y, const Tensor* bias = nullptr);

double dot(std::span<const float> a, std::span<const float> b);

Tensor softmax(const Tensor& x, double temperature = 1.0);
std::vector<double> softmax_f64(std::span<const float> x, double temperature = 1.0);
Tensor log_softmax(const Tensor& x);
void log_softmax(std::span<const float> x, std::span<float> out);
double logsumexp(std::span<const float> x);

void rms_norm(std::span<const float> x, std::span<const float> gain, double eps, std::span<float> out);
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);
void layer_norm(std::span<const float> x, std::span<const float> gain, std::span<const float> bias, double eps,
                std::span<float> out);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

float gelu(float x);
float silu(float x);

std::size_t argmax(std::span<const float> x);
// Indices of the k largest values, descending; ties broken by lower index.
std::vector<std::size_t> top_k(std::span<const float> x, std::size_t k);

Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids);

}  // namespace ops
}  // namespace mdf
