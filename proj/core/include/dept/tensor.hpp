#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dept {

// Dense row-major matrix of doubles. Vectors (biases, layer-norm gains) are
// stored as 1 x n. All training math is 64-bit by design: the artifact's
// tests check exact gradients and bitwise aggregation identities.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  static Tensor zeros(std::size_t r, std::size_t c) { return Tensor(r, c); }

  std::size_t size() const { return rows * cols; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }

  bool same_shape(const Tensor& o) const {
    return rows == o.rows && cols == o.cols;
  }

  void fill(double v) { data.assign(data.size(), v); }
};

// out += a * b, where a is (m x k) and b is (k x n); out must be (m x n).
void matmul_accumulate(const Tensor& a, const Tensor& b, Tensor& out);

// out += a * b^T, where a is (m x k) and b is (n x k); out must be (m x n).
void matmul_nt_accumulate(const Tensor& a, const Tensor& b, Tensor& out);

// out += a^T * b, where a is (k x m) and b is (k x n); out must be (m x n).
void matmul_tn_accumulate(const Tensor& a, const Tensor& b, Tensor& out);

double squared_l2(std::span<const double> v);

}  // namespace dept
