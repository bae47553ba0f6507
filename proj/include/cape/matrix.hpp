// Copyright 2026 The CAPE Embeddings Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#ifndef CAPE_MATRIX_HPP_
#define CAPE_MATRIX_HPP_

#include <cstddef>
#include <span>
#include <vector>

namespace cape {

// Dense row-major matrix of doubles. Rows of a batch are examples.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// out(b, o) = sum_i in(b, i) * weight(o, i) + bias(o)
inline Matrix affine(const Matrix& in, const Matrix& weight,
                     std::span<const double> bias) {
  Matrix out(in.rows(), weight.rows());
  for (std::size_t b = 0; b < in.rows(); ++b) {
    const auto x = in.row(b);
    for (std::size_t o = 0; o < weight.rows(); ++o) {
      const auto w = weight.row(o);
      double acc = bias[o];
      for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w[i];
      out(b, o) = acc;
    }
  }
  return out;
}

inline Matrix relu(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

// Accumulates the gradients of a dense layer given the gradient w.r.t. its
// output. grad_w(o, i) += sum_b grad_out(b, o) * in(b, i).
inline void accumulate_dense_grads(const Matrix& grad_out, const Matrix& in,
                                   Matrix& grad_w,
                                   std::span<double> grad_b) {
  for (std::size_t b = 0; b < grad_out.rows(); ++b) {
    const auto x = in.row(b);
    for (std::size_t o = 0; o < grad_out.cols(); ++o) {
      const double g = grad_out(b, o);
      if (g == 0.0) continue;
      grad_b[o] += g;
      auto gw = grad_w.row(o);
      for (std::size_t i = 0; i < x.size(); ++i) gw[i] += g * x[i];
    }
  }
}

// grad_in(b, i) = sum_o grad_out(b, o) * weight(o, i)
inline Matrix backprop_input(const Matrix& grad_out, const Matrix& weight) {
  Matrix grad_in(grad_out.rows(), weight.cols());
  for (std::size_t b = 0; b < grad_out.rows(); ++b) {
    auto gi = grad_in.row(b);
    for (std::size_t o = 0; o < grad_out.cols(); ++o) {
      const double g = grad_out(b, o);
      if (g == 0.0) continue;
      const auto w = weight.row(o);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g * w[i];
    }
  }
  return grad_in;
}

}  // namespace cape

#endif  // CAPE_MATRIX_HPP_
