#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mapvec/core/error.hpp"

namespace mapvec {

// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (std::size_t r = 0; r < m.rows_; ++r) {
      require(rows[r].size() == m.cols_, "ragged matrix rows");
      std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a * b^T, the natural layout for attention scores.
inline Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_transposed: inner dimension mismatch");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto bj = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < ai.size(); ++k) acc += ai[k] * bj[k];
      out(i, j) = acc;
    }
  }
  return out;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto bk = b.row(k);
      auto oi = out.row(i);
      for (std::size_t j = 0; j < bk.size(); ++j) oi[j] += aik * bk[j];
    }
  }
  return out;
}

// Fully connected layer y = x W^T + b, weight stored out x in.
struct Linear {
  Matrix weight;
  std::vector<double> bias;

  std::size_t in_features() const { return weight.cols(); }
  std::size_t out_features() const { return weight.rows(); }

  void validate(const std::string& name) const {
    require(bias.size() == weight.rows(), name + ": bias width mismatch");
  }

  std::vector<double> apply(std::span<const double> x) const {
    require(x.size() == weight.cols(), "Linear: input width mismatch");
    std::vector<double> y(weight.rows());
    for (std::size_t o = 0; o < weight.rows(); ++o) {
      const auto w = weight.row(o);
      double acc = bias[o];
      for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * x[i];
      y[o] = acc;
    }
    return y;
  }

  Matrix apply_rows(const Matrix& x) const {
    Matrix out(x.rows(), weight.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto y = apply(x.row(r));
      std::copy(y.begin(), y.end(), out.row(r).begin());
    }
    return out;
  }
};

struct LayerNormParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  double eps = 1e-5;

  static LayerNormParams identity(std::size_t width) {
    return {std::vector<double>(width, 1.0), std::vector<double>(width, 0.0)};
  }
};

// Normalizes `values` in place to zero mean and unit (population) variance,
// then applies the affine scale/shift.
inline void layer_norm_inplace(std::span<double> values, const LayerNormParams& p) {
  require(p.gamma.size() == values.size() && p.beta.size() == values.size(),
          "layer norm: parameter width mismatch");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + p.eps);
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = (values[i] - mean) * inv * p.gamma[i] + p.beta[i];
  }
}

inline void softmax_inplace(std::span<double> values) {
  const double peak = *std::max_element(values.begin(), values.end());
  double total = 0.0;
  for (double& v : values) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : values) v /= total;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace mapvec
