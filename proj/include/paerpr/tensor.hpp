#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace paerpr {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Dense row-major tensor of doubles. Rank 1 and 2 cover everything the models
// need; all heavy lifting happens through the Eigen views below.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(count(shape), 0.0);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) throw std::invalid_argument("tensor: data/shape mismatch");
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t rows() const { return ndim() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return ndim() == 2 ? shape[1] : (shape.empty() ? 0 : shape[0]); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // 2-D view; rank-1 tensors view as a single row.
  MatMap mat() { return MatMap(data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())); }
  ConstMatMap mat() const {
    return ConstMatMap(data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(0.0); }
};

inline std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i) s += (i ? "x" : "") + std::to_string(t.shape[i]);
  return s + "]";
}

inline void check_matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw std::invalid_argument("matmul: rank-2 tensors required, got " + shape_str(a) + " and " + shape_str(b));
}

// C = A * B
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matmul(a, b);
  if (a.shape[1] != b.shape[0])
    throw std::invalid_argument("matmul: inner extents differ: " + shape_str(a) + " * " + shape_str(b));
  Tensor c({a.shape[0], b.shape[1]});
  c.mat().noalias() = a.mat() * b.mat();
  return c;
}

// C = A * B^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_matmul(a, b);
  if (a.shape[1] != b.shape[1])
    throw std::invalid_argument("matmul_nt: inner extents differ: " + shape_str(a) + " * " + shape_str(b) + "^T");
  Tensor c({a.shape[0], b.shape[0]});
  c.mat().noalias() = a.mat() * b.mat().transpose();
  return c;
}

// C = A^T * B
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  check_matmul(a, b);
  if (a.shape[0] != b.shape[0])
    throw std::invalid_argument("matmul_tn: inner extents differ: " + shape_str(a) + "^T * " + shape_str(b));
  Tensor c({a.shape[1], b.shape[1]});
  c.mat().noalias() = a.mat().transpose() * b.mat();
  return c;
}

// Round every value to the nearest float32. Model tensors live on this grid so
// that f32 checkpoints round-trip bit-exactly.
inline void quantize_f32(Tensor& t) {
  for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace paerpr
