#ifndef MMFUSE_TENSOR_HPP_
#define MMFUSE_TENSOR_HPP_

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mmfuse/error.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

// Dense row-major tensor. The scalar type is float for training and double
// for the finite-difference verification builds; everything downstream is
// templated on it.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() : shape{1}, data(1, T(0)) {}

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(check_shape(shape), T(0));
  }

  Tensor(std::vector<int> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (check_shape(shape) != static_cast<int64_t>(data.size())) {
      throw DimensionError("tensor data length " +
                           std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  int rows() const { return shape[0]; }
  int cols() const {
    return rank() == 1 ? 1 : shape[rank() - 1];
  }

  T& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  T at(int r, int c) const {
    return data[static_cast<size_t>(r) * cols() + c];
  }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item() on non-scalar tensor of shape " +
                          shape_str(shape));
    }
    return data[0];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  static std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
  }

 private:
  static int64_t check_shape(const std::vector<int>& s) {
    if (s.empty()) throw DimensionError("tensor shape must not be empty");
    int64_t n = 1;
    for (int e : s) {
      if (e < 1) {
        throw DimensionError("tensor extents must be >= 1, got " +
                             shape_str(s));
      }
      n *= e;
    }
    return n;
  }
};

template <class T>
Tensor<T> random_normal(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

}  // namespace mmfuse

#endif  // MMFUSE_TENSOR_HPP_
