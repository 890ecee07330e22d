#ifndef MMFUSE_TEST_SUPPORT_HPP_
#define MMFUSE_TEST_SUPPORT_HPP_

#include <cmath>
#include <functional>
#include <vector>

#include "mmfuse/graph.hpp"
#include "mmfuse/rng.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse::testing {

// Reduces a matrix node to a scalar through existing ops:
// ones(1×m) · (x ⊙ W) · ones(n×1). With W = 1 this is a plain sum; a random
// W probes distinct gradient directions.
template <class T>
typename Graph<T>::NodeId scalarize(Graph<T>& g, typename Graph<T>::NodeId x,
                                    const Tensor<T>* weights = nullptr) {
  const Tensor<T>& v = g.value(x);
  const int m = v.shape[0], n = v.shape[1];
  auto h = x;
  if (weights != nullptr) h = g.mul(x, g.constant(*weights));
  auto left = g.constant(Tensor<T>::full({1, m}, T(1)));
  auto right = g.constant(Tensor<T>::full({n, 1}, T(1)));
  return g.matmul(g.matmul(left, h), right);
}

// Central finite difference of f at one slot, h = 1e-5.
inline double fd_central(const std::function<double()>& f, double* slot,
                         double h = 1e-5) {
  const double keep = *slot;
  *slot = keep + h;
  const double up = f();
  *slot = keep - h;
  const double down = f();
  *slot = keep;
  return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Max relative error between the analytic gradient of `loss` w.r.t. every
// element of `input` and central finite differences.
inline double max_fd_err(
    std::vector<Tensor<double>*> inputs,
    const std::function<double()>& value,
    const std::function<std::vector<Tensor<double>>()>& analytic) {
  const std::vector<Tensor<double>> grads = analytic();
  double worst = 0;
  for (size_t t = 0; t < inputs.size(); ++t) {
    for (int64_t i = 0; i < inputs[t]->numel(); ++i) {
      const double fd = fd_central(value, &inputs[t]->data[i]);
      worst = std::max(worst, rel_err(grads[t].data[i], fd));
    }
  }
  return worst;
}

}  // namespace mmfuse::testing

#endif  // MMFUSE_TEST_SUPPORT_HPP_
