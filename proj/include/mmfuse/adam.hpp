#ifndef MMFUSE_ADAM_HPP_
#define MMFUSE_ADAM_HPP_

#include <cmath>
#include <cstdint>
#include <vector>

#include "mmfuse/error.hpp"
#include "mmfuse/params.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

// First/second moment buffers aligned with a ParamStore, plus the step
// counter used for bias correction.
template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  int64_t step = 0;

  static AdamState zeros_like(const ParamStore<T>& params) {
    AdamState s;
    s.m.reserve(params.count());
    s.v.reserve(params.count());
    for (int i = 0; i < params.count(); ++i) {
      s.m.push_back(Tensor<T>::zeros(params[i].shape));
      s.v.push_back(Tensor<T>::zeros(params[i].shape));
    }
    return s;
  }
};

// One Adam update with bias correction. Aborts without touching any
// parameter if a gradient is non-finite.
template <class T>
void adam_step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8) {
  if (static_cast<int>(grads.size()) != params.count() ||
      static_cast<int>(state.m.size()) != params.count()) {
    throw ContractError("adam_step: gradient/state layout mismatch");
  }
  for (int i = 0; i < params.count(); ++i) {
    if (!grads[i].same_shape(params[i])) {
      throw ContractError("adam_step: gradient shape mismatch for " +
                          params.name(i));
    }
    if (!grads[i].all_finite()) {
      throw NumericError("adam_step: non-finite gradient for parameter " +
                         params.name(i));
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (int i = 0; i < params.count(); ++i) {
    Tensor<T>& p = params[i];
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    const Tensor<T>& g = grads[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      m.data[j] = static_cast<T>(beta1 * m.data[j] + (1.0 - beta1) * g.data[j]);
      v.data[j] = static_cast<T>(beta2 * v.data[j] +
                                 (1.0 - beta2) * g.data[j] * g.data[j]);
      const double mhat = m.data[j] / bc1;
      const double vhat = v.data[j] / bc2;
      p.data[j] =
          static_cast<T>(p.data[j] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

// Scales gradients in place so their global L2 norm does not exceed cap.
// Returns the pre-clip norm.
template <class T>
double clip_global_norm(std::vector<Tensor<T>>& grads, double cap) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (T x : g.data) sq += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(sq);
  if (cap > 0.0 && norm > cap) {
    const T s = static_cast<T>(cap / norm);
    for (auto& g : grads)
      for (T& x : g.data) x *= s;
  }
  return norm;
}

}  // namespace mmfuse

#endif  // MMFUSE_ADAM_HPP_
