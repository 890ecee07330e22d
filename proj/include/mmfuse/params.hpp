#ifndef MMFUSE_PARAMS_HPP_
#define MMFUSE_PARAMS_HPP_

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmfuse/error.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

// Named trainable tensors in a fixed insertion order. The order defines the
// initialization RNG stream, the optimizer-state layout, and the checkpoint
// array layout, so it must never depend on anything but the configuration.
template <class T>
class ParamStore {
 public:
  int add(std::string name, Tensor<T> t) {
    if (index_.count(name)) {
      throw ContractError("duplicate parameter name: " + name);
    }
    names_.push_back(name);
    tensors_.push_back(std::move(t));
    index_.emplace(std::move(name), static_cast<int>(names_.size()) - 1);
    return static_cast<int>(names_.size()) - 1;
  }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  Tensor<T>& operator[](int i) { return tensors_[static_cast<size_t>(i)]; }
  const Tensor<T>& operator[](int i) const {
    return tensors_[static_cast<size_t>(i)];
  }

  const std::string& name(int i) const {
    return names_[static_cast<size_t>(i)];
  }

  int count() const { return static_cast<int>(tensors_.size()); }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace mmfuse

#endif  // MMFUSE_PARAMS_HPP_
