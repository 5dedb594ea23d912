#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "atv/tensor.hpp"

namespace atv {

// Ordered name -> tensor map used for model parameters, gradients, and
// optimizer moments. Iteration follows registration order, which keeps
// every consumer (init, optimizer, checkpoints) deterministic.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    detail::require(map_.find(name) == map_.end(), "ParamStore: duplicate name " + name);
    order_.push_back(name);
    return map_.emplace(name, std::move(t)).first->second;
  }

  bool has(const std::string& name) const { return map_.find(name) != map_.end(); }

  Tensor<T>& at(const std::string& name) {
    auto it = map_.find(name);
    detail::require(it != map_.end(), "ParamStore: missing name " + name);
    return it->second;
  }

  const Tensor<T>& at(const std::string& name) const {
    auto it = map_.find(name);
    detail::require(it != map_.end(), "ParamStore: missing name " + name);
    return it->second;
  }

  // Adds elementwise into an existing entry, or registers the tensor.
  void accumulate(const std::string& name, const Tensor<T>& g) {
    auto it = map_.find(name);
    if (it == map_.end()) {
      add(name, g);
      return;
    }
    detail::require(it->second.shape() == g.shape(), "ParamStore: accumulate shape mismatch for " + name);
    T* dst = it->second.data();
    const T* src = g.data();
    const int64_t n = g.size();
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
  }

  const std::vector<std::string>& names() const { return order_; }
  size_t count() const { return order_.size(); }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& name : order_) n += map_.at(name).size();
    return n;
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor<T>> map_;
};

}  // namespace atv
