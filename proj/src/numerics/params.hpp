#pragma once

#include <string>
#include <utility>
#include <vector>

#include "numerics/tensor.hpp"

namespace frn {

/// Ordered collection of named learnable tensors. Registration order is the
/// serialization order.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor value) {
    for (const auto& [n, t] : entries_)
      require(n != name, ErrorKind::contract, "duplicate parameter name '" + name + "'");
    value.requires_grad_();
    entries_.emplace_back(name, std::move(value));
    return entries_.back().second;
  }

  Tensor* find(const std::string& name) {
    for (auto& [n, t] : entries_)
      if (n == name) return &t;
    return nullptr;
  }
  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return &t;
    return nullptr;
  }
  Tensor& get(const std::string& name) {
    Tensor* t = find(name);
    require(t != nullptr, ErrorKind::contract, "unknown parameter '" + name + "'");
    return *t;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [n, t] : entries_) t.zero_grad();
  }

  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace frn
