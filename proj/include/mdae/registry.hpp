#pragma once

#include <deque>
#include <span>
#include <string>
#include <unordered_map>

#include "mdae/tensor.hpp"

namespace mdae {

// One named parameter. Per-channel vectors (biases, batchnorm scales,
// running stats) are stored as (len,1,1,1) tensors with ndim 1 so the
// optimizer and serializer see a single shape language.
template <typename T>
struct Param {
  std::string name;
  int ndim = 4;
  bool trainable = true;
  Tensor4<T> value;
  Tensor4<T> grad;

  int len() const { return value.n(); }  // vector params only
  std::span<T> vec() { return {value.data(), static_cast<std::size_t>(value.n())}; }
  std::span<const T> vec() const {
    return {value.data(), static_cast<std::size_t>(value.n())};
  }
  std::span<T> gvec() { return {grad.data(), static_cast<std::size_t>(grad.n())}; }
};

// Ordered name -> parameter map. Iteration order is insertion order, which
// fixes both the initialization draw order and the checkpoint byte layout.
template <typename T>
class ParameterRegistry {
 public:
  std::size_t add_tensor(const std::string& name, int n, int c, int h, int w,
                         bool trainable = true) {
    return add(name, Tensor4<T>(n, c, h, w), 4, trainable);
  }

  std::size_t add_vector(const std::string& name, int len, T init_value,
                         bool trainable = true) {
    Tensor4<T> v(len, 1, 1, 1);
    v.fill(init_value);
    return add(name, std::move(v), 1, trainable);
  }

  std::size_t size() const { return params_.size(); }

  Param<T>& at(std::size_t id) { return params_[id]; }
  const Param<T>& at(std::size_t id) const { return params_[id]; }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t id_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw contract_error("registry: unknown parameter '" + name + "'");
    return it->second;
  }

  Param<T>& operator[](const std::string& name) { return params_[id_of(name)]; }
  const Param<T>& operator[](const std::string& name) const {
    return params_[id_of(name)];
  }

  void zero_grads() {
    for (auto& p : params_) p.grad.fill(T(0));
  }

  std::size_t value_count(bool trainable_only) const {
    std::size_t total = 0;
    for (const auto& p : params_)
      if (!trainable_only || p.trainable) total += p.value.size();
    return total;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::size_t add(const std::string& name, Tensor4<T>&& value, int ndim,
                  bool trainable) {
    if (index_.count(name))
      throw contract_error("registry: duplicate parameter '" + name + "'");
    Param<T> p;
    p.name = name;
    p.ndim = ndim;
    p.trainable = trainable;
    p.grad = Tensor4<T>(value.n(), value.c(), value.h(), value.w());
    p.value = std::move(value);
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  std::deque<Param<T>> params_;  // deque: stable references across growth
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace mdae
