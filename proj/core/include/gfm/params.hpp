#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gfm/autograd.hpp"

namespace gfm {

template <typename T>
struct Param {
  std::string name;
  ag::Var<T> var;
  bool decay = true;  // participates in weight decay
};

// Ordered, named parameter collection with value semantics: copying a
// ParamSet deep-copies every tensor.
template <typename T>
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other) { copy_from(other); }
  ParamSet& operator=(const ParamSet& other) {
    if (this != &other) copy_from(other);
    return *this;
  }
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  std::size_t add(std::string name, Tensor<T> value, bool decay) {
    items_.push_back({std::move(name), ag::make_var(std::move(value), trainable_), decay});
    return items_.size() - 1;
  }

  const ag::Var<T>& operator[](std::size_t i) const { return items_[i].var; }
  const std::vector<Param<T>>& items() const { return items_; }
  std::vector<Param<T>>& items() { return items_; }
  std::size_t size() const { return items_.size(); }

  // Index of a named parameter or -1.
  std::ptrdiff_t find(const std::string& name) const {
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (items_[i].name == name) return static_cast<std::ptrdiff_t>(i);
    return -1;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.var->numel();
    return n;
  }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : items_) {
      h = hash_bytes(p.name.data(), p.name.size(), h);
      h = content_hash(p.var->value, h);
    }
    return h;
  }

  void set_trainable(bool trainable) {
    trainable_ = trainable;
    for (auto& p : items_) {
      p.var->requires_grad = trainable;
      if (!trainable) p.var->grad.clear();
    }
  }
  bool trainable() const { return trainable_; }

  void zero_grad() {
    for (auto& p : items_) p.var->grad.clear();
  }

  std::map<std::string, Tensor<float>> export_float(const std::string& prefix = "") const {
    std::map<std::string, Tensor<float>> out;
    for (const auto& p : items_) out.emplace(prefix + p.name, p.var->value.template cast<float>());
    return out;
  }

 private:
  void copy_from(const ParamSet& other) {
    trainable_ = other.trainable_;
    items_.clear();
    items_.reserve(other.items_.size());
    for (const auto& p : other.items_) items_.push_back({p.name, ag::make_var(p.var->value, trainable_), p.decay});
  }

  std::vector<Param<T>> items_;
  bool trainable_ = true;
};

// Copies values for every parameter whose prefixed name exists in `tensors`;
// throws corrupt-container on shape mismatch and when `require_all` is set and a
// name is absent.
template <typename T>
void import_float(ParamSet<T>& params, const std::map<std::string, Tensor<float>>& tensors,
                  const std::string& prefix, bool require_all);

}  // namespace gfm
