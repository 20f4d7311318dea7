#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "lpad/tensor.hpp"

namespace lpad {

/// A named array owned by a network. Trainable entries carry a gradient
/// buffer of the same shape; non-trainable entries hold running statistics.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

/// Flat, ordered collection of a network's arrays. Addresses are stable, so
/// graph nodes may hold references across calls.
template <typename T>
class ParamSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> init, bool trainable = true) {
    for (const auto& p : items_) {
      if (p->name == name) throw InternalError("duplicate parameter name " + name);
    }
    auto p = std::make_unique<Parameter<T>>();
    p->name = std::move(name);
    p->grad = trainable ? Tensor<T>(init.shape()) : Tensor<T>();
    p->value = std::move(init);
    p->trainable = trainable;
    items_.push_back(std::move(p));
    return *items_.back();
  }

  std::size_t size() const { return items_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *items_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *items_[i]; }

  Parameter<T>* find(std::string_view name) {
    for (auto& p : items_) {
      if (p->name == name) return p.get();
    }
    return nullptr;
  }
  const Parameter<T>* find(std::string_view name) const {
    return const_cast<ParamSet*>(this)->find(name);
  }

  void zero_grad() {
    for (auto& p : items_) {
      if (p->trainable) p->grad.fill(T{0});
    }
  }

  /// FNV-1a over names and raw value bytes of every entry.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
      }
    };
    for (const auto& p : items_) {
      mix(p->name.data(), p->name.size());
      mix(p->value.data(), p->value.size() * sizeof(T));
    }
    return h;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) {
      if (p->trainable) n += p->value.size();
    }
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> items_;
};

}  // namespace lpad
