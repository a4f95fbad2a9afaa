// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ehrlm {

/// Named dense tensor, row-major.
template <typename T>
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> data;

  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
  std::size_t numel() const { return data.size(); }

  bool operator==(const Tensor&) const = default;
};

/// Ordered collection of named tensors. Model parameters, gradients, and
/// optimizer moments all share this layout.
template <typename T>
class ParamSet {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    Tensor<T> t;
    t.name = std::move(name);
    t.data.assign(Tensor<T>::numel_of(shape), T{0});
    t.shape = std::move(shape);
    tensors_.push_back(std::move(t));
    return tensors_.size() - 1;
  }

  std::size_t size() const { return tensors_.size(); }
  Tensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].name == name) return i;
    }
    return std::nullopt;
  }

  std::size_t total_numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& t : tensors_) out.add(t.name, t.shape);
    return out;
  }

  void fill(T value) {
    for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), value);
  }

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<Tensor<T>> tensors_;
};

/// Global L2 norm over every element of every tensor.
template <typename T>
double global_norm(const ParamSet<T>& set) {
  double sq = 0.0;
  for (const auto& t : set) {
    for (const T v : t.data) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(sq);
}

}  // namespace ehrlm
