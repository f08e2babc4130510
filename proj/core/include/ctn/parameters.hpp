#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ctn/rng.hpp"
#include "ctn/tensor.hpp"

namespace ctn {

/// Insertion-ordered collection of named trainable tensors.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor tensor);
  bool contains(std::string_view name) const;
  /// Throws MissingTensor when absent.
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);
  /// Swaps in a new tensor under an existing name.
  void replace(std::string_view name, Tensor tensor);

  const std::vector<std::pair<std::string, Tensor>>& items() const noexcept { return items_; }
  std::vector<Tensor> tensors() const;
  std::size_t size() const noexcept { return items_.size(); }

  void zero_grad();
  void set_trainable(bool trainable);
  /// FNV-1a over names, shapes and raw bytes; equal iff bitwise identical (modulo hash collisions).
  std::uint64_t fingerprint() const;
  ParameterSet clone() const;
  ParameterSet to(DType dtype) const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// He-style normal, std sqrt(2 / fan_in).
Tensor he_normal(const Shape& shape, std::int64_t fan_in, SeededRng& rng, DType dtype = DType::f32);
/// Xavier/Glorot uniform, bound sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(const Shape& shape, std::int64_t fan_in, std::int64_t fan_out, SeededRng& rng, DType dtype = DType::f32);
Tensor normal_init(const Shape& shape, double stddev, SeededRng& rng, DType dtype = DType::f32);
Tensor uniform_init(const Shape& shape, double lo, double hi, SeededRng& rng, DType dtype = DType::f32);

}  // namespace ctn
