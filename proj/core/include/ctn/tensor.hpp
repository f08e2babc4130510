#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "ctn/error.hpp"

namespace ctn {

/// Element type of a tensor. Training runs in f32; f64 exists so gradient
/// checks have headroom beyond single-precision rounding.
enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Invokes `f.template operator()<T>()` with T matching `dtype`.
template <class F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::f64) return f.template operator()<double>();
  return f.template operator()<float>();
}

namespace detail {

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  Buffer data;
  Buffer grad;
  bool has_grad = false;
  bool requires_grad = false;
  // Position of the producing entry in its record; -1 for leaves.
  std::int64_t producer = -1;
  std::uint64_t record_id = 0;
};

}  // namespace detail

/// Shared handle to a dense row-major tensor. Copies of a Tensor alias the
/// same storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor scalar(double value, DType dtype = DType::f32);
  static Tensor from_vector(Shape shape, std::vector<float> values);
  static Tensor from_vector(Shape shape, std::vector<double> values);
  static Tensor from_values(Shape shape, std::initializer_list<double> values, DType dtype = DType::f32);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t rank() const { return static_cast<std::int64_t>(shape().size()); }
  /// Size of axis `axis`; negative values count from the back.
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const { return shape_numel(shape()); }
  DType dtype() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  template <class T>
  std::span<T> values();
  template <class T>
  std::span<const T> values() const;

  /// Gradient buffer; allocated as zeros on first access.
  template <class T>
  std::span<T> grad_values() const;
  bool has_grad() const;
  /// Gradient as a standalone tensor (zeros when no gradient reached it).
  Tensor grad() const;
  void zero_grad();

  double item() const;
  double at(std::int64_t flat_index) const;
  std::vector<double> to_doubles() const;
  Tensor to(DType dtype) const;
  Tensor clone() const;
  /// Raw little-endian element bytes, for hashing and bitwise comparison.
  std::span<const std::byte> bytes() const;

  detail::TensorImpl* impl() const noexcept { return impl_.get(); }
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);

template <class T>
std::span<T> Tensor::values() {
  require(defined(), ErrorCode::InvalidArgument, "undefined tensor");
  require(impl_->dtype == dtype_of<T>(), ErrorCode::DTypeMismatch, "values<T>() does not match tensor dtype");
  auto& v = std::get<std::vector<T>>(impl_->data);
  return {v.data(), v.size()};
}

template <class T>
std::span<const T> Tensor::values() const {
  require(defined(), ErrorCode::InvalidArgument, "undefined tensor");
  require(impl_->dtype == dtype_of<T>(), ErrorCode::DTypeMismatch, "values<T>() does not match tensor dtype");
  const auto& v = std::get<std::vector<T>>(impl_->data);
  return {v.data(), v.size()};
}

template <class T>
std::span<T> Tensor::grad_values() const {
  require(defined(), ErrorCode::InvalidArgument, "undefined tensor");
  require(impl_->dtype == dtype_of<T>(), ErrorCode::DTypeMismatch, "grad_values<T>() does not match tensor dtype");
  if (!impl_->has_grad) {
    impl_->grad = std::vector<T>(static_cast<std::size_t>(numel()), T(0));
    impl_->has_grad = true;
  }
  auto& g = std::get<std::vector<T>>(impl_->grad);
  return {g.data(), g.size()};
}

}  // namespace ctn
