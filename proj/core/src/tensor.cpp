#include "ctn/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace ctn {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape) require(d > 0, ErrorCode::InvalidArgument, "tensor dimensions must be positive, got " + shape_string(shape));
}

}  // namespace

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  check_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  impl->dtype = dtype;
  if (dtype == DType::f32)
    impl->data = std::vector<float>(n, static_cast<float>(value));
  else
    impl->data = std::vector<double>(n, value);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, DType dtype) { return full({}, value, dtype); }

Tensor Tensor::from_vector(Shape shape, std::vector<float> values) {
  check_shape(shape);
  require(static_cast<std::int64_t>(values.size()) == shape_numel(shape), ErrorCode::ShapeMismatch,
          "value count " + std::to_string(values.size()) + " does not fill shape " + shape_string(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->dtype = DType::f32;
  impl->data = std::move(values);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values) {
  check_shape(shape);
  require(static_cast<std::int64_t>(values.size()) == shape_numel(shape), ErrorCode::ShapeMismatch,
          "value count " + std::to_string(values.size()) + " does not fill shape " + shape_string(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->dtype = DType::f64;
  impl->data = std::move(values);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
  if (dtype == DType::f64) return from_vector(std::move(shape), std::vector<double>(values));
  std::vector<float> v(values.begin(), values.end());
  return from_vector(std::move(shape), std::move(v));
}

const Shape& Tensor::shape() const {
  require(defined(), ErrorCode::InvalidArgument, "undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::dim(std::int64_t axis) const {
  const auto r = rank();
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, ErrorCode::IndexOutOfRange, "axis out of range for " + shape_string(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

DType Tensor::dtype() const {
  require(defined(), ErrorCode::InvalidArgument, "undefined tensor");
  return impl_->dtype;
}

bool Tensor::requires_grad() const { return defined() && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  require(defined(), ErrorCode::InvalidArgument, "undefined tensor");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return defined() && impl_->has_grad; }

Tensor Tensor::grad() const {
  require(defined(), ErrorCode::InvalidArgument, "undefined tensor");
  if (!impl_->has_grad) return zeros(impl_->shape, impl_->dtype);
  return dispatch(impl_->dtype, [&]<class T>() {
    return from_vector(impl_->shape, std::get<std::vector<T>>(impl_->grad));
  });
}

void Tensor::zero_grad() {
  if (!has_grad()) return;
  std::visit([](auto& g) { std::fill(g.begin(), g.end(), 0); }, impl_->grad);
}

double Tensor::item() const {
  require(numel() == 1, ErrorCode::ShapeMismatch, "item() needs a single-element tensor, got " + shape_string(shape()));
  return at(0);
}

double Tensor::at(std::int64_t flat_index) const {
  require(flat_index >= 0 && flat_index < numel(), ErrorCode::IndexOutOfRange, "flat index out of range");
  return std::visit([&](const auto& v) { return static_cast<double>(v[static_cast<std::size_t>(flat_index)]); }, impl_->data);
}

std::vector<double> Tensor::to_doubles() const {
  require(defined(), ErrorCode::InvalidArgument, "undefined tensor");
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, impl_->data);
}

Tensor Tensor::to(DType dtype) const {
  require(defined(), ErrorCode::InvalidArgument, "undefined tensor");
  if (dtype == DType::f64) return from_vector(impl_->shape, to_doubles());
  return std::visit([&](const auto& v) { return from_vector(impl_->shape, std::vector<float>(v.begin(), v.end())); },
                    impl_->data);
}

Tensor Tensor::clone() const {
  require(defined(), ErrorCode::InvalidArgument, "undefined tensor");
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

std::span<const std::byte> Tensor::bytes() const {
  require(defined(), ErrorCode::InvalidArgument, "undefined tensor");
  return std::visit([](const auto& v) { return std::as_bytes(std::span(v.data(), v.size())); }, impl_->data);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) return a.defined() == b.defined();
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  const auto x = a.bytes();
  const auto y = b.bytes();
  return x.size() == y.size() && std::memcmp(x.data(), y.data(), x.size()) == 0;
}

}  // namespace ctn
