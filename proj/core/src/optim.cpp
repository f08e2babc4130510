#include "ctn/optim.hpp"

#include <cmath>

#include "ctn/parameters.hpp"

namespace ctn {

// ---- ParameterSet -------------------------------------------------------

Tensor& ParameterSet::add(std::string name, Tensor tensor) {
  require(!contains(name), ErrorCode::InvalidArgument, "duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(true);
  index_.emplace(name, items_.size());
  items_.emplace_back(std::move(name), std::move(tensor));
  return items_.back().second;
}

bool ParameterSet::contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }

const Tensor& ParameterSet::get(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  require(it != index_.end(), ErrorCode::MissingTensor, std::string(name));
  return items_[it->second].second;
}

Tensor& ParameterSet::get(std::string_view name) {
  const auto it = index_.find(std::string(name));
  require(it != index_.end(), ErrorCode::MissingTensor, std::string(name));
  return items_[it->second].second;
}

void ParameterSet::replace(std::string_view name, Tensor tensor) {
  auto& slot = get(name);
  tensor.set_requires_grad(slot.requires_grad());
  slot = std::move(tensor);
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& [name, t] : items_) out.push_back(t);
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

void ParameterSet::set_trainable(bool trainable) {
  for (auto& [name, t] : items_) t.set_requires_grad(trainable);
}

std::uint64_t ParameterSet::fingerprint() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (const auto& [name, t] : items_) {
    feed(name.data(), name.size());
    for (auto d : t.shape()) feed(&d, sizeof d);
    const auto b = t.bytes();
    feed(b.data(), b.size());
  }
  return h;
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& [name, t] : items_) {
    auto& c = out.add(name, t.clone());
    c.set_requires_grad(t.requires_grad());
  }
  return out;
}

ParameterSet ParameterSet::to(DType dtype) const {
  ParameterSet out;
  for (const auto& [name, t] : items_) {
    auto& c = out.add(name, t.to(dtype));
    c.set_requires_grad(t.requires_grad());
  }
  return out;
}

Tensor he_normal(const Shape& shape, std::int64_t fan_in, SeededRng& rng, DType dtype) {
  return normal_init(shape, std::sqrt(2.0 / static_cast<double>(fan_in)), rng, dtype);
}

Tensor xavier_uniform(const Shape& shape, std::int64_t fan_in, std::int64_t fan_out, SeededRng& rng, DType dtype) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_init(shape, -bound, bound, rng, dtype);
}

Tensor normal_init(const Shape& shape, double stddev, SeededRng& rng, DType dtype) {
  Tensor t = Tensor::zeros(shape, dtype);
  dispatch(dtype, [&]<class T>() {
    for (auto& v : t.values<T>()) v = static_cast<T>(rng.normal(0.0, stddev));
  });
  return t;
}

Tensor uniform_init(const Shape& shape, double lo, double hi, SeededRng& rng, DType dtype) {
  Tensor t = Tensor::zeros(shape, dtype);
  dispatch(dtype, [&]<class T>() {
    for (auto& v : t.values<T>()) v = static_cast<T>(rng.uniform(lo, hi));
  });
  return t;
}

// ---- Adam ---------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  require(options_.lr >= 0 && options_.epsilon > 0, ErrorCode::InvalidArgument, "Adam: lr must be >= 0 and epsilon > 0");
  require(options_.beta1 >= 0 && options_.beta1 < 1 && options_.beta2 >= 0 && options_.beta2 < 1, ErrorCode::InvalidArgument,
          "Adam: betas must lie in [0, 1)");
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.shape(), p.dtype()));
    v_.push_back(Tensor::zeros(p.shape(), p.dtype()));
  }
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    dispatch(params_[i].dtype(), [&]<class T>() {
      for (auto g : params_[i].grad_values<T>())
        if (!std::isfinite(static_cast<double>(g)))
          fail(ErrorCode::NonFiniteGradient, "parameter #" + std::to_string(i) + " of shape " +
                                                 shape_string(params_[i].shape()) + " has a non-finite gradient; step rejected");
    });
  }
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    dispatch(p.dtype(), [&]<class T>() {
      auto w = p.values<T>();
      auto g = p.grad_values<T>();
      auto m = m_[i].values<T>();
      auto v = v_[i].values<T>();
      const auto b1 = static_cast<T>(options_.beta1), b2 = static_cast<T>(options_.beta2);
      const auto lr = static_cast<T>(options_.lr), eps = static_cast<T>(options_.epsilon);
      const auto ic1 = static_cast<T>(1.0 / c1), ic2 = static_cast<T>(1.0 / c2);
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = b1 * m[j] + (T(1) - b1) * g[j];
        v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
        if (lr == T(0)) continue;
        const T mhat = m[j] * ic1;
        const T vhat = v[j] * ic2;
        w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    });
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace ctn
