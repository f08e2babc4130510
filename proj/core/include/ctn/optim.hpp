#pragma once

#include <cstdint>
#include <vector>

#include "ctn/tensor.hpp"

namespace ctn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments live in the parameters' dtype.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  /// Applies one update from the parameters' current gradients. Throws
  /// NonFiniteGradient, leaving every parameter and moment untouched, if
  /// any gradient entry is NaN or infinite.
  void step();
  void zero_grad();

  std::int64_t steps() const noexcept { return t_; }
  const AdamOptions& options() const noexcept { return options_; }
  void set_lr(double lr) { options_.lr = lr; }
  const Tensor& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Tensor> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamOptions options_;
  std::int64_t t_ = 0;
};

}  // namespace ctn
