#include "ctn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ctn/autograd.hpp"
#include "ctn/rng.hpp"
#include "gemm.hpp"

namespace ctn {

namespace {

using Index = std::int64_t;

void same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  require(a.dtype() == b.dtype(), ErrorCode::DTypeMismatch, std::string(op) + ": operands have different dtypes");
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
          std::string(op) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  same_dtype(a, b, op);
}

void record(const char* op, std::vector<Tensor> inputs, Tensor& out, std::function<void()> fn) {
  active_record()->push(op, std::move(inputs), out, std::move(fn));
}

// Elementwise unary op with derivative expressed through (x, y).
template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xs = x.values<T>();
    auto ys = out.values<T>();
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = static_cast<T>(fwd(static_cast<double>(xs[i])));
  });
  if (should_record({&x})) {
    record(name, {x}, out, [x, out, deriv]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto xs = x.values<T>();
        auto ys = out.values<T>();
        auto gy = out.grad_values<T>();
        auto gx = x.grad_values<T>();
        for (std::size_t i = 0; i < xs.size(); ++i)
          gx[i] += gy[i] * static_cast<T>(deriv(static_cast<double>(xs[i]), static_cast<double>(ys[i])));
      });
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.values<T>(), y = b.values<T>();
    auto z = out.values<T>();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  });
  if (should_record({&a, &b})) {
    record("add", {a, b}, out, [a, b, out]() mutable {
      dispatch(a.dtype(), [&]<class T>() {
        auto g = out.grad_values<T>();
        if (a.requires_grad()) {
          auto ga = a.grad_values<T>();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
          auto gb = b.grad_values<T>();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      });
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.values<T>(), y = b.values<T>();
    auto z = out.values<T>();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
  });
  if (should_record({&a, &b})) {
    record("sub", {a, b}, out, [a, b, out]() mutable {
      dispatch(a.dtype(), [&]<class T>() {
        auto g = out.grad_values<T>();
        if (a.requires_grad()) {
          auto ga = a.grad_values<T>();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
          auto gb = b.grad_values<T>();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      });
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.values<T>(), y = b.values<T>();
    auto z = out.values<T>();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
  });
  if (should_record({&a, &b})) {
    record("mul", {a, b}, out, [a, b, out]() mutable {
      dispatch(a.dtype(), [&]<class T>() {
        auto g = out.grad_values<T>();
        auto x = a.values<T>(), y = b.values<T>();
        if (a.requires_grad()) {
          auto ga = a.grad_values<T>();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        }
        if (b.requires_grad()) {
          auto gb = b.grad_values<T>();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
        }
      });
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xs = x.values<T>();
    auto ys = out.values<T>();
    const auto f = static_cast<T>(factor);
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] * f;
  });
  if (should_record({&x})) {
    record("scale", {x}, out, [x, out, factor]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto g = out.grad_values<T>();
        auto gx = x.grad_values<T>();
        const auto f = static_cast<T>(factor);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * f;
      });
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  same_dtype(x, bias, "add_bias");
  require(bias.rank() == 1 && x.rank() >= 1 && x.dim(-1) == bias.dim(0), ErrorCode::ShapeMismatch,
          "add_bias: bias " + shape_string(bias.shape()) + " does not match last axis of " + shape_string(x.shape()));
  const Index n = bias.dim(0);
  const Index rows = x.numel() / n;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xs = x.values<T>();
    auto bs = bias.values<T>();
    auto ys = out.values<T>();
    for (Index r = 0; r < rows; ++r)
      for (Index j = 0; j < n; ++j) ys[r * n + j] = xs[r * n + j] + bs[j];
  });
  if (should_record({&x, &bias})) {
    record("add_bias", {x, bias}, out, [x, bias, out, n, rows]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto g = out.grad_values<T>();
        if (x.requires_grad()) {
          auto gx = x.grad_values<T>();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (bias.requires_grad()) {
          auto gb = bias.grad_values<T>();
          for (Index r = 0; r < rows; ++r)
            for (Index j = 0; j < n; ++j) gb[j] += g[r * n + j];
        }
      });
    });
  }
  return out;
}

Tensor add_broadcast_batch(const Tensor& x, const Tensor& y) {
  same_dtype(x, y, "add_broadcast_batch");
  require(x.rank() == y.rank() + 1 && Shape(x.shape().begin() + 1, x.shape().end()) == y.shape(), ErrorCode::ShapeMismatch,
          "add_broadcast_batch: " + shape_string(y.shape()) + " is not the per-batch shape of " + shape_string(x.shape()));
  const Index inner = y.numel();
  const Index batch = x.dim(0);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xs = x.values<T>();
    auto ys = y.values<T>();
    auto zs = out.values<T>();
    for (Index b = 0; b < batch; ++b)
      for (Index i = 0; i < inner; ++i) zs[b * inner + i] = xs[b * inner + i] + ys[i];
  });
  if (should_record({&x, &y})) {
    record("add_broadcast_batch", {x, y}, out, [x, y, out, inner, batch]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto g = out.grad_values<T>();
        if (x.requires_grad()) {
          auto gx = x.grad_values<T>();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (y.requires_grad()) {
          auto gy = y.grad_values<T>();
          for (Index b = 0; b < batch; ++b)
            for (Index i = 0; i < inner; ++i) gy[i] += g[b * inner + i];
        }
      });
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  same_dtype(a, b, "matmul");
  require(a.rank() == 2 && b.rank() == 2, ErrorCode::ShapeMismatch, "matmul needs 2-D operands");
  const Index m = transpose_a ? a.dim(1) : a.dim(0);
  const Index k = transpose_a ? a.dim(0) : a.dim(1);
  const Index kb = transpose_b ? b.dim(1) : b.dim(0);
  const Index n = transpose_b ? b.dim(0) : b.dim(1);
  require(k == kb, ErrorCode::ShapeMismatch,
          "matmul: inner dimensions differ for " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  Tensor out = Tensor::zeros({m, n}, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    detail::gemm<T>(transpose_a, transpose_b, m, n, k, a.values<T>().data(), a.dim(1), b.values<T>().data(), b.dim(1),
                    out.values<T>().data(), n, false);
  });
  if (should_record({&a, &b})) {
    record("matmul", {a, b}, out, [a, b, out, m, n, k, transpose_a, transpose_b]() mutable {
      dispatch(a.dtype(), [&]<class T>() {
        const T* g = out.grad_values<T>().data();
        if (a.requires_grad()) {
          T* ga = a.grad_values<T>().data();
          // dA = G op(B)^T, stored back in A's layout.
          if (!transpose_a)
            detail::gemm<T>(false, !transpose_b, m, k, n, g, n, b.values<T>().data(), b.dim(1), ga, a.dim(1), true);
          else
            detail::gemm<T>(transpose_b, true, k, m, n, b.values<T>().data(), b.dim(1), g, n, ga, a.dim(1), true);
        }
        if (b.requires_grad()) {
          T* gb = b.grad_values<T>().data();
          if (!transpose_b)
            detail::gemm<T>(!transpose_a, false, k, n, m, a.values<T>().data(), a.dim(1), g, n, gb, b.dim(1), true);
          else
            detail::gemm<T>(true, transpose_a, n, k, m, g, n, a.values<T>().data(), a.dim(1), gb, b.dim(1), true);
        }
      });
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  same_dtype(x, weight, "linear");
  require(weight.rank() == 2 && x.rank() >= 1 && x.dim(-1) == weight.dim(1), ErrorCode::ShapeMismatch,
          "linear: input " + shape_string(x.shape()) + " does not match weight " + shape_string(weight.shape()));
  if (bias.defined()) {
    same_dtype(x, bias, "linear");
    require(bias.rank() == 1 && bias.dim(0) == weight.dim(0), ErrorCode::ShapeMismatch, "linear: bias width mismatch");
  }
  const Index in = weight.dim(1);
  const Index outw = weight.dim(0);
  const Index rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outw;
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    T* y = out.values<T>().data();
    detail::gemm<T>(false, true, rows, outw, in, x.values<T>().data(), in, weight.values<T>().data(), in, y, outw, false);
    if (bias.defined()) {
      auto bs = bias.values<T>();
      for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < outw; ++j) y[r * outw + j] += bs[j];
    }
  });
  if (should_record({&x, &weight, &bias})) {
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    record("linear", std::move(inputs), out, [x, weight, bias, out, in, outw, rows]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        const T* g = out.grad_values<T>().data();
        if (x.requires_grad())
          detail::gemm<T>(false, false, rows, in, outw, g, outw, weight.values<T>().data(), in, x.grad_values<T>().data(), in,
                          true);
        if (weight.requires_grad())
          detail::gemm<T>(true, false, outw, in, rows, g, outw, x.values<T>().data(), in, weight.grad_values<T>().data(), in,
                          true);
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad_values<T>();
          for (Index r = 0; r < rows; ++r)
            for (Index j = 0; j < outw; ++j) gb[j] += g[r * outw + j];
        }
      });
    });
  }
  return out;
}

Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::int64_t dilation, Padding padding) {
  same_dtype(input, kernel, "conv1d");
  require(input.rank() == 2 || input.rank() == 3, ErrorCode::ShapeMismatch, "conv1d: input must be [C, T] or [B, C, T]");
  require(kernel.rank() == 3, ErrorCode::ShapeMismatch, "conv1d: kernel must be [C_out, C_in, k]");
  require(dilation >= 1, ErrorCode::InvalidArgument, "conv1d: dilation must be >= 1");
  const bool batched = input.rank() == 3;
  const Index batch = batched ? input.dim(0) : 1;
  const Index cin = input.dim(-2);
  const Index t_in = input.dim(-1);
  const Index cout = kernel.dim(0);
  const Index k = kernel.dim(2);
  require(kernel.dim(1) == cin, ErrorCode::ShapeMismatch,
          "conv1d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, input has " + std::to_string(cin));
  if (bias.defined()) {
    same_dtype(input, bias, "conv1d");
    require(bias.rank() == 1 && bias.dim(0) == cout, ErrorCode::ShapeMismatch, "conv1d: bias width mismatch");
  }
  const Index span = (k - 1) * dilation;
  Index t_out = t_in;
  Index pad_left = 0;
  if (padding == Padding::valid) {
    require(span + 1 <= t_in, ErrorCode::InvalidArgument,
            "conv1d: receptive field " + std::to_string(span + 1) + " exceeds input length " + std::to_string(t_in));
    t_out = t_in - span;
  } else {
    pad_left = ((k - 1 + 1) / 2) * dilation;
  }
  const Index rows = cin * k;
  const Index cols = batch * t_out;

  Shape out_shape = batched ? Shape{batch, cout, t_out} : Shape{cout, t_out};
  Tensor out = Tensor::zeros(out_shape, input.dtype());
  Tensor col = Tensor::zeros({rows, cols}, input.dtype());

  dispatch(input.dtype(), [&]<class T>() {
    auto x = input.values<T>();
    auto c = col.values<T>();
    for (Index ci = 0; ci < cin; ++ci)
      for (Index j = 0; j < k; ++j) {
        T* crow = c.data() + (ci * k + j) * cols;
        const Index shift = j * dilation - pad_left;
        for (Index b = 0; b < batch; ++b) {
          const T* xrow = x.data() + (b * cin + ci) * t_in;
          T* dst = crow + b * t_out;
          const Index lo = std::max<Index>(0, -shift);
          const Index hi = std::min<Index>(t_out, t_in - shift);
          for (Index t = lo; t < hi; ++t) dst[t] = xrow[t + shift];
        }
      }
    std::vector<T> y(static_cast<std::size_t>(cout * cols));
    detail::gemm<T>(false, false, cout, cols, rows, kernel.values<T>().data(), rows, c.data(), cols, y.data(), cols, false);
    auto o = out.values<T>();
    const T* bs = bias.defined() ? bias.values<T>().data() : nullptr;
    for (Index b = 0; b < batch; ++b)
      for (Index co = 0; co < cout; ++co) {
        const T bv = bs ? bs[co] : T(0);
        const T* src = y.data() + co * cols + b * t_out;
        T* dst = o.data() + (b * cout + co) * t_out;
        for (Index t = 0; t < t_out; ++t) dst[t] = src[t] + bv;
      }
  });

  if (should_record({&input, &kernel, &bias})) {
    std::vector<Tensor> inputs{input, kernel};
    if (bias.defined()) inputs.push_back(bias);
    record("conv1d", std::move(inputs), out,
           [input, kernel, bias, out, col, batch, cin, cout, k, t_in, t_out, rows, cols, dilation, pad_left]() mutable {
             dispatch(input.dtype(), [&]<class T>() {
               auto go = out.grad_values<T>();
               std::vector<T> gy(static_cast<std::size_t>(cout * cols));
               for (Index b = 0; b < batch; ++b)
                 for (Index co = 0; co < cout; ++co)
                   std::copy_n(go.data() + (b * cout + co) * t_out, t_out, gy.data() + co * cols + b * t_out);
               if (kernel.requires_grad())
                 detail::gemm<T>(false, true, cout, rows, cols, gy.data(), cols, col.values<T>().data(), cols,
                                 kernel.grad_values<T>().data(), rows, true);
               if (bias.defined() && bias.requires_grad()) {
                 auto gb = bias.grad_values<T>();
                 for (Index co = 0; co < cout; ++co) {
                   T s = 0;
                   for (Index i = 0; i < cols; ++i) s += gy[co * cols + i];
                   gb[co] += s;
                 }
               }
               if (input.requires_grad()) {
                 std::vector<T> gc(static_cast<std::size_t>(rows * cols));
                 detail::gemm<T>(true, false, rows, cols, cout, kernel.values<T>().data(), rows, gy.data(), cols, gc.data(),
                                 cols, false);
                 auto gx = input.grad_values<T>();
                 for (Index ci = 0; ci < cin; ++ci)
                   for (Index j = 0; j < k; ++j) {
                     const T* crow = gc.data() + (ci * k + j) * cols;
                     const Index shift = j * dilation - pad_left;
                     for (Index b = 0; b < batch; ++b) {
                       T* xrow = gx.data() + (b * cin + ci) * t_in;
                       const T* src = crow + b * t_out;
                       const Index lo = std::max<Index>(0, -shift);
                       const Index hi = std::min<Index>(t_out, t_in - shift);
                       for (Index t = lo; t < hi; ++t) xrow[t + shift] += src[t];
                     }
                   }
               }
             });
           });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double epsilon) {
  same_dtype(x, gamma, "layer_norm");
  same_dtype(x, beta, "layer_norm");
  require(epsilon > 0, ErrorCode::InvalidArgument, "layer_norm: epsilon must be positive");
  const Index d = x.dim(-1);
  require(gamma.shape() == Shape{d} && beta.shape() == Shape{d}, ErrorCode::ShapeMismatch,
          "layer_norm: gamma/beta must have shape [" + std::to_string(d) + "]");
  const Index rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  Tensor xhat = Tensor::zeros(x.shape(), x.dtype());
  std::vector<double> rstd(static_cast<std::size_t>(rows));
  dispatch(x.dtype(), [&]<class T>() {
    auto xs = x.values<T>();
    auto g = gamma.values<T>();
    auto bt = beta.values<T>();
    auto ys = out.values<T>();
    auto xh = xhat.values<T>();
    for (Index r = 0; r < rows; ++r) {
      const T* row = xs.data() + r * d;
      double mu = 0;
      for (Index j = 0; j < d; ++j) mu += row[j];
      mu /= static_cast<double>(d);
      double var = 0;
      for (Index j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= static_cast<double>(d);
      const double rs = 1.0 / std::sqrt(var + epsilon);
      rstd[static_cast<std::size_t>(r)] = rs;
      for (Index j = 0; j < d; ++j) {
        const T h = static_cast<T>((row[j] - mu) * rs);
        xh[r * d + j] = h;
        ys[r * d + j] = g[j] * h + bt[j];
      }
    }
  });
  if (should_record({&x, &gamma, &beta})) {
    record("layer_norm", {x, gamma, beta}, out, [x, gamma, beta, out, xhat, rstd = std::move(rstd), d, rows]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto gy = out.grad_values<T>();
        auto xh = xhat.values<T>();
        auto g = gamma.values<T>();
        if (gamma.requires_grad()) {
          auto gg = gamma.grad_values<T>();
          for (Index r = 0; r < rows; ++r)
            for (Index j = 0; j < d; ++j) gg[j] += gy[r * d + j] * xh[r * d + j];
        }
        if (beta.requires_grad()) {
          auto gb = beta.grad_values<T>();
          for (Index r = 0; r < rows; ++r)
            for (Index j = 0; j < d; ++j) gb[j] += gy[r * d + j];
        }
        if (x.requires_grad()) {
          auto gx = x.grad_values<T>();
          for (Index r = 0; r < rows; ++r) {
            double mean_dh = 0, mean_dh_h = 0;
            for (Index j = 0; j < d; ++j) {
              const double dh = static_cast<double>(gy[r * d + j]) * g[j];
              mean_dh += dh;
              mean_dh_h += dh * xh[r * d + j];
            }
            mean_dh /= static_cast<double>(d);
            mean_dh_h /= static_cast<double>(d);
            const double rs = rstd[static_cast<std::size_t>(r)];
            for (Index j = 0; j < d; ++j) {
              const double dh = static_cast<double>(gy[r * d + j]) * g[j];
              gx[r * d + j] += static_cast<T>(rs * (dh - mean_dh - xh[r * d + j] * mean_dh_h));
            }
          }
        }
      });
    });
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  const Index d = x.dim(-1);
  const Index rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xs = x.values<T>();
    auto ys = out.values<T>();
    for (Index r = 0; r < rows; ++r) {
      const T* row = xs.data() + r * d;
      const T mx = *std::max_element(row, row + d);
      double s = 0;
      for (Index j = 0; j < d; ++j) s += std::exp(static_cast<double>(row[j] - mx));
      for (Index j = 0; j < d; ++j) ys[r * d + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / s);
    }
  });
  if (should_record({&x})) {
    record("softmax", {x}, out, [x, out, d, rows]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto ys = out.values<T>();
        auto gy = out.grad_values<T>();
        auto gx = x.grad_values<T>();
        for (Index r = 0; r < rows; ++r) {
          double dot = 0;
          for (Index j = 0; j < d; ++j) dot += static_cast<double>(gy[r * d + j]) * ys[r * d + j];
          for (Index j = 0; j < d; ++j) gx[r * d + j] += static_cast<T>(ys[r * d + j] * (gy[r * d + j] - dot));
        }
      });
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
  require(logits.rank() == 1 || logits.rank() == 2, ErrorCode::ShapeMismatch, "softmax_cross_entropy: logits must be [V] or [N, V]");
  const Index v = logits.dim(-1);
  const Index rows = logits.rank() == 1 ? 1 : logits.dim(0);
  require(static_cast<Index>(targets.size()) == rows, ErrorCode::ShapeMismatch,
          "softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) + " rows");
  require(rows > 0, ErrorCode::EmptyInput, "softmax_cross_entropy: no rows");
  for (auto t : targets)
    require(t >= 0 && t < v, ErrorCode::IndexOutOfRange,
            "softmax_cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(v) + ")");
  Tensor out = Tensor::zeros({}, logits.dtype());
  Tensor probs = Tensor::zeros({rows, v}, logits.dtype());
  std::vector<std::int64_t> tgt(targets.begin(), targets.end());
  dispatch(logits.dtype(), [&]<class T>() {
    auto xs = logits.values<T>();
    auto ps = probs.values<T>();
    double total = 0;
    for (Index r = 0; r < rows; ++r) {
      const T* row = xs.data() + r * v;
      const double mx = *std::max_element(row, row + v);
      double s = 0;
      for (Index j = 0; j < v; ++j) s += std::exp(row[j] - mx);
      const double lse = mx + std::log(s);
      for (Index j = 0; j < v; ++j) ps[r * v + j] = static_cast<T>(std::exp(row[j] - lse));
      // Clamp guards the -0.0 / tiny-negative rounding case at saturation.
      total += std::max(0.0, lse - static_cast<double>(row[tgt[static_cast<std::size_t>(r)]]));
    }
    out.values<T>()[0] = static_cast<T>(total / static_cast<double>(rows));
  });
  if (should_record({&logits})) {
    record("softmax_cross_entropy", {logits}, out, [logits, out, probs, tgt = std::move(tgt), rows, v]() mutable {
      dispatch(logits.dtype(), [&]<class T>() {
        const T g = out.grad_values<T>()[0] / static_cast<T>(rows);
        auto ps = probs.values<T>();
        auto gx = logits.grad_values<T>();
        for (Index r = 0; r < rows; ++r) {
          for (Index j = 0; j < v; ++j) gx[r * v + j] += g * ps[r * v + j];
          gx[r * v + tgt[static_cast<std::size_t>(r)]] -= g;
        }
      });
    });
  }
  return out;
}

Tensor sigmoid_bce(const Tensor& logits, const Tensor& targets) {
  same_shape(logits, targets, "sigmoid_bce");
  const Index n = logits.numel();
  Tensor out = Tensor::zeros({}, logits.dtype());
  dispatch(logits.dtype(), [&]<class T>() {
    auto xs = logits.values<T>();
    auto ys = targets.values<T>();
    double total = 0;
    for (Index i = 0; i < n; ++i) {
      const double x = xs[i];
      total += std::max(x, 0.0) - x * ys[i] + std::log1p(std::exp(-std::abs(x)));
    }
    out.values<T>()[0] = static_cast<T>(total / static_cast<double>(n));
  });
  if (should_record({&logits})) {
    record("sigmoid_bce", {logits}, out, [logits, targets, out, n]() mutable {
      dispatch(logits.dtype(), [&]<class T>() {
        const double g = static_cast<double>(out.grad_values<T>()[0]) / static_cast<double>(n);
        auto xs = logits.values<T>();
        auto ys = targets.values<T>();
        auto gx = logits.grad_values<T>();
        for (Index i = 0; i < n; ++i) {
          const double x = xs[i];
          const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
          gx[i] += static_cast<T>(g * (s - ys[i]));
        }
      });
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> rows) {
  require(table.rank() >= 2, ErrorCode::ShapeMismatch, "gather_rows: table must have rank >= 2");
  const Index d = table.dim(-1);
  const Index nrows = table.numel() / d;
  require(!rows.empty(), ErrorCode::EmptyInput, "gather_rows: no rows requested");
  for (auto r : rows)
    require(r >= 0 && r < nrows, ErrorCode::IndexOutOfRange,
            "gather_rows: row " + std::to_string(r) + " outside [0, " + std::to_string(nrows) + ")");
  const Index n = static_cast<Index>(rows.size());
  Tensor out = Tensor::zeros({n, d}, table.dtype());
  std::vector<std::int64_t> idx(rows.begin(), rows.end());
  dispatch(table.dtype(), [&]<class T>() {
    auto src = table.values<T>();
    auto dst = out.values<T>();
    for (Index i = 0; i < n; ++i) std::copy_n(src.data() + idx[static_cast<std::size_t>(i)] * d, d, dst.data() + i * d);
  });
  if (should_record({&table})) {
    record("gather_rows", {table}, out, [table, out, idx = std::move(idx), n, d]() mutable {
      dispatch(table.dtype(), [&]<class T>() {
        auto g = out.grad_values<T>();
        auto gt = table.grad_values<T>();
        for (Index i = 0; i < n; ++i) {
          T* dst = gt.data() + idx[static_cast<std::size_t>(i)] * d;
          const T* src = g.data() + i * d;
          for (Index j = 0; j < d; ++j) dst[j] += src[j];
        }
      });
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_numel(shape) == x.numel(), ErrorCode::ShapeMismatch,
          "reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  Tensor out = dispatch(x.dtype(), [&]<class T>() {
    auto xs = x.values<T>();
    return Tensor::from_vector(shape, std::vector<T>(xs.begin(), xs.end()));
  });
  if (should_record({&x})) {
    record("reshape", {x}, out, [x, out]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto g = out.grad_values<T>();
        auto gx = x.grad_values<T>();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      });
    });
  }
  return out;
}

Tensor mean_last(const Tensor& x) {
  require(x.rank() >= 2, ErrorCode::ShapeMismatch, "mean_last: input must have rank >= 2");
  const Index d = x.dim(-1);
  const Index rows = x.numel() / d;
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  Tensor out = Tensor::zeros(shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xs = x.values<T>();
    auto ys = out.values<T>();
    for (Index r = 0; r < rows; ++r) {
      T s = 0;
      for (Index j = 0; j < d; ++j) s += xs[r * d + j];
      ys[r] = s / static_cast<T>(d);
    }
  });
  if (should_record({&x})) {
    record("mean_last", {x}, out, [x, out, d, rows]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto g = out.grad_values<T>();
        auto gx = x.grad_values<T>();
        for (Index r = 0; r < rows; ++r) {
          const T v = g[r] / static_cast<T>(d);
          for (Index j = 0; j < d; ++j) gx[r * d + j] += v;
        }
      });
    });
  }
  return out;
}

Tensor repeat_last(const Tensor& x, std::int64_t times) {
  require(times >= 1, ErrorCode::InvalidArgument, "repeat_last: times must be >= 1");
  Shape shape = x.shape();
  shape.push_back(times);
  const Index rows = x.numel();
  Tensor out = Tensor::zeros(shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xs = x.values<T>();
    auto ys = out.values<T>();
    for (Index r = 0; r < rows; ++r) std::fill_n(ys.data() + r * times, times, xs[r]);
  });
  if (should_record({&x})) {
    record("repeat_last", {x}, out, [x, out, rows, times]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto g = out.grad_values<T>();
        auto gx = x.grad_values<T>();
        for (Index r = 0; r < rows; ++r) {
          T s = 0;
          for (Index j = 0; j < times; ++j) s += g[r * times + j];
          gx[r] += s;
        }
      });
    });
  }
  return out;
}

Tensor detach(const Tensor& x) {
  Tensor out = x.clone();
  out.set_requires_grad(false);
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::zeros({}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xs = x.values<T>();
    double s = 0;
    for (auto v : xs) s += v;
    out.values<T>()[0] = static_cast<T>(s);
  });
  if (should_record({&x})) {
    record("sum", {x}, out, [x, out]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        const T g = out.grad_values<T>()[0];
        for (auto& v : x.grad_values<T>()) v += g;
      });
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mse(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "mse");
  const Index n = a.numel();
  Tensor out = Tensor::zeros({}, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.values<T>(), y = b.values<T>();
    double s = 0;
    for (Index i = 0; i < n; ++i) {
      const double d = static_cast<double>(x[i]) - y[i];
      s += d * d;
    }
    out.values<T>()[0] = static_cast<T>(s / static_cast<double>(n));
  });
  if (should_record({&a, &b})) {
    record("mse", {a, b}, out, [a, b, out, n]() mutable {
      dispatch(a.dtype(), [&]<class T>() {
        const T g = out.grad_values<T>()[0] * T(2) / static_cast<T>(n);
        auto x = a.values<T>(), y = b.values<T>();
        if (a.requires_grad()) {
          auto ga = a.grad_values<T>();
          for (Index i = 0; i < n; ++i) ga[i] += g * (x[i] - y[i]);
        }
        if (b.requires_grad()) {
          auto gb = b.grad_values<T>();
          for (Index i = 0; i < n; ++i) gb[i] -= g * (x[i] - y[i]);
        }
      });
    });
  }
  return out;
}

Tensor mean_row_sq_dist(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "mean_row_sq_dist");
  const Index rows = a.numel() / a.dim(-1);
  return scale(mse(a, b), static_cast<double>(a.numel()) / static_cast<double>(rows));
}

Tensor dropout(const Tensor& x, double p, SeededRng& rng) {
  require(p >= 0 && p < 1, ErrorCode::InvalidArgument, "dropout: p must lie in [0, 1)");
  if (p == 0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  const Index n = x.numel();
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(n));
  for (auto& k : keep) k = rng.uniform() >= p ? 1 : 0;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xs = x.values<T>();
    auto ys = out.values<T>();
    const auto s = static_cast<T>(keep_scale);
    for (Index i = 0; i < n; ++i) ys[i] = keep[static_cast<std::size_t>(i)] ? xs[i] * s : T(0);
  });
  if (should_record({&x})) {
    record("dropout", {x}, out, [x, out, keep = std::move(keep), keep_scale, n]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto g = out.grad_values<T>();
        auto gx = x.grad_values<T>();
        const auto s = static_cast<T>(keep_scale);
        for (Index i = 0; i < n; ++i)
          if (keep[static_cast<std::size_t>(i)]) gx[i] += g[i] * s;
      });
    });
  }
  return out;
}

}  // namespace ctn
