#include <cmath>
#include <limits>

#include "ctn/autograd.hpp"
#include "ctn/ops.hpp"
#include "gemm.hpp"

namespace ctn {

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t heads,
                            std::span<const std::uint8_t> key_valid, Tensor* probs_out) {
  using Index = std::int64_t;
  require(q.rank() == 3 && q.shape() == k.shape() && q.shape() == v.shape(), ErrorCode::ShapeMismatch,
          "attention: q, k, v must share a [B, L, D] shape");
  require(q.dtype() == k.dtype() && q.dtype() == v.dtype(), ErrorCode::DTypeMismatch, "attention: dtype mismatch");
  const Index batch = q.dim(0), len = q.dim(1), width = q.dim(2);
  require(heads >= 1 && width % heads == 0, ErrorCode::InvalidArgument, "attention: width not divisible by heads");
  require(static_cast<Index>(key_valid.size()) == batch * len, ErrorCode::ShapeMismatch, "attention: key mask size mismatch");
  const Index dk = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  Tensor out = Tensor::zeros(q.shape(), q.dtype());
  Tensor probs = Tensor::zeros({batch, heads, len, len}, q.dtype());
  std::vector<std::uint8_t> valid(key_valid.begin(), key_valid.end());

  dispatch(q.dtype(), [&]<class T>() {
    const T* qs = q.values<T>().data();
    const T* ks = k.values<T>().data();
    const T* vs = v.values<T>().data();
    T* os = out.values<T>().data();
    T* ps = probs.values<T>().data();
    for (Index b = 0; b < batch; ++b) {
      const std::uint8_t* mask = valid.data() + b * len;
      for (Index h = 0; h < heads; ++h) {
        const Index off = b * len * width + h * dk;
        T* p = ps + (b * heads + h) * len * len;
        detail::gemm<T>(false, true, len, len, dk, qs + off, width, ks + off, width, p, len, false);
        for (Index i = 0; i < len; ++i) {
          T* row = p + i * len;
          double mx = -std::numeric_limits<double>::infinity();
          for (Index j = 0; j < len; ++j)
            if (mask[j]) mx = std::max(mx, static_cast<double>(row[j]) * scale);
          double s = 0;
          for (Index j = 0; j < len; ++j) {
            const double e = mask[j] ? std::exp(static_cast<double>(row[j]) * scale - mx) : 0.0;
            row[j] = static_cast<T>(e);
            s += e;
          }
          const double inv = s > 0 ? 1.0 / s : 0.0;
          for (Index j = 0; j < len; ++j) row[j] = static_cast<T>(row[j] * inv);
        }
        detail::gemm<T>(false, false, len, dk, len, p, len, vs + off, width, os + off, width, false);
      }
    }
  });

  if (probs_out != nullptr) *probs_out = probs.clone();

  if (should_record({&q, &k, &v})) {
    active_record()->push("multi_head_attention", {q, k, v}, out, [q, k, v, out, probs, batch, len, width, heads, dk, scale]() mutable {
      dispatch(q.dtype(), [&]<class T>() {
        const T* qs = q.values<T>().data();
        const T* ks = k.values<T>().data();
        const T* vs = v.values<T>().data();
        const T* go = out.grad_values<T>().data();
        const T* ps = probs.values<T>().data();
        T* gq = q.requires_grad() ? q.grad_values<T>().data() : nullptr;
        T* gk = k.requires_grad() ? k.grad_values<T>().data() : nullptr;
        T* gv = v.requires_grad() ? v.grad_values<T>().data() : nullptr;
        std::vector<T> dp(static_cast<std::size_t>(len * len));
        for (Index b = 0; b < batch; ++b)
          for (Index h = 0; h < heads; ++h) {
            const Index off = b * len * width + h * dk;
            const T* p = ps + (b * heads + h) * len * len;
            if (gv) detail::gemm<T>(true, false, len, dk, len, p, len, go + off, width, gv + off, width, true);
            if (!gq && !gk) continue;
            detail::gemm<T>(false, true, len, len, dk, go + off, width, vs + off, width, dp.data(), len, false);
            for (Index i = 0; i < len; ++i) {
              double dot = 0;
              for (Index j = 0; j < len; ++j) dot += static_cast<double>(dp[i * len + j]) * p[i * len + j];
              for (Index j = 0; j < len; ++j)
                dp[i * len + j] = static_cast<T>(p[i * len + j] * (dp[i * len + j] - dot) * scale);
            }
            if (gq) detail::gemm<T>(false, false, len, dk, len, dp.data(), len, ks + off, width, gq + off, width, true);
            if (gk) detail::gemm<T>(true, false, len, dk, len, dp.data(), len, qs + off, width, gk + off, width, true);
          }
      });
    });
  }
  return out;
}

}  // namespace ctn
