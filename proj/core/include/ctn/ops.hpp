#pragma once

#include <cstdint>
#include <span>

#include "ctn/tensor.hpp"

namespace ctn {

class SeededRng;

enum class Padding { same, valid };

// Differentiable primitives. Every op records itself on the active Record
// when at least one input requires a gradient; otherwise it is a plain
// forward computation. All inputs of one op must share a dtype.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// x[..., n] + bias[n]
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x[B, ...] + y[...], y shared across the leading axis.
Tensor add_broadcast_batch(const Tensor& x, const Tensor& y);

/// op(a)[m, k] * op(b)[k, n] for 2-D operands.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);
/// x[..., in] * weight[out, in]^T (+ bias[out]).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

/// 1-D convolution over input [C_in, T] or [B, C_in, T] with kernel
/// [C_out, C_in, k]. "same" padding puts ceil((k-1)/2) taps of zeros on the
/// left and floor((k-1)/2) on the right, each tap spanning `dilation` samples.
Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::int64_t dilation, Padding padding);

Tensor relu(const Tensor& x);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Normalizes each last-axis slice with its population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double epsilon = 1e-5);
/// Softmax over the last axis.
Tensor softmax(const Tensor& x);

/// Mean over rows of -log softmax(logits[i])[targets[i]] for logits [N, V]
/// (a 1-D logits vector is treated as a single row).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets);
/// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets.
Tensor sigmoid_bce(const Tensor& logits, const Tensor& targets);

/// Rows of `table` (leading axes flattened) selected by `rows`; result
/// [rows.size(), d]. Gradients scatter-add back into the table.
Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> rows);

Tensor reshape(const Tensor& x, Shape shape);
/// Mean over the last axis.
Tensor mean_last(const Tensor& x);
/// Appends an axis of length `times` holding copies of x.
Tensor repeat_last(const Tensor& x, std::int64_t times);
/// Same values, cut off from the gradient graph.
Tensor detach(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// mean((a - b)^2) over all elements.
Tensor mse(const Tensor& a, const Tensor& b);
/// Squared Euclidean distance between matching last-axis rows, averaged over rows.
Tensor mean_row_sq_dist(const Tensor& a, const Tensor& b);

/// Inverted dropout: zeroes entries with probability p, scales survivors by 1/(1-p).
Tensor dropout(const Tensor& x, double p, SeededRng& rng);

/// Scaled dot-product attention over q, k, v [B, L, H*dk] split into `heads`.
/// key_valid (B*L bytes, row-major) hides padded keys. When probs_out is
/// non-null it receives the [B, H, L, L] attention weights (no gradient).
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t heads,
                            std::span<const std::uint8_t> key_valid, Tensor* probs_out = nullptr);

}  // namespace ctn
