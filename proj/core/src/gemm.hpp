#pragma once

#include <Eigen/Core>

namespace ctn::detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C[m, n] (+)= op(A) * op(B) on row-major operands with explicit leading
/// dimensions. op(A) is [m, k]; A is stored [k, m] when transpose_a.
template <class T>
void gemm(bool transpose_a, bool transpose_b, Eigen::Index m, Eigen::Index n, Eigen::Index k, const T* a, Eigen::Index lda,
          const T* b, Eigen::Index ldb, T* c, Eigen::Index ldc, bool accumulate) {
  using Stride = Eigen::OuterStride<>;
  using ConstMap = Eigen::Map<const RowMat<T>, 0, Stride>;
  Eigen::Map<RowMat<T>, 0, Stride> out(c, m, n, Stride(ldc));
  if (!accumulate) out.setZero();
  if (!transpose_a && !transpose_b)
    out.noalias() += ConstMap(a, m, k, Stride(lda)) * ConstMap(b, k, n, Stride(ldb));
  else if (!transpose_a && transpose_b)
    out.noalias() += ConstMap(a, m, k, Stride(lda)) * ConstMap(b, n, k, Stride(ldb)).transpose();
  else if (transpose_a && !transpose_b)
    out.noalias() += ConstMap(a, k, m, Stride(lda)).transpose() * ConstMap(b, k, n, Stride(ldb));
  else
    out.noalias() += ConstMap(a, k, m, Stride(lda)).transpose() * ConstMap(b, n, k, Stride(ldb)).transpose();
}

}  // namespace ctn::detail
