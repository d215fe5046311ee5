#pragma once

#include <Eigen/Core>

namespace mdae::detail {

// Row-major C(MxN) = alpha * op(A) * op(B) + beta * C with beta in {0, 1}.
// Backed by Eigen's single-threaded GEMM.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha,
          const T* a, int lda, const T* b, int ldb, T beta, T* c, int ldc) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<Eigen::Dynamic>;
  using CMap = Eigen::Map<Mat, Eigen::Unaligned, Stride>;
  using Map = Eigen::Map<const Mat, Eigen::Unaligned, Stride>;

  Map A(a, trans_a ? k : m, trans_a ? m : k, Stride(lda));
  Map B(b, trans_b ? n : k, trans_b ? k : n, Stride(ldb));
  CMap C(c, m, n, Stride(ldc));

  auto assign = [&](const auto& prod) {
    if (beta == T(0))
      C.noalias() = alpha * prod;
    else
      C.noalias() += alpha * prod;
  };
  if (!trans_a && !trans_b)
    assign(A * B);
  else if (!trans_a && trans_b)
    assign(A * B.transpose());
  else if (trans_a && !trans_b)
    assign(A.transpose() * B);
  else
    assign(A.transpose() * B.transpose());
}

}  // namespace mdae::detail
