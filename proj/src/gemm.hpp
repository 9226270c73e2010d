#pragma once

// Row-major matrix kernels backing the lowered convolution.

#include <algorithm>
#include <vector>

#include "resunetpp/tensor.hpp"

namespace resunetpp::detail {

// C[M x N] += A[M x K] * B[K x N]
template <typename T>
void gemm_nn(Index M, Index N, Index K, const T* __restrict__ A, Index lda, const T* __restrict__ B, Index ldb,
             T* __restrict__ C, Index ldc) {
  constexpr Index kTileN = 256;
  constexpr Index kTileK = 128;
  for (Index j0 = 0; j0 < N; j0 += kTileN) {
    const Index jn = std::min(kTileN, N - j0);
    for (Index k0 = 0; k0 < K; k0 += kTileK) {
      const Index kn = std::min(kTileK, K - k0);
      Index i = 0;
      for (; i + 4 <= M; i += 4) {
        T* __restrict__ c0 = C + i * ldc + j0;
        T* __restrict__ c1 = c0 + ldc;
        T* __restrict__ c2 = c1 + ldc;
        T* __restrict__ c3 = c2 + ldc;
        const T* a = A + i * lda;
        for (Index k = k0; k < k0 + kn; ++k) {
          const T a0 = a[k];
          const T a1 = a[lda + k];
          const T a2 = a[2 * lda + k];
          const T a3 = a[3 * lda + k];
          const T* __restrict__ b = B + k * ldb + j0;
          for (Index j = 0; j < jn; ++j) {
            const T bj = b[j];
            c0[j] += a0 * bj;
            c1[j] += a1 * bj;
            c2[j] += a2 * bj;
            c3[j] += a3 * bj;
          }
        }
      }
      for (; i < M; ++i) {
        T* __restrict__ c = C + i * ldc + j0;
        for (Index k = k0; k < k0 + kn; ++k) {
          const T a0 = A[i * lda + k];
          const T* __restrict__ b = B + k * ldb + j0;
          for (Index j = 0; j < jn; ++j) c[j] += a0 * b[j];
        }
      }
    }
  }
}

// dst[cols x rows] = src[rows x cols]^T
template <typename T>
void transpose(Index rows, Index cols, const T* src, T* dst) {
  constexpr Index kBlock = 32;
  for (Index r0 = 0; r0 < rows; r0 += kBlock) {
    const Index r1 = std::min(rows, r0 + kBlock);
    for (Index c0 = 0; c0 < cols; c0 += kBlock) {
      const Index c1 = std::min(cols, c0 + kBlock);
      for (Index r = r0; r < r1; ++r) {
        for (Index c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
      }
    }
  }
}

}  // namespace resunetpp::detail
