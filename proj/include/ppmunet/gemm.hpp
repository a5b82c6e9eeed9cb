// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_GEMM_HPP
#define PPMUNET_GEMM_HPP

// Row-major GEMM kernels behind the convolutions. Every C element is
// accumulated over the inner index in ascending order regardless of tiling, so
// results are reproducible bit for bit.

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

namespace ppmunet::gemm {

namespace detail {

inline constexpr std::size_t kMr = 8;
inline constexpr std::size_t kNr = 16;
inline constexpr std::size_t kVecBytes = 32;

// GCC/Clang vector extension; lowers to whatever SIMD width the target has.
template <typename T>
struct Vec {
  typedef T type __attribute__((vector_size(kVecBytes)));
};

// C[MR x NR] += op(A)[MR x K] * B[K x NR]; A element (r, p) at a[r * ars + p * aps].
template <typename T, std::size_t MR>
inline void micro_kernel(std::size_t K, const T* __restrict a, std::size_t ars, std::size_t aps,
                         const T* __restrict b, std::size_t ldb, T* __restrict c, std::size_t ldc) {
  using V = typename Vec<T>::type;
  constexpr std::size_t L = kVecBytes / sizeof(T), NV = kNr / L;
  V acc[MR][NV];
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t v = 0; v < NV; ++v) std::memcpy(&acc[r][v], c + r * ldc + v * L, sizeof(V));
  for (std::size_t p = 0; p < K; ++p) {
    V bv[NV];
    for (std::size_t v = 0; v < NV; ++v) std::memcpy(&bv[v], b + p * ldb + v * L, sizeof(V));
    for (std::size_t r = 0; r < MR; ++r) {
      const V av = V{} + a[r * ars + p * aps];
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] += av * bv[v];
    }
  }
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t v = 0; v < NV; ++v) std::memcpy(c + r * ldc + v * L, &acc[r][v], sizeof(V));
}

template <typename T, std::size_t R = kMr - 1>
inline void tail_rows(std::size_t rows, std::size_t K, const T* a, std::size_t ars, std::size_t aps, const T* b,
                      std::size_t ldb, T* c, std::size_t ldc) {
  if constexpr (R > 0) {
    if (rows == R) return micro_kernel<T, R>(K, a, ars, aps, b, ldb, c, ldc);
    tail_rows<T, R - 1>(rows, K, a, ars, aps, b, ldb, c, ldc);
  }
}

template <typename T>
inline void edge_kernel(std::size_t rows, std::size_t cols, std::size_t K, const T* a, std::size_t ars,
                        std::size_t aps, const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t q = 0; q < cols; ++q) {
      T acc = c[r * ldc + q];
      for (std::size_t p = 0; p < K; ++p) acc += a[r * ars + p * aps] * b[p * ldb + q];
      c[r * ldc + q] = acc;
    }
}

template <typename T>
inline void driver(std::size_t M, std::size_t N, std::size_t K, const T* a, std::size_t ars, std::size_t aps,
                   const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  const std::size_t n_full = N - N % kNr;
  const std::size_t m_full = M - M % kMr;
  for (std::size_t j = 0; j < n_full; j += kNr) {
    for (std::size_t i = 0; i < m_full; i += kMr)
      micro_kernel<T, kMr>(K, a + i * ars, ars, aps, b + j, ldb, c + i * ldc + j, ldc);
    if (m_full < M) tail_rows(M - m_full, K, a + m_full * ars, ars, aps, b + j, ldb, c + m_full * ldc + j, ldc);
  }
  if (n_full < N) edge_kernel(M, N - n_full, K, a, ars, aps, b + n_full, ldb, c + n_full, ldc);
}

}  // namespace detail

/// C[M x N] += A[M x K] * B[K x N].
template <typename T>
void nn(std::size_t M, std::size_t N, std::size_t K, const T* a, std::size_t lda, const T* b, std::size_t ldb,
        T* c, std::size_t ldc) {
  detail::driver(M, N, K, a, lda, 1, b, ldb, c, ldc);
}

/// C[M x N] += A^T * B where A is stored K x M.
template <typename T>
void tn(std::size_t M, std::size_t N, std::size_t K, const T* a, std::size_t lda, const T* b, std::size_t ldb,
        T* c, std::size_t ldc) {
  detail::driver(M, N, K, a, 1, lda, b, ldb, c, ldc);
}

/// dst[cols x rows] = src[rows x cols]^T.
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t kB = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kB)
    for (std::size_t c0 = 0; c0 < cols; c0 += kB) {
      const std::size_t r1 = std::min(rows, r0 + kB), c1 = std::min(cols, c0 + kB);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t q = c0; q < c1; ++q) dst[q * rows + r] = src[r * cols + q];
    }
}

}  // namespace ppmunet::gemm

#endif  // PPMUNET_GEMM_HPP
