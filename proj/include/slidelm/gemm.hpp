#pragma once

// Small dense matrix kernels. Single-threaded by default; row-partitioned
// threading can be enabled through the SLIDELM_THREADS environment variable.
// Each output row is produced by exactly one thread with a fixed reduction
// order, so results are bit-identical for any thread count.

#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define SLIDELM_GEMM_AVX2 1
#endif

namespace slidelm::nn {

inline int gemm_threads() {
  static const int n = [] {
    if (const char* env = std::getenv("SLIDELM_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return v;
    }
    return 1;
  }();
  return n;
}

namespace detail {

template <class F>
void parallel_rows(int64_t m, int64_t work_per_row, F&& body) {
  const int threads = gemm_threads();
  if (threads <= 1 || m < 2 * threads || work_per_row * m < (1 << 18)) {
    body(0, m);
    return;
  }
  std::vector<std::thread> pool;
  const int64_t chunk = (m + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const int64_t r0 = t * chunk;
    const int64_t r1 = std::min<int64_t>(m, r0 + chunk);
    if (r0 >= r1) break;
    pool.emplace_back([&body, r0, r1] { body(r0, r1); });
  }
  for (auto& th : pool) th.join();
}

#ifdef SLIDELM_GEMM_AVX2
inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehl_ps(lo, lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_shuffle_ps(lo, lo, 0x1);
  lo = _mm_add_ss(lo, sh);
  return _mm_cvtss_f32(lo);
}
#endif

}  // namespace detail

// C[m x n] += A[m x k] * B[k x n]
template <class S>
void gemm_nn(const S* A, const S* B, S* C, int64_t m, int64_t k, int64_t n) {
  detail::parallel_rows(m, k * n, [=](int64_t r0, int64_t r1) {
    for (int64_t i = r0; i < r1; ++i) {
      S* c = C + i * n;
      const S* a = A + i * k;
      for (int64_t p = 0; p < k; ++p) {
        const S ap = a[p];
        if (ap == S(0)) continue;
        const S* b = B + p * n;
#ifdef SLIDELM_GEMM_AVX2
        if constexpr (sizeof(S) == 4) {
          const __m256 av = _mm256_set1_ps(static_cast<float>(ap));
          int64_t j = 0;
          for (; j + 8 <= n; j += 8) {
            __m256 cv = _mm256_loadu_ps(reinterpret_cast<float*>(c) + j);
            cv = _mm256_fmadd_ps(av, _mm256_loadu_ps(reinterpret_cast<const float*>(b) + j), cv);
            _mm256_storeu_ps(reinterpret_cast<float*>(c) + j, cv);
          }
          for (; j < n; ++j) c[j] += ap * b[j];
          continue;
        }
#endif
        for (int64_t j = 0; j < n; ++j) c[j] += ap * b[j];
      }
    }
  });
}

// C[m x n] += A[m x k] * B[n x k]^T  (rows of B are the right-hand vectors)
template <class S>
void gemm_nt(const S* A, const S* B, S* C, int64_t m, int64_t k, int64_t n) {
  detail::parallel_rows(m, k * n, [=](int64_t r0, int64_t r1) {
    for (int64_t i = r0; i < r1; ++i) {
      const S* a = A + i * k;
      S* c = C + i * n;
      for (int64_t j = 0; j < n; ++j) {
        const S* b = B + j * k;
#ifdef SLIDELM_GEMM_AVX2
        if constexpr (sizeof(S) == 4) {
          __m256 acc0 = _mm256_setzero_ps();
          __m256 acc1 = _mm256_setzero_ps();
          int64_t p = 0;
          for (; p + 16 <= k; p += 16) {
            acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(reinterpret_cast<const float*>(a) + p),
                                   _mm256_loadu_ps(reinterpret_cast<const float*>(b) + p), acc0);
            acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(reinterpret_cast<const float*>(a) + p + 8),
                                   _mm256_loadu_ps(reinterpret_cast<const float*>(b) + p + 8), acc1);
          }
          float sum = detail::hsum8(_mm256_add_ps(acc0, acc1));
          for (; p < k; ++p) sum += static_cast<float>(a[p]) * static_cast<float>(b[p]);
          c[j] += sum;
          continue;
        }
#endif
        S sum = S(0);
        for (int64_t p = 0; p < k; ++p) sum += a[p] * b[p];
        c[j] += sum;
      }
    }
  });
}

// C[m x n] += A[k x m]^T * B[k x n]
template <class S>
void gemm_tn(const S* A, const S* B, S* C, int64_t m, int64_t k, int64_t n) {
  for (int64_t p = 0; p < k; ++p) {
    const S* a = A + p * m;
    const S* b = B + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const S ap = a[i];
      if (ap == S(0)) continue;
      S* c = C + i * n;
#ifdef SLIDELM_GEMM_AVX2
      if constexpr (sizeof(S) == 4) {
        const __m256 av = _mm256_set1_ps(static_cast<float>(ap));
        int64_t j = 0;
        for (; j + 8 <= n; j += 8) {
          __m256 cv = _mm256_loadu_ps(reinterpret_cast<float*>(c) + j);
          cv = _mm256_fmadd_ps(av, _mm256_loadu_ps(reinterpret_cast<const float*>(b) + j), cv);
          _mm256_storeu_ps(reinterpret_cast<float*>(c) + j, cv);
        }
        for (; j < n; ++j) c[j] += ap * b[j];
        continue;
      }
#endif
      for (int64_t j = 0; j < n; ++j) c[j] += ap * b[j];
    }
  }
}

// C[m x n] = A[m x k] * B[k x n] with double-precision accumulators.
// Used where a sum runs over the tile axis, so that reordering the tiles
// perturbs the result by no more than the final fp32 rounding.
template <class S>
void gemm_nn_wide(const S* A, const S* B, S* C, int64_t m, int64_t k, int64_t n) {
  std::vector<double> acc(static_cast<size_t>(n));
  for (int64_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const S* a = A + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double ap = static_cast<double>(a[p]);
      if (ap == 0.0) continue;
      const S* b = B + p * n;
      for (int64_t j = 0; j < n; ++j) acc[j] += ap * static_cast<double>(b[j]);
    }
    S* c = C + i * n;
    for (int64_t j = 0; j < n; ++j) c[j] = static_cast<S>(acc[j]);
  }
}

}  // namespace slidelm::nn
