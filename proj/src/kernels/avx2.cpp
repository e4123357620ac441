// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// AVX2/FMA variants. This translation unit is the only one compiled with
// -mavx2 -mfma; nothing here may be called unless the dispatcher confirmed
// host support.

#include <immintrin.h>

#include <cmath>

#include "mixpipe/kernels.hpp"

namespace mixpipe::kernels::avx2 {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  __m256d acc2 = _mm256_setzero_pd();
  __m256d acc3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    acc2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), acc2);
    acc3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), acc3);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(_mm256_add_pd(acc0, acc1), _mm256_add_pd(acc2, acc3)));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d s = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(s, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// crow += s0*r0 + s1*r1 + s2*r2 + s3*r3, one pass over the output row.
inline void axpy4(const double s[4], const double* r0, const double* r1, const double* r2,
                  const double* r3, double* crow, std::size_t n) {
  const __m256d v0 = _mm256_set1_pd(s[0]);
  const __m256d v1 = _mm256_set1_pd(s[1]);
  const __m256d v2 = _mm256_set1_pd(s[2]);
  const __m256d v3 = _mm256_set1_pd(s[3]);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d c = _mm256_loadu_pd(crow + j);
    c = _mm256_fmadd_pd(v0, _mm256_loadu_pd(r0 + j), c);
    c = _mm256_fmadd_pd(v1, _mm256_loadu_pd(r1 + j), c);
    c = _mm256_fmadd_pd(v2, _mm256_loadu_pd(r2 + j), c);
    c = _mm256_fmadd_pd(v3, _mm256_loadu_pd(r3 + j), c);
    _mm256_storeu_pd(crow + j, c);
  }
  for (; j < n; ++j)
    crow[j] += s[0] * r0[j] + s[1] * r1[j] + s[2] * r2[j] + s[3] * r3[j];
}

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4)
      axpy4(arow + p, b + p * n, b + (p + 1) * n, b + (p + 2) * n, b + (p + 3) * n, crow, n);
    for (; p < k; ++p) axpy(arow[p], b + p * n, crow, n);
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double s[4] = {a[p * m + i], a[(p + 1) * m + i], a[(p + 2) * m + i],
                           a[(p + 3) * m + i]};
      axpy4(s, b + p * n, b + (p + 1) * n, b + (p + 2) * n, b + (p + 3) * n, crow, n);
    }
    for (; p < k; ++p) axpy(a[p * m + i], b + p * n, crow, n);
  }
}

void adamw(const AdamwArgs& h, double* param, double* m, double* v, const double* grad,
           std::size_t n) {
  const __m256d b1 = _mm256_set1_pd(h.beta1);
  const __m256d b2 = _mm256_set1_pd(h.beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - h.beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - h.beta2);
  const __m256d bc1 = _mm256_set1_pd(h.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(h.bias_correction2);
  const __m256d eps = _mm256_set1_pd(h.eps);
  const __m256d lr = _mm256_set1_pd(h.lr);
  const __m256d decay = _mm256_set1_pd(h.lr * h.weight_decay);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)),
                                     _mm256_mul_pd(omb1, g));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d m_hat = _mm256_div_pd(mi, bc1);
    const __m256d v_hat = _mm256_div_pd(vi, bc2);
    const __m256d step = _mm256_div_pd(m_hat, _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps));
    const __m256d p = _mm256_loadu_pd(param + i);
    const __m256d decayed = _mm256_sub_pd(p, _mm256_mul_pd(decay, p));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(decayed, _mm256_mul_pd(lr, step)));
  }
  // Tail delegates to the reference so both paths round identically.
  if (i < n) scalar::table().adamw(h, param + i, m + i, v + i, grad + i, n - i);
}

}  // namespace

const KernelTable& table() {
  static const KernelTable t{Isa::avx2, dot, axpy, gemm_nn, gemm_nt, gemm_tn, adamw};
  return t;
}

}  // namespace mixpipe::kernels::avx2
