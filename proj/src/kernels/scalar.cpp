// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "mixpipe/kernels.hpp"

namespace mixpipe::kernels::scalar {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = a[i * k + p];
      if (s == 0.0) continue;
      axpy(s, b + p * n, crow, n);
    }
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double s = a[p * m + i];
      if (s == 0.0) continue;
      axpy(s, brow, c + i * n, n);
    }
  }
}

void adamw(const AdamwArgs& h, double* param, double* m, double* v, const double* grad,
           std::size_t n) {
  const double one_minus_b1 = 1.0 - h.beta1;
  const double one_minus_b2 = 1.0 - h.beta2;
  const double decay = h.lr * h.weight_decay;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = h.beta1 * m[i] + one_minus_b1 * g;
    v[i] = h.beta2 * v[i] + one_minus_b2 * (g * g);
    const double m_hat = m[i] / h.bias_correction1;
    const double v_hat = v[i] / h.bias_correction2;
    const double step = m_hat / (std::sqrt(v_hat) + h.eps);
    param[i] = (param[i] - decay * param[i]) - h.lr * step;
  }
}

}  // namespace

const KernelTable& table() {
  static const KernelTable t{Isa::scalar, dot, axpy, gemm_nn, gemm_nt, gemm_tn, adamw};
  return t;
}

}  // namespace mixpipe::kernels::scalar
