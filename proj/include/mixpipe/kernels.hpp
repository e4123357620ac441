// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Data-parallel inner loops used by the tensor layer. Every kernel has a
// portable scalar reference and, where the host supports it, an AVX2/FMA
// variant. The variant is chosen once per process; MIXPIPE_ISA=scalar forces
// the reference path.

#pragma once

#include <cstddef>
#include <string_view>

namespace mixpipe::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

struct AdamwArgs {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double weight_decay;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  Isa isa;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[m,n] += A[m,k] * B[k,n]
  void (*gemm_nn)(std::size_t m, std::size_t k, std::size_t n, const double* a,
                  const double* b, double* c);
  // C[m,n] += A[m,k] * B[n,k]^T
  void (*gemm_nt)(std::size_t m, std::size_t k, std::size_t n, const double* a,
                  const double* b, double* c);
  // C[m,n] += A[k,m]^T * B[k,n]
  void (*gemm_tn)(std::size_t m, std::size_t k, std::size_t n, const double* a,
                  const double* b, double* c);
  // Decoupled-decay Adam update. Bit-identical across variants: no FMA.
  void (*adamw)(const AdamwArgs& args, double* param, double* m, double* v,
                const double* grad, std::size_t n);
};

bool isa_available(Isa isa);

// Table for a specific ISA; throws std::runtime_error if the host lacks it.
const KernelTable& table(Isa isa);

// Process-wide selection, resolved on first use.
const KernelTable& active();

namespace scalar {
const KernelTable& table();
}

#if defined(MIXPIPE_HAVE_AVX2)
namespace avx2 {
const KernelTable& table();
}
#endif

}  // namespace mixpipe::kernels
