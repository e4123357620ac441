// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <stdexcept>
#include <string>

#include "mixpipe/kernels.hpp"

namespace mixpipe::kernels {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(MIXPIPE_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!isa_available(isa))
    throw std::runtime_error("kernel ISA '" + std::string(isa_name(isa)) +
                             "' is not supported on this host");
  switch (isa) {
    case Isa::scalar:
      return scalar::table();
    case Isa::avx2:
#if defined(MIXPIPE_HAVE_AVX2)
      return avx2::table();
#else
      break;
#endif
  }
  return scalar::table();
}

const KernelTable& active() {
  static const KernelTable& selected = [&]() -> const KernelTable& {
    if (const char* forced = std::getenv("MIXPIPE_ISA")) {
      const std::string want(forced);
      if (want == "scalar") return scalar::table();
      if (want == "avx2") return table(Isa::avx2);
      throw std::runtime_error("MIXPIPE_ISA must be 'scalar' or 'avx2', got '" + want + "'");
    }
    if (isa_available(Isa::avx2)) return table(Isa::avx2);
    return scalar::table();
  }();
  return selected;
}

}  // namespace mixpipe::kernels
