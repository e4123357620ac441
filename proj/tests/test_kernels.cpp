// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "mixpipe/kernels.hpp"
#include "mixpipe/random.hpp"

namespace mk = mixpipe::kernels;

namespace {

std::vector<double> random_vec(mixpipe::Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

// Plain triple loop, independent of both kernel tables.
std::vector<double> naive_gemm(std::size_t m, std::size_t k, std::size_t n, const std::vector<double>& a,
                               const std::vector<double>& b, bool ta, bool tb) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta ? a[p * m + i] : a[i * k + p];
        const double bv = tb ? b[j * k + p] : b[p * n + j];
        s += static_cast<long double>(av) * bv;
      }
      c[i * n + j] = static_cast<double>(s);
    }
  return c;
}

void check_close(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= tol * (1.0 + std::abs(want[i])));
}

std::vector<const mk::KernelTable*> tables() {
  std::vector<const mk::KernelTable*> out{&mk::table(mk::Isa::scalar)};
  if (mk::isa_available(mk::Isa::avx2)) out.push_back(&mk::table(mk::Isa::avx2));
  return out;
}

}  // namespace

TEST_CASE("isa names and availability") {
  CHECK(mk::isa_name(mk::Isa::scalar) == "scalar");
  CHECK(mk::isa_name(mk::Isa::avx2) == "avx2");
  CHECK(mk::isa_available(mk::Isa::scalar));
  CHECK(mk::table(mk::Isa::scalar).isa == mk::Isa::scalar);
  if (!mk::isa_available(mk::Isa::avx2)) CHECK_THROWS_AS(mk::table(mk::Isa::avx2), std::runtime_error);
}

TEST_CASE("dot and axpy match a naive loop on ragged lengths") {
  mixpipe::Rng rng(11);
  for (const auto* t : tables()) {
    for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 17u, 64u, 131u}) {
      const auto a = random_vec(rng, n), b = random_vec(rng, n);
      long double want = 0;
      for (std::size_t i = 0; i < n; ++i) want += static_cast<long double>(a[i]) * b[i];
      CHECK(std::abs(t->dot(a.data(), b.data(), n) - static_cast<double>(want)) <= 1e-12 * (1.0 + n));
      auto y = b;
      t->axpy(0.75, a.data(), y.data(), n);
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y[i] - (b[i] + 0.75 * a[i])) <= 1e-15 * (1 + std::abs(y[i])));
    }
  }
}

TEST_CASE("gemm variants match the naive oracle") {
  mixpipe::Rng rng(12);
  for (const auto* t : tables()) {
    for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 7}, {4, 8, 4}, {9, 13, 6}, {16, 3, 33}}) {
      const auto a = random_vec(rng, m * k), b = random_vec(rng, k * n), bt = random_vec(rng, n * k),
                 at = random_vec(rng, k * m);
      std::vector<double> c(m * n, 0.0);
      t->gemm_nn(m, k, n, a.data(), b.data(), c.data());
      check_close(c, naive_gemm(m, k, n, a, b, false, false), 1e-12);
      std::fill(c.begin(), c.end(), 0.0);
      t->gemm_nt(m, k, n, a.data(), bt.data(), c.data());
      check_close(c, naive_gemm(m, k, n, a, bt, false, true), 1e-12);
      std::fill(c.begin(), c.end(), 0.0);
      t->gemm_tn(m, k, n, at.data(), b.data(), c.data());
      check_close(c, naive_gemm(m, k, n, at, b, true, false), 1e-12);
    }
  }
}

TEST_CASE("gemm accumulates into c") {
  for (const auto* t : tables()) {
    const std::vector<double> a{1, 2}, b{3, 4};
    std::vector<double> c{10};
    t->gemm_nn(1, 2, 1, a.data(), b.data(), c.data());
    CHECK(c[0] == 21.0);
  }
}

TEST_CASE("adamw kernel is bit-identical across variants") {
  if (!mk::isa_available(mk::Isa::avx2)) return;
  mixpipe::Rng rng(13);
  const mk::AdamwArgs args{1e-3, 0.9, 0.95, 1e-8, 0.1, 1 - 0.9 * 0.9 * 0.9, 1 - 0.95 * 0.95 * 0.95};
  for (std::size_t n : {1u, 4u, 5u, 37u, 256u}) {
    auto p1 = random_vec(rng, n), m1 = random_vec(rng, n), v1 = random_vec(rng, n), g = random_vec(rng, n);
    for (auto& x : v1) x = std::abs(x);
    auto p2 = p1, m2 = m1, v2 = v1;
    mk::table(mk::Isa::scalar).adamw(args, p1.data(), m1.data(), v1.data(), g.data(), n);
    mk::table(mk::Isa::avx2).adamw(args, p2.data(), m2.data(), v2.data(), g.data(), n);
    CHECK(std::memcmp(p1.data(), p2.data(), n * sizeof(double)) == 0);
    CHECK(std::memcmp(m1.data(), m2.data(), n * sizeof(double)) == 0);
    CHECK(std::memcmp(v1.data(), v2.data(), n * sizeof(double)) == 0);
  }
}

TEST_CASE("active table is one of the known variants") {
  const auto& t = mk::active();
  CHECK((t.isa == mk::Isa::scalar || t.isa == mk::Isa::avx2));
}
