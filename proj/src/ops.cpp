// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <string>

#include "mixpipe/kernels.hpp"

namespace mixpipe::ops {
namespace {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;
using BackwardFn = std::function<void(TensorImpl&)>;

[[noreturn]] void shape_fail(const std::string& op, const Tensor& a, const Tensor& b,
                             const std::string& what = "incompatible shapes") {
  throw ShapeError(op + ": " + what + " " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

void require_defined(const std::string& op, const Tensor& t) {
  if (!t.defined()) throw ShapeError(op + ": undefined input tensor");
}

void require_rank2(const std::string& op, const Tensor& t) {
  require_defined(op, t);
  if (t.rank() != 2) throw ShapeError(op + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
}

Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  for (double v : data)
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->op = op;
  if (grad_enabled()) {
    bool needs = false;
    for (const Tensor* t : inputs)
      if (t->defined() && t->requires_grad()) needs = true;
    if (needs) {
      impl->requires_grad = true;
      for (const Tensor* t : inputs)
        if (t->defined()) impl->parents.push_back(t->impl());
      impl->backward_fn = std::move(fn);
    }
  }
  return Tensor::from_impl(std::move(impl));
}

bool wants_grad(const ImplPtr& p) { return p && p->requires_grad; }

// Maps each output flat index to the flat index of a broadcast input.
std::vector<std::size_t> broadcast_map(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::size_t> in_strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    in_strides[i + offset] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < rank; ++d) src += idx[d] * in_strides[d];
    map[o] = src;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
  return map;
}

Shape broadcast_shape(const char* op, const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::size_t rank = std::max(sa.size(), sb.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - sa.size() ? 1 : sa[i - (rank - sa.size())];
    const std::size_t db = i < rank - sb.size() ? 1 : sb[i - (rank - sb.size())];
    if (da != db && da != 1 && db != 1) shape_fail(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

enum class BinOp { add, sub, mul };

Tensor binary(const char* op, BinOp kind, const Tensor& a, const Tensor& b) {
  require_defined(op, a);
  require_defined(op, b);
  Shape out = broadcast_shape(op, a, b);
  const std::size_t n = shape_numel(out);
  const bool a_same = a.shape() == out;
  const bool b_same = b.shape() == out;
  auto amap = std::make_shared<std::vector<std::size_t>>();
  auto bmap = std::make_shared<std::vector<std::size_t>>();
  if (!a_same) *amap = broadcast_map(a.shape(), out);
  if (!b_same) *bmap = broadcast_map(b.shape(), out);
  auto ai = [&](std::size_t o) { return a_same ? o : (*amap)[o]; };
  auto bi = [&](std::size_t o) { return b_same ? o : (*bmap)[o]; };
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> data(n);
  for (std::size_t o = 0; o < n; ++o) {
    const double x = ad[ai(o)];
    const double y = bd[bi(o)];
    data[o] = kind == BinOp::add ? x + y : kind == BinOp::sub ? x - y : x * y;
  }
  ImplPtr pa = a.impl();
  ImplPtr pb = b.impl();
  return make_result(std::move(out), std::move(data), op, {&a, &b},
                     [pa, pb, amap, bmap, a_same, b_same, kind](TensorImpl& self) {
                       const std::size_t n = self.data.size();
                       if (wants_grad(pa)) {
                         auto& g = pa->ensure_grad();
                         for (std::size_t o = 0; o < n; ++o) {
                           const double up = self.grad[o];
                           const std::size_t bidx = b_same ? o : (*bmap)[o];
                           const double d = kind == BinOp::mul ? up * pb->data[bidx] : up;
                           g[a_same ? o : (*amap)[o]] += d;
                         }
                       }
                       if (wants_grad(pb)) {
                         auto& g = pb->ensure_grad();
                         for (std::size_t o = 0; o < n; ++o) {
                           const double up = self.grad[o];
                           const std::size_t aidx = a_same ? o : (*amap)[o];
                           double d = up;
                           if (kind == BinOp::sub) d = -up;
                           if (kind == BinOp::mul) d = up * pa->data[aidx];
                           g[b_same ? o : (*bmap)[o]] += d;
                         }
                       }
                     });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.cols() != b.rows()) shape_fail("matmul", a, b, "inner dimensions differ for");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const auto& kt = kernels::active();
  kt.gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  ImplPtr pa = a.impl(), pb = b.impl();
  return make_result({m, n}, std::move(out), "matmul", {&a, &b}, [pa, pb, m, k, n](TensorImpl& self) {
    const auto& kt = kernels::active();
    if (wants_grad(pa)) kt.gemm_nt(m, n, k, self.grad.data(), pb->data.data(), pa->ensure_grad().data());
    if (wants_grad(pb)) kt.gemm_tn(k, m, n, pa->data.data(), self.grad.data(), pb->ensure_grad().data());
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank2("linear", x);
  require_rank2("linear", w);
  if (x.cols() != w.rows()) shape_fail("linear", x, w, "input width does not match weight rows for");
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != n))
    shape_fail("linear", w, bias, "bias does not match weight columns for");
  std::vector<double> out(m * n, 0.0);
  if (bias.defined())
    for (std::size_t i = 0; i < m; ++i) std::copy(bias.data().begin(), bias.data().end(), out.begin() + i * n);
  const auto& kt = kernels::active();
  kt.gemm_nn(m, k, n, x.data().data(), w.data().data(), out.data());
  ImplPtr px = x.impl(), pw = w.impl();
  ImplPtr pbias = bias.defined() ? bias.impl() : nullptr;
  return make_result({m, n}, std::move(out), "linear", {&x, &w, &bias},
                     [px, pw, pbias, m, k, n](TensorImpl& self) {
                       const auto& kt = kernels::active();
                       if (wants_grad(px))
                         kt.gemm_nt(m, n, k, self.grad.data(), pw->data.data(), px->ensure_grad().data());
                       if (wants_grad(pw))
                         kt.gemm_tn(k, m, n, px->data.data(), self.grad.data(), pw->ensure_grad().data());
                       if (wants_grad(pbias)) {
                         auto& gb = pbias->ensure_grad();
                         for (std::size_t i = 0; i < m; ++i) kt.axpy(1.0, self.grad.data() + i * n, gb.data(), n);
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinOp::mul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  require_defined("scale", a);
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  ImplPtr pa = a.impl();
  return make_result(a.shape(), std::move(out), "scale", {&a}, [pa, factor](TensorImpl& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor gelu(const Tensor& x) {
  require_defined("gelu", x);
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const double v = xd[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v)));
  }
  ImplPtr px = x.impl();
  return make_result(x.shape(), std::move(out), "gelu", {&x}, [px](TensorImpl& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = px->data[i];
      const double u = c * (v + k * v * v * v);
      const double t = std::tanh(u);
      const double du = c * (1.0 + 3.0 * k * v * v);
      g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
  });
}

Tensor softmax(const Tensor& x) {
  require_defined("softmax", x);
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * d;
    double* o = out.data() + r * d;
    const double mx = *std::max_element(in, in + d);
    double sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) sum += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < d; ++j) o[j] /= sum;
  }
  ImplPtr px = x.impl();
  return make_result(x.shape(), std::move(out), "softmax", {&x}, [px, rows, d](TensorImpl& self) {
    auto& g = px->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * d;
      const double* gy = self.grad.data() + r * d;
      double dotv = 0.0;
      for (std::size_t j = 0; j < d; ++j) dotv += gy[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += y[j] * (gy[j] - dotv);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined("layer_norm", x);
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  for (const Tensor* p : {&gamma, &beta})
    if (p->defined() && (p->rank() != 1 || p->dim(0) != d))
      shape_fail("layer_norm", x, *p, "affine parameter does not match last axis for");
  const auto xd = x.data();
  auto xhat = std::make_shared<std::vector<double>>(xd.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    bool constant = true;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = in[j] - mu;
      var += c * c;
      if (in[j] != in[0]) constant = false;
    }
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = constant ? 0.0 : (in[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      double y = h;
      if (gamma.defined()) y *= gamma.data()[j];
      if (beta.defined()) y += beta.data()[j];
      out[r * d + j] = y;
    }
  }
  ImplPtr px = x.impl();
  ImplPtr pg = gamma.defined() ? gamma.impl() : nullptr;
  ImplPtr pb = beta.defined() ? beta.impl() : nullptr;
  return make_result(x.shape(), std::move(out), "layer_norm", {&x, &gamma, &beta},
                     [px, pg, pb, xhat, rstd, rows, d](TensorImpl& self) {
                       std::vector<double> dxhat(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* gy = self.grad.data() + r * d;
                         const double* h = xhat->data() + r * d;
                         double sum_dh = 0.0, sum_dh_h = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           dxhat[j] = pg ? gy[j] * pg->data[j] : gy[j];
                           sum_dh += dxhat[j];
                           sum_dh_h += dxhat[j] * h[j];
                           if (wants_grad(pg)) pg->ensure_grad()[j] += gy[j] * h[j];
                           if (wants_grad(pb)) pb->ensure_grad()[j] += gy[j];
                         }
                         if (wants_grad(px)) {
                           auto& gx = px->ensure_grad();
                           const double inv_d = 1.0 / static_cast<double>(d);
                           const double rs = (*rstd)[r];
                           for (std::size_t j = 0; j < d; ++j)
                             gx[r * d + j] += rs * (dxhat[j] - inv_d * sum_dh - h[j] * inv_d * sum_dh_h);
                         }
                       }
                     });
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids) {
  require_rank2("embedding", table);
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  const std::size_t v = table.rows(), d = table.cols();
  for (auto id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw ShapeError("embedding: id " + std::to_string(id) + " outside table of shape " +
                       shape_str(table.shape()));
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out.begin() + i * d);
  auto idv = std::make_shared<std::vector<std::int64_t>>(ids.begin(), ids.end());
  ImplPtr pt = table.impl();
  return make_result({ids.size(), d}, std::move(out), "embedding", {&table}, [pt, idv, d](TensorImpl& self) {
    auto& g = pt->ensure_grad();
    for (std::size_t i = 0; i < idv->size(); ++i)
      kernels::active().axpy(1.0, self.grad.data() + i * d, g.data() + (*idv)[i] * d, d);
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
  require_rank2("cross_entropy", logits);
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  std::size_t count = 0;
  for (auto t : targets) {
    if (t == kIgnoreIndex) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v)
      throw ShapeError("cross_entropy: target " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(v));
    ++count;
  }
  if (count == 0) throw ShapeError("cross_entropy: every target is ignored; loss is empty");
  const auto ld = logits.data();
  auto probs = std::make_shared<std::vector<double>>(n * v, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] == kIgnoreIndex) continue;
    const double* row = ld.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double sum = 0.0;
    for (std::size_t j = 0; j < v; ++j) sum += ((*probs)[i * v + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < v; ++j) (*probs)[i * v + j] /= sum;
    total += (mx + std::log(sum)) - row[targets[i]];
  }
  const double inv = 1.0 / static_cast<double>(count);
  auto tv = std::make_shared<std::vector<std::int64_t>>(targets.begin(), targets.end());
  ImplPtr pl = logits.impl();
  return make_result({1}, {total * inv}, "cross_entropy", {&logits}, [pl, probs, tv, n, v, inv](TensorImpl& self) {
    auto& g = pl->ensure_grad();
    const double up = self.grad[0] * inv;
    for (std::size_t i = 0; i < n; ++i) {
      if ((*tv)[i] == kIgnoreIndex) continue;
      for (std::size_t j = 0; j < v; ++j) g[i * v + j] += up * (*probs)[i * v + j];
      g[i * v + static_cast<std::size_t>((*tv)[i])] -= up;
    }
  });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  require_defined("mean", x);
  const Shape& s = x.shape();
  if (axis >= s.size())
    throw ShapeError("mean: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(outer * inner, 0.0);
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xd[(o * len + l) * inner + i];
  const double inv = 1.0 / static_cast<double>(len);
  for (auto& v : out) v *= inv;
  ImplPtr px = x.impl();
  return make_result(std::move(out_shape), std::move(out), "mean", {&x}, [px, outer, inner, len, inv](TensorImpl& self) {
    auto& g = px->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < inner; ++i) g[(o * len + l) * inner + i] += inv * self.grad[o * inner + i];
  });
}

Tensor sum_all(const Tensor& x) {
  require_defined("sum_all", x);
  double s = 0.0;
  for (double v : x.data()) s += v;
  ImplPtr px = x.impl();
  return make_result({1}, {s}, "sum_all", {&x}, [px](TensorImpl& self) {
    auto& g = px->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean_all(const Tensor& x) {
  require_defined("mean_all", x);
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  for (const auto& p : parts) require_rank2("concat_rows", p);
  const std::size_t d = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != d) shape_fail("concat_rows", parts[0], p, "column counts differ for");
    rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(rows * d);
  std::vector<ImplPtr> impls;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    impls.push_back(p.impl());
  }
  auto result_impl = make_result({rows, d}, std::move(out), "concat_rows", {}, nullptr).impl();
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parts) needs = needs || p.requires_grad();
  if (needs) {
    result_impl->requires_grad = true;
    result_impl->parents = impls;
    result_impl->backward_fn = [impls](TensorImpl& self) {
      std::size_t offset = 0;
      for (const auto& p : impls) {
        if (wants_grad(p)) {
          auto& g = p->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
        }
        offset += p->data.size();
      }
    };
  }
  return Tensor::from_impl(result_impl);
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  for (const auto& p : parts) require_rank2("concat_cols", p);
  const std::size_t rows = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_fail("concat_cols", parts[0], p, "row counts differ for");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(rows * total);
  std::vector<ImplPtr> impls;
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pd = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + col));
    col += widths[k];
    impls.push_back(parts[k].impl());
  }
  auto result_impl = make_result({rows, total}, std::move(out), "concat_cols", {}, nullptr).impl();
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parts) needs = needs || p.requires_grad();
  if (needs) {
    result_impl->requires_grad = true;
    result_impl->parents = impls;
    result_impl->backward_fn = [impls, widths, rows, total](TensorImpl& self) {
      std::size_t col = 0;
      for (std::size_t k = 0; k < impls.size(); ++k) {
        if (wants_grad(impls[k])) {
          auto& g = impls[k]->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < widths[k]; ++j) g[r * widths[k] + j] += self.grad[r * total + col + j];
        }
        col += widths[k];
      }
    };
  }
  return Tensor::from_impl(result_impl);
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2("slice_rows", x);
  if (begin >= end || end > x.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_str(x.shape()));
  const std::size_t d = x.cols();
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * d),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * d));
  ImplPtr px = x.impl();
  return make_result({end - begin, d}, std::move(out), "slice_rows", {&x}, [px, begin, d](TensorImpl& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * d + i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  require_rank2("transpose", x);
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  const auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xd[i * c + j];
  ImplPtr px = x.impl();
  return make_result({c, r}, std::move(out), "transpose", {&x}, [px, r, c](TensorImpl& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined("reshape", x);
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  ImplPtr px = x.impl();
  return make_result(std::move(shape), std::move(out), "reshape", {&x}, [px](TensorImpl& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, bool causal) {
  require_rank2("attention", q);
  require_rank2("attention", k);
  require_rank2("attention", v);
  const std::size_t nq = q.rows(), nk = k.rows(), d = q.cols();
  if (k.cols() != d) shape_fail("attention", q, k, "query/key widths differ for");
  if (v.rows() != nk || v.cols() != d) shape_fail("attention", k, v, "key/value shapes differ for");
  if (heads == 0 || d % heads != 0)
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  if (causal && nq != nk) shape_fail("attention", q, k, "causal attention needs equal lengths, got");
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& kt = kernels::active();

  // Per-head contiguous copies; probabilities kept for the backward pass.
  auto split = [&](std::span<const double> src, std::size_t n, std::size_t h) {
    std::vector<double> out(n * dh);
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * d + h * dh), dh, out.begin() + static_cast<std::ptrdiff_t>(i * dh));
    return out;
  };
  auto probs = std::make_shared<std::vector<std::vector<double>>>(heads);
  std::vector<double> out(nq * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = split(q.data(), nq, h);
    const auto kh = split(k.data(), nk, h);
    const auto vh = split(v.data(), nk, h);
    auto& p = (*probs)[h];
    p.assign(nq * nk, 0.0);
    kt.gemm_nt(nq, dh, nk, qh.data(), kh.data(), p.data());
    for (std::size_t i = 0; i < nq; ++i) {
      double* row = p.data() + i * nk;
      const std::size_t visible = causal ? i + 1 : nk;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, row[j] * sc);
      double sum = 0.0;
      for (std::size_t j = 0; j < visible; ++j) sum += (row[j] = std::exp(row[j] * sc - mx));
      for (std::size_t j = 0; j < visible; ++j) row[j] /= sum;
      for (std::size_t j = visible; j < nk; ++j) row[j] = 0.0;
    }
    std::vector<double> oh(nq * dh, 0.0);
    kt.gemm_nn(nq, nk, dh, p.data(), vh.data(), oh.data());
    for (std::size_t i = 0; i < nq; ++i)
      std::copy_n(oh.begin() + static_cast<std::ptrdiff_t>(i * dh), dh, out.begin() + static_cast<std::ptrdiff_t>(i * d + h * dh));
  }
  ImplPtr pq = q.impl(), pk = k.impl(), pv = v.impl();
  return make_result({nq, d}, std::move(out), "attention", {&q, &k, &v},
                     [pq, pk, pv, probs, heads, nq, nk, d, dh, sc](TensorImpl& self) {
                       const auto& kt = kernels::active();
                       auto split = [&](const std::vector<double>& src, std::size_t n, std::size_t h) {
                         std::vector<double> out(n * dh);
                         for (std::size_t i = 0; i < n; ++i)
                           std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * d + h * dh), dh,
                                       out.begin() + static_cast<std::ptrdiff_t>(i * dh));
                         return out;
                       };
                       auto merge = [&](const std::vector<double>& src, std::size_t n, std::size_t h,
                                        std::vector<double>& dst) {
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < dh; ++j) dst[i * d + h * dh + j] += src[i * dh + j];
                       };
                       for (std::size_t h = 0; h < heads; ++h) {
                         const auto& p = (*probs)[h];
                         const auto go = split(self.grad, nq, h);
                         const auto qh = split(pq->data, nq, h);
                         const auto kh = split(pk->data, nk, h);
                         const auto vh = split(pv->data, nk, h);
                         if (wants_grad(pv)) {
                           std::vector<double> gv(nk * dh, 0.0);
                           kt.gemm_tn(nk, nq, dh, p.data(), go.data(), gv.data());
                           merge(gv, nk, h, pv->ensure_grad());
                         }
                         if (!wants_grad(pq) && !wants_grad(pk)) continue;
                         std::vector<double> ds(nq * nk, 0.0);
                         kt.gemm_nt(nq, dh, nk, go.data(), vh.data(), ds.data());
                         for (std::size_t i = 0; i < nq; ++i) {
                           double* row = ds.data() + i * nk;
                           const double* prow = p.data() + i * nk;
                           double dotv = 0.0;
                           for (std::size_t j = 0; j < nk; ++j) dotv += row[j] * prow[j];
                           for (std::size_t j = 0; j < nk; ++j) row[j] = prow[j] * (row[j] - dotv) * sc;
                         }
                         if (wants_grad(pq)) {
                           std::vector<double> gq(nq * dh, 0.0);
                           kt.gemm_nn(nq, nk, dh, ds.data(), kh.data(), gq.data());
                           merge(gq, nq, h, pq->ensure_grad());
                         }
                         if (wants_grad(pk)) {
                           std::vector<double> gk(nk * dh, 0.0);
                           kt.gemm_tn(nk, nq, dh, ds.data(), qh.data(), gk.data());
                           merge(gk, nk, h, pk->ensure_grad());
                         }
                       }
                     });
}

Tensor depthwise_conv3x3(const Tensor& x, const Tensor& weight, std::size_t grid_h, std::size_t grid_w) {
  require_rank2("depthwise_conv3x3", x);
  require_rank2("depthwise_conv3x3", weight);
  const std::size_t c = x.cols();
  if (x.rows() != grid_h * grid_w)
    throw ShapeError("depthwise_conv3x3: " + shape_str(x.shape()) + " is not a " + std::to_string(grid_h) +
                     "x" + std::to_string(grid_w) + " grid");
  if (weight.rows() != 9 || weight.cols() != c) shape_fail("depthwise_conv3x3", x, weight, "weight must be [9, channels] for");
  const long gh = static_cast<long>(grid_h), gw = static_cast<long>(grid_w);
  const auto xd = x.data();
  const auto wd = weight.data();
  std::vector<double> out(x.numel(), 0.0);
  for (long r = 0; r < gh; ++r)
    for (long col = 0; col < gw; ++col)
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long sr = r + dy, sc = col + dx;
          if (sr < 0 || sr >= gh || sc < 0 || sc >= gw) continue;
          const double* src = xd.data() + (sr * gw + sc) * static_cast<long>(c);
          const double* w = wd.data() + ((dy + 1) * 3 + (dx + 1)) * static_cast<long>(c);
          double* dst = out.data() + (r * gw + col) * static_cast<long>(c);
          for (std::size_t k = 0; k < c; ++k) dst[k] += w[k] * src[k];
        }
  ImplPtr px = x.impl(), pw = weight.impl();
  return make_result(x.shape(), std::move(out), "depthwise_conv3x3", {&x, &weight},
                     [px, pw, gh, gw, c](TensorImpl& self) {
                       for (long r = 0; r < gh; ++r)
                         for (long col = 0; col < gw; ++col)
                           for (long dy = -1; dy <= 1; ++dy)
                             for (long dx = -1; dx <= 1; ++dx) {
                               const long sr = r + dy, sc = col + dx;
                               if (sr < 0 || sr >= gh || sc < 0 || sc >= gw) continue;
                               const std::size_t src = static_cast<std::size_t>(sr * gw + sc) * c;
                               const std::size_t widx = static_cast<std::size_t>((dy + 1) * 3 + (dx + 1)) * c;
                               const std::size_t dst = static_cast<std::size_t>(r * gw + col) * c;
                               for (std::size_t k = 0; k < c; ++k) {
                                 const double up = self.grad[dst + k];
                                 if (wants_grad(px)) px->ensure_grad()[src + k] += pw->data[widx + k] * up;
                                 if (wants_grad(pw)) pw->ensure_grad()[widx + k] += px->data[src + k] * up;
                               }
                             }
                     });
}

Tensor patchify(const Tensor& x, std::size_t grid_h, std::size_t grid_w, std::size_t patch) {
  require_rank2("patchify", x);
  if (x.rows() != grid_h * grid_w)
    throw ShapeError("patchify: " + shape_str(x.shape()) + " is not a " + std::to_string(grid_h) + "x" +
                     std::to_string(grid_w) + " grid");
  if (patch == 0 || grid_h % patch != 0 || grid_w % patch != 0)
    throw ShapeError("patchify: patch " + std::to_string(patch) + " does not divide grid " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w));
  const std::size_t c = x.cols();
  const std::size_t ph = grid_h / patch, pw = grid_w / patch;
  const std::size_t width = patch * patch * c;
  // index[o] = source flat index for output flat index o
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  for (std::size_t py = 0; py < ph; ++py)
    for (std::size_t px = 0; px < pw; ++px)
      for (std::size_t iy = 0; iy < patch; ++iy)
        for (std::size_t ix = 0; ix < patch; ++ix)
          for (std::size_t k = 0; k < c; ++k) {
            const std::size_t o = (py * pw + px) * width + (iy * patch + ix) * c + k;
            (*index)[o] = ((py * patch + iy) * grid_w + (px * patch + ix)) * c + k;
          }
  const auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xd[(*index)[o]];
  ImplPtr pxi = x.impl();
  return make_result({ph * pw, width}, std::move(out), "patchify", {&x}, [pxi, index](TensorImpl& self) {
    auto& g = pxi->ensure_grad();
    for (std::size_t o = 0; o < index->size(); ++o) g[(*index)[o]] += self.grad[o];
  });
}

}  // namespace mixpipe::ops
