#pragma once

#include "cast/autodiff.hpp"
#include "cast/blas.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace cast {

enum class Act { Silu, Gelu, Relu };

inline Act parse_activation(const std::string& s) {
  if (s == "silu") return Act::Silu;
  if (s == "gelu") return Act::Gelu;
  if (s == "relu") return Act::Relu;
  fail("unknown activation kind '", s, "' (expected silu|gelu|relu)");
}

namespace detail {
template <class Real>
void check_rank2(const Value<Real>& v, const char* op) {
  require(v->val.rank() == 2, op, ": expected rank-2 tensor, got ", v->val.shape_str());
}
} // namespace detail

// C = A * B
template <class Real>
Value<Real> matmul(const Value<Real>& a, const Value<Real>& b) {
  detail::check_rank2(a, "matmul");
  detail::check_rank2(b, "matmul");
  require(a->val.cols() == b->val.rows(), "matmul: shape mismatch ", a->val.shape_str(), " x ",
          b->val.shape_str());
  const std::size_t m = a->val.rows(), k = a->val.cols(), n = b->val.cols();
  Tensor<Real> out = Tensor<Real>::matrix(m, n);
  blas::gemm(false, false, m, n, k, Real(1), a->val.data(), b->val.data(), Real(0), out.data());
  return make_node<Real>(std::move(out), {a, b}, [m, n, k](Node<Real>& self) {
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    const auto& g = self.grad;
    if (a.requires_grad)
      blas::gemm(false, true, m, k, n, Real(1), g.data(), b.val.data(), Real(1),
                 a.ensure_grad().data());
    if (b.requires_grad)
      blas::gemm(true, false, k, n, m, Real(1), a.val.data(), g.data(), Real(1),
                 b.ensure_grad().data());
  });
}

// C = A * B^T (A: m x k, B: n x k)
template <class Real>
Value<Real> matmul_nt(const Value<Real>& a, const Value<Real>& b) {
  detail::check_rank2(a, "matmul_nt");
  detail::check_rank2(b, "matmul_nt");
  require(a->val.cols() == b->val.cols(), "matmul_nt: shape mismatch ", a->val.shape_str(),
          " x ", b->val.shape_str(), "^T");
  const std::size_t m = a->val.rows(), k = a->val.cols(), n = b->val.rows();
  Tensor<Real> out = Tensor<Real>::matrix(m, n);
  blas::gemm(false, true, m, n, k, Real(1), a->val.data(), b->val.data(), Real(0), out.data());
  return make_node<Real>(std::move(out), {a, b}, [m, n, k](Node<Real>& self) {
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    const auto& g = self.grad;
    if (a.requires_grad)
      blas::gemm(false, false, m, k, n, Real(1), g.data(), b.val.data(), Real(1),
                 a.ensure_grad().data());
    if (b.requires_grad)
      blas::gemm(true, false, n, k, m, Real(1), g.data(), a.val.data(), Real(1),
                 b.ensure_grad().data());
  });
}

template <class Real>
Value<Real> add(const Value<Real>& a, const Value<Real>& b) {
  require(a->val.same_shape(b->val), "add: shape mismatch ", a->val.shape_str(), " vs ",
          b->val.shape_str());
  Tensor<Real> out = a->val;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->val[i];
  return make_node<Real>(std::move(out), {a, b}, [](Node<Real>& self) {
    for (int pi = 0; pi < 2; ++pi) {
      auto& p = *self.parents[pi];
      if (!p.requires_grad) continue;
      auto& pg = p.ensure_grad();
      for (std::size_t i = 0; i < pg.numel(); ++i) pg[i] += self.grad[i];
    }
  });
}

// matrix + broadcast row vector (bias); row may be rank-1 of length cols.
template <class Real>
Value<Real> add_row(const Value<Real>& a, const Value<Real>& r) {
  detail::check_rank2(a, "add_row");
  require(r->val.numel() == a->val.cols(), "add_row: shape mismatch ", a->val.shape_str(),
          " vs ", r->val.shape_str());
  const std::size_t m = a->val.rows(), n = a->val.cols();
  Tensor<Real> out = a->val;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += r->val[j];
  return make_node<Real>(std::move(out), {a, r}, [m, n](Node<Real>& self) {
    auto& a = *self.parents[0];
    auto& r = *self.parents[1];
    if (a.requires_grad) {
      auto& ga = a.ensure_grad();
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i];
    }
    if (r.requires_grad) {
      auto& gr = r.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += self.grad(i, j);
    }
  });
}

template <class Real>
Value<Real> scale(const Value<Real>& a, double c) {
  Tensor<Real> out = a->val;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<Real>(out[i] * c);
  return make_node<Real>(std::move(out), {a}, [c](Node<Real>& self) {
    auto& a = *self.parents[0];
    if (!a.requires_grad) return;
    auto& ga = a.ensure_grad();
    for (std::size_t i = 0; i < ga.numel(); ++i)
      ga[i] += static_cast<Real>(self.grad[i] * c);
  });
}

template <class Real>
Value<Real> mul_elem(const Value<Real>& a, const Value<Real>& b) {
  require(a->val.same_shape(b->val), "mul_elem: shape mismatch ", a->val.shape_str(), " vs ",
          b->val.shape_str());
  Tensor<Real> out = a->val;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->val[i];
  return make_node<Real>(std::move(out), {a, b}, [](Node<Real>& self) {
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    if (a.requires_grad) {
      auto& ga = a.ensure_grad();
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i] * b.val[i];
    }
    if (b.requires_grad) {
      auto& gb = b.ensure_grad();
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += self.grad[i] * a.val[i];
    }
  });
}

template <class Real>
Value<Real> concat_last_dim(const Value<Real>& a, const Value<Real>& b) {
  detail::check_rank2(a, "concat_last_dim");
  detail::check_rank2(b, "concat_last_dim");
  require(a->val.rows() == b->val.rows(), "concat_last_dim: row mismatch ", a->val.shape_str(),
          " vs ", b->val.shape_str());
  const std::size_t m = a->val.rows(), ca = a->val.cols(), cb = b->val.cols();
  Tensor<Real> out = Tensor<Real>::matrix(m, ca + cb);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(a->val.row(i), a->val.row(i) + ca, out.row(i));
    std::copy(b->val.row(i), b->val.row(i) + cb, out.row(i) + ca);
  }
  return make_node<Real>(std::move(out), {a, b}, [m, ca, cb](Node<Real>& self) {
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    if (a.requires_grad) {
      auto& ga = a.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < ca; ++j) ga(i, j) += self.grad(i, j);
    }
    if (b.requires_grad) {
      auto& gb = b.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < cb; ++j) gb(i, j) += self.grad(i, ca + j);
    }
  });
}

// Stacks matrices with equal column counts along rows.
template <class Real>
Value<Real> concat_rows(const std::vector<Value<Real>>& parts) {
  require(!parts.empty(), "concat_rows: empty part list");
  const std::size_t d = parts[0]->val.cols();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    detail::check_rank2(p, "concat_rows");
    require(p->val.cols() == d, "concat_rows: column mismatch ", p->val.shape_str());
    offsets.push_back(total);
    total += p->val.rows();
  }
  Tensor<Real> out = Tensor<Real>::matrix(total, d);
  for (std::size_t pi = 0; pi < parts.size(); ++pi)
    std::copy(parts[pi]->val.data(), parts[pi]->val.data() + parts[pi]->val.numel(),
              out.row(offsets[pi]));
  return make_node<Real>(std::move(out), parts, [offsets, d](Node<Real>& self) {
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      auto& p = *self.parents[pi];
      if (!p.requires_grad) continue;
      auto& pg = p.ensure_grad();
      const Real* src = self.grad.row(offsets[pi]);
      for (std::size_t i = 0; i < pg.numel(); ++i) pg[i] += src[i];
    }
  });
}

template <class Real>
Value<Real> slice_cols(const Value<Real>& a, std::size_t lo, std::size_t hi) {
  detail::check_rank2(a, "slice_cols");
  require(lo < hi && hi <= a->val.cols(), "slice_cols: range [", lo, ",", hi,
          ") out of bounds for ", a->val.shape_str());
  const std::size_t m = a->val.rows(), w = hi - lo;
  Tensor<Real> out = Tensor<Real>::matrix(m, w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy(a->val.row(i) + lo, a->val.row(i) + hi, out.row(i));
  return make_node<Real>(std::move(out), {a}, [m, lo, w](Node<Real>& self) {
    auto& a = *self.parents[0];
    if (!a.requires_grad) return;
    auto& ga = a.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga(i, lo + j) += self.grad(i, j);
  });
}

// Row gather; used both for embedding lookup (table rows by token/element id)
// and for selecting masked-node rows.
template <class Real>
Value<Real> select_rows(const Value<Real>& a, std::vector<std::size_t> idx) {
  detail::check_rank2(a, "select_rows");
  const std::size_t d = a->val.cols();
  for (std::size_t i : idx)
    require(i < a->val.rows(), "select_rows: index ", i, " out of range for ",
            a->val.shape_str());
  Tensor<Real> out = Tensor<Real>::matrix(idx.size(), d);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy(a->val.row(idx[r]), a->val.row(idx[r]) + d, out.row(r));
  return make_node<Real>(std::move(out), {a}, [idx = std::move(idx), d](Node<Real>& self) {
    auto& a = *self.parents[0];
    if (!a.requires_grad) return;
    auto& ga = a.ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      Real* dst = ga.row(idx[r]);
      const Real* src = self.grad.row(r);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

// Mean over rows sharing a segment id; empty segments produce zero rows.
template <class Real>
Value<Real> segment_mean(const Value<Real>& x, std::vector<std::size_t> seg, std::size_t n_seg) {
  detail::check_rank2(x, "segment_mean");
  require(seg.size() == x->val.rows(), "segment_mean: ", seg.size(), " ids for ",
          x->val.shape_str());
  const std::size_t d = x->val.cols();
  std::vector<std::size_t> counts(n_seg, 0);
  for (std::size_t s : seg) {
    require(s < n_seg, "segment_mean: segment id ", s, " out of range ", n_seg);
    counts[s]++;
  }
  Tensor<Real> out = Tensor<Real>::matrix(n_seg, d);
  for (std::size_t e = 0; e < seg.size(); ++e) {
    Real* dst = out.row(seg[e]);
    const Real* src = x->val.row(e);
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  for (std::size_t s = 0; s < n_seg; ++s) {
    if (counts[s] == 0) continue;
    const Real inv = Real(1) / static_cast<Real>(counts[s]);
    Real* dst = out.row(s);
    for (std::size_t j = 0; j < d; ++j) dst[j] *= inv;
  }
  return make_node<Real>(std::move(out), {x},
                         [seg = std::move(seg), counts = std::move(counts), d](Node<Real>& self) {
                           auto& x = *self.parents[0];
                           if (!x.requires_grad) return;
                           auto& gx = x.ensure_grad();
                           for (std::size_t e = 0; e < seg.size(); ++e) {
                             const Real inv = Real(1) / static_cast<Real>(counts[seg[e]]);
                             Real* dst = gx.row(e);
                             const Real* src = self.grad.row(seg[e]);
                             for (std::size_t j = 0; j < d; ++j) dst[j] += src[j] * inv;
                           }
                         });
}

template <class Real>
Value<Real> mean_rows(const Value<Real>& x) {
  detail::check_rank2(x, "mean_rows");
  const std::size_t m = x->val.rows(), d = x->val.cols();
  require(m >= 1, "mean_rows: empty matrix");
  Tensor<Real> out = Tensor<Real>::matrix(1, d);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) out(0, j) += x->val(i, j);
  const Real inv = Real(1) / static_cast<Real>(m);
  for (std::size_t j = 0; j < d; ++j) out(0, j) *= inv;
  return make_node<Real>(std::move(out), {x}, [m, d, inv](Node<Real>& self) {
    auto& x = *self.parents[0];
    if (!x.requires_grad) return;
    auto& gx = x.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j) gx(i, j) += self.grad(0, j) * inv;
  });
}

template <class Real>
Value<Real> sum_all(const Value<Real>& x) {
  Real s = 0;
  for (std::size_t i = 0; i < x->val.numel(); ++i) s += x->val[i];
  return make_node<Real>(Tensor<Real>::scalar(s), {x}, [](Node<Real>& self) {
    auto& x = *self.parents[0];
    if (!x.requires_grad) return;
    auto& gx = x.ensure_grad();
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[0];
  });
}

// Row-wise softmax with max-subtraction. `col_allowed`, when given, masks
// columns out of the distribution (they get exactly zero probability).
template <class Real>
Value<Real> softmax_rows(const Value<Real>& x,
                         const std::vector<std::uint8_t>* col_allowed = nullptr) {
  detail::check_rank2(x, "softmax_rows");
  const std::size_t m = x->val.rows(), n = x->val.cols();
  if (col_allowed) {
    require(col_allowed->size() == n, "softmax_rows: mask size ", col_allowed->size(),
            " vs cols ", n);
    bool any = false;
    for (auto b : *col_allowed) any |= (b != 0);
    require(any, "softmax_rows: all columns masked");
  }
  Tensor<Real> out = Tensor<Real>::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!col_allowed || (*col_allowed)[j]) mx = std::max(mx, x->val(i, j));
    Real z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!col_allowed || (*col_allowed)[j]) {
        const Real e = std::exp(x->val(i, j) - mx);
        out(i, j) = e;
        z += e;
      }
    }
    const Real inv = Real(1) / z;
    for (std::size_t j = 0; j < n; ++j) out(i, j) *= inv;
  }
  return make_node<Real>(std::move(out), {x}, [m, n](Node<Real>& self) {
    auto& x = *self.parents[0];
    if (!x.requires_grad) return;
    auto& gx = x.ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad(i, j) * self.val(i, j);
      for (std::size_t j = 0; j < n; ++j)
        gx(i, j) += self.val(i, j) * (self.grad(i, j) - dot);
    }
  });
}

// Normalizes each row vector to zero mean / unit variance (biased variance
// over the last dim), then applies the affine (gain, bias).
template <class Real>
Value<Real> layer_norm(const Value<Real>& x, const Value<Real>& gain, const Value<Real>& bias,
                       double eps = 1e-5) {
  detail::check_rank2(x, "layer_norm");
  const std::size_t m = x->val.rows(), d = x->val.cols();
  require(d >= 2, "layer_norm: last dim must be >= 2, got ", x->val.shape_str());
  require(gain->val.numel() == d && bias->val.numel() == d, "layer_norm: gain/bias size vs ",
          x->val.shape_str());
  Tensor<Real> xhat = Tensor<Real>::matrix(m, d);
  std::vector<Real> inv_std(m);
  Tensor<Real> out = Tensor<Real>::matrix(m, d);
  for (std::size_t i = 0; i < m; ++i) {
    Real mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += x->val(i, j);
    mean /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const Real c = x->val(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<Real>(d);
    const Real inv = Real(1) / std::sqrt(var + static_cast<Real>(eps));
    inv_std[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const Real xh = (x->val(i, j) - mean) * inv;
      xhat(i, j) = xh;
      out(i, j) = gain->val[j] * xh + bias->val[j];
    }
  }
  return make_node<Real>(
      std::move(out), {x, gain, bias},
      [m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<Real>& self) {
        auto& x = *self.parents[0];
        auto& gain = *self.parents[1];
        auto& bias = *self.parents[2];
        if (gain.requires_grad) {
          auto& gg = gain.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) gg[j] += self.grad(i, j) * xhat(i, j);
        }
        if (bias.requires_grad) {
          auto& gb = bias.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += self.grad(i, j);
        }
        if (x.requires_grad) {
          auto& gx = x.ensure_grad();
          std::vector<Real> a(d);
          for (std::size_t i = 0; i < m; ++i) {
            Real mean_a = 0, mean_ax = 0;
            for (std::size_t j = 0; j < d; ++j) {
              a[j] = self.grad(i, j) * gain.val[j];
              mean_a += a[j];
              mean_ax += a[j] * xhat(i, j);
            }
            mean_a /= static_cast<Real>(d);
            mean_ax /= static_cast<Real>(d);
            for (std::size_t j = 0; j < d; ++j)
              gx(i, j) += inv_std[i] * (a[j] - mean_a - xhat(i, j) * mean_ax);
          }
        }
      });
}

namespace detail {
template <class Real>
Real act_forward(Real x, Act kind) {
  switch (kind) {
    case Act::Silu: return x / (Real(1) + std::exp(-x));
    case Act::Gelu: {
      const Real phi = Real(0.5) * (Real(1) + std::erf(x * Real(M_SQRT1_2)));
      return x * phi;
    }
    case Act::Relu: return x > Real(0) ? x : Real(0);
  }
  return Real(0);
}

template <class Real>
Real act_deriv(Real x, Act kind) {
  switch (kind) {
    case Act::Silu: {
      const Real s = Real(1) / (Real(1) + std::exp(-x));
      return s * (Real(1) + x * (Real(1) - s));
    }
    case Act::Gelu: {
      const Real phi = Real(0.5) * (Real(1) + std::erf(x * Real(M_SQRT1_2)));
      const Real pdf = std::exp(-x * x / Real(2)) * Real(0.3989422804014327);
      return phi + x * pdf;
    }
    case Act::Relu: return x > Real(0) ? Real(1) : Real(0);
  }
  return Real(0);
}
} // namespace detail

template <class Real>
Value<Real> activation(const Value<Real>& x, Act kind) {
  Tensor<Real> out = x->val;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = detail::act_forward(out[i], kind);
  return make_node<Real>(std::move(out), {x}, [kind](Node<Real>& self) {
    auto& x = *self.parents[0];
    if (!x.requires_grad) return;
    auto& gx = x.ensure_grad();
    for (std::size_t i = 0; i < gx.numel(); ++i)
      gx[i] += self.grad[i] * detail::act_deriv(x.val[i], kind);
  });
}

template <class Real>
Value<Real> exp_elem(const Value<Real>& x) {
  Tensor<Real> out = x->val;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  return make_node<Real>(std::move(out), {x}, [](Node<Real>& self) {
    auto& x = *self.parents[0];
    if (!x.requires_grad) return;
    auto& gx = x.ensure_grad();
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[i] * self.val[i];
  });
}

// matrix * scalar node (1x1), e.g. a learnable temperature.
template <class Real>
Value<Real> mul_scalar_node(const Value<Real>& a, const Value<Real>& s) {
  require(s->val.numel() == 1, "mul_scalar_node: scalar operand has shape ",
          s->val.shape_str());
  const Real sv = s->val[0];
  Tensor<Real> out = a->val;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= sv;
  return make_node<Real>(std::move(out), {a, s}, [sv](Node<Real>& self) {
    auto& a = *self.parents[0];
    auto& s = *self.parents[1];
    if (a.requires_grad) {
      auto& ga = a.ensure_grad();
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i] * sv;
    }
    if (s.requires_grad) {
      auto& gs = s.ensure_grad();
      Real acc = 0;
      for (std::size_t i = 0; i < a.val.numel(); ++i) acc += self.grad[i] * a.val[i];
      gs[0] += acc;
    }
  });
}

template <class Real>
Value<Real> l2_normalize_rows(const Value<Real>& x) {
  detail::check_rank2(x, "l2_normalize_rows");
  const std::size_t m = x->val.rows(), d = x->val.cols();
  std::vector<Real> norms(m);
  Tensor<Real> out = Tensor<Real>::matrix(m, d);
  for (std::size_t i = 0; i < m; ++i) {
    Real s = 0;
    for (std::size_t j = 0; j < d; ++j) s += x->val(i, j) * x->val(i, j);
    const Real nrm = std::sqrt(s);
    require(nrm > Real(0), "l2_normalize_rows: zero-norm row ", i);
    norms[i] = nrm;
    for (std::size_t j = 0; j < d; ++j) out(i, j) = x->val(i, j) / nrm;
  }
  return make_node<Real>(std::move(out), {x},
                         [m, d, norms = std::move(norms)](Node<Real>& self) {
                           auto& x = *self.parents[0];
                           if (!x.requires_grad) return;
                           auto& gx = x.ensure_grad();
                           for (std::size_t i = 0; i < m; ++i) {
                             Real dot = 0;
                             for (std::size_t j = 0; j < d; ++j)
                               dot += self.grad(i, j) * self.val(i, j);
                             for (std::size_t j = 0; j < d; ++j)
                               gx(i, j) += (self.grad(i, j) - self.val(i, j) * dot) / norms[i];
                           }
                         });
}

// Mean over masked rows of -log softmax(logits)[label]. Unmasked rows
// contribute nothing and receive exactly zero gradient.
template <class Real>
Value<Real> cross_entropy_masked(const Value<Real>& logits, const std::vector<int>& labels,
                                 const std::vector<std::uint8_t>& mask) {
  detail::check_rank2(logits, "cross_entropy_masked");
  const std::size_t n = logits->val.rows(), c = logits->val.cols();
  require(labels.size() == n && mask.size() == n,
          "cross_entropy_masked: labels/mask size vs logits ", logits->val.shape_str());
  std::size_t n_masked = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++n_masked;
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < c,
            "cross_entropy_masked: label ", labels[i], " out of range for ", c, " classes");
  }
  require(n_masked > 0, "cross_entropy_masked: empty mask");
  Real loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    Real mx = logits->val(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits->val(i, j));
    Real z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(logits->val(i, j) - mx);
    loss += std::log(z) + mx - logits->val(i, static_cast<std::size_t>(labels[i]));
  }
  loss /= static_cast<Real>(n_masked);
  return make_node<Real>(Tensor<Real>::scalar(loss), {logits},
                         [labels, mask, n, c, n_masked](Node<Real>& self) {
                           auto& lg = *self.parents[0];
                           if (!lg.requires_grad) return;
                           auto& g = lg.ensure_grad();
                           const Real go = self.grad[0] / static_cast<Real>(n_masked);
                           for (std::size_t i = 0; i < n; ++i) {
                             if (!mask[i]) continue;
                             Real mx = lg.val(i, 0);
                             for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lg.val(i, j));
                             Real z = 0;
                             for (std::size_t j = 0; j < c; ++j)
                               z += std::exp(lg.val(i, j) - mx);
                             for (std::size_t j = 0; j < c; ++j) {
                               const Real p = std::exp(lg.val(i, j) - mx) / z;
                               const Real ind =
                                   (static_cast<std::size_t>(labels[i]) == j) ? Real(1) : Real(0);
                               g(i, j) += go * (p - ind);
                             }
                           }
                         });
}

// |pred - target| for a 1x1 prediction (training loss for MAE objectives,
// applied per sample; batch averaging happens via the backward seed).
template <class Real>
Value<Real> l1_to_target(const Value<Real>& pred, double target) {
  require(pred->val.numel() == 1, "l1_to_target: prediction has shape ",
          pred->val.shape_str());
  const Real diff = pred->val[0] - static_cast<Real>(target);
  return make_node<Real>(Tensor<Real>::scalar(std::abs(diff)), {pred}, [diff](Node<Real>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    const Real s = diff > Real(0) ? Real(1) : (diff < Real(0) ? Real(-1) : Real(0));
    p.ensure_grad()[0] += self.grad[0] * s;
  });
}

// Plain metric (not differentiable): mean absolute error.
inline double mae(const std::vector<double>& pred, const std::vector<double>& target) {
  require(pred.size() == target.size(), "mae: size mismatch ", pred.size(), " vs ",
          target.size());
  require(!pred.empty(), "mae: empty input");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

} // namespace cast
