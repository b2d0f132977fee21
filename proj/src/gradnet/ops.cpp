#include "ceia/gradnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "ceia/error.hpp"

namespace ceia::gradnet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::size_t last_dim(const Tensor& t, const char* op) {
  CEIA_REQUIRE(t.rank() >= 1 && t.shape().back() > 0,
               std::string(op) + ": empty rows");
  return t.shape().back();
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, const char* name, Fwd fwd, Deriv deriv) {
  auto in = a.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result(a.shape(), std::move(out), name, {a},
                     [deriv](Node& self) {
                       Node& p = *self.parents[0];
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         p.grad[i] +=
                             self.grad[i] * deriv(p.value[i], self.value[i]);
                     });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b) {
  CEIA_REQUIRE(a.rank() >= 2 && b.rank() == 2,
               "matmul: expected rank>=2 lhs and rank-2 rhs, got " +
                   shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t k = a.shape().back();
  const std::size_t m = a.size() / k;
  const std::size_t bk = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  CEIA_REQUIRE(k == bk, "matmul: shape mismatch " + shape_str(a.shape()) +
                            " x " + shape_str(b.shape()) +
                            (trans_b ? "^T" : ""));
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(m * n);
  CMapMat A(a.values().data(), m, k);
  MapMat C(out.data(), m, n);
  if (trans_b) {
    CMapMat B(b.values().data(), n, k);
    C.noalias() = A * B.transpose();
  } else {
    CMapMat B(b.values().data(), k, n);
    C.noalias() = A * B;
  }
  return make_result(
      std::move(out_shape), std::move(out), "matmul", {a, b},
      [m, k, n, trans_b](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        CMapMat G(self.grad.data(), m, n);
        if (pa.requires_grad) {
          MapMat dA(pa.grad.data(), m, k);
          if (trans_b)
            dA.noalias() += G * CMapMat(pb.value.data(), n, k);
          else
            dA.noalias() += G * CMapMat(pb.value.data(), k, n).transpose();
        }
        if (pb.requires_grad) {
          CMapMat A(pa.value.data(), m, k);
          if (trans_b)
            MapMat(pb.grad.data(), n, k).noalias() += G.transpose() * A;
          else
            MapMat(pb.grad.data(), k, n).noalias() += A.transpose() * G;
        }
      });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
  CEIA_REQUIRE(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0),
               "bmm: expected [G,M,K] x [G,K,N], got " + shape_str(a.shape()) +
                   " x " + shape_str(b.shape()));
  const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t bk = trans_b ? b.dim(2) : b.dim(1);
  const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
  CEIA_REQUIRE(k == bk, "bmm: inner dimension mismatch " +
                            shape_str(a.shape()) + " x " +
                            shape_str(b.shape()));
  std::vector<double> out(g * m * n);
  for (std::size_t i = 0; i < g; ++i) {
    CMapMat A(a.values().data() + i * m * k, m, k);
    MapMat C(out.data() + i * m * n, m, n);
    if (trans_b)
      C.noalias() = A * CMapMat(b.values().data() + i * n * k, n, k).transpose();
    else
      C.noalias() = A * CMapMat(b.values().data() + i * k * n, k, n);
  }
  return make_result(
      {g, m, n}, std::move(out), "bmm", {a, b},
      [g, m, k, n, trans_b](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (std::size_t i = 0; i < g; ++i) {
          CMapMat G(self.grad.data() + i * m * n, m, n);
          const double* bv = pb.value.data() + i * k * n;
          if (pa.requires_grad) {
            MapMat dA(pa.grad.data() + i * m * k, m, k);
            if (trans_b)
              dA.noalias() += G * CMapMat(bv, n, k);
            else
              dA.noalias() += G * CMapMat(bv, k, n).transpose();
          }
          if (pb.requires_grad) {
            CMapMat A(pa.value.data() + i * m * k, m, k);
            if (trans_b)
              MapMat(pb.grad.data() + i * n * k, n, k).noalias() +=
                  G.transpose() * A;
            else
              MapMat(pb.grad.data() + i * k * n, k, n).noalias() +=
                  A.transpose() * G;
          }
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  CEIA_REQUIRE(is_suffix(a.shape(), b.shape()),
               "add: cannot broadcast " + shape_str(b.shape()) + " onto " +
                   shape_str(a.shape()));
  const std::size_t inner = b.size();
  std::vector<double> out(a.values().begin(), a.values().end());
  const double* bv = b.values().data();
  for (std::size_t off = 0; off < out.size(); off += inner)
    for (std::size_t j = 0; j < inner; ++j) out[off + j] += bv[j];
  return make_result(a.shape(), std::move(out), "add", {a, b},
                     [inner](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       const std::size_t n = self.grad.size();
                       if (pa.requires_grad)
                         for (std::size_t i = 0; i < n; ++i)
                           pa.grad[i] += self.grad[i];
                       if (pb.requires_grad)
                         for (std::size_t off = 0; off < n; off += inner)
                           for (std::size_t j = 0; j < inner; ++j)
                             pb.grad[j] += self.grad[off + j];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  CEIA_REQUIRE(a.shape() == b.shape(), "mul: shape mismatch " +
                                           shape_str(a.shape()) + " vs " +
                                           shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] * b.values()[i];
  return make_result(a.shape(), std::move(out), "mul", {a, b},
                     [](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         if (pa.requires_grad)
                           pa.grad[i] += self.grad[i] * pb.value[i];
                         if (pb.requires_grad)
                           pb.grad[i] += self.grad[i] * pa.value[i];
                       }
                     });
}

Tensor scale(const Tensor& a, double c) {
  return unary(
      a, "scale", [c](double x) { return c * x; },
      [c](double, double) { return c; });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  CEIA_REQUIRE(s.size() == 1, "mul_scalar: scale must hold one value");
  const double c = s.item();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  return make_result(a.shape(), std::move(out), "mul_scalar", {a, s},
                     [](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& ps = *self.parents[1];
                       const double c = ps.value[0];
                       double acc = 0.0;
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         if (pa.requires_grad) pa.grad[i] += self.grad[i] * c;
                         acc += self.grad[i] * pa.value[i];
                       }
                       if (ps.requires_grad) ps.grad[0] += acc;
                     });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  last_dim(a, "log");
  return unary(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      a, "gelu",
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
               x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
}

Tensor l2_normalize(const Tensor& a) {
  const std::size_t d = last_dim(a, "l2_normalize");
  const std::size_t rows = a.size() / d;
  std::vector<double> out(a.size());
  std::vector<double> norms(rows);
  auto in = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += in[r * d + j] * in[r * d + j];
    double nrm = std::max(std::sqrt(ss), 1e-12);
    norms[r] = nrm;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = in[r * d + j] / nrm;
  }
  return make_result(a.shape(), std::move(out), "l2_normalize", {a},
                     [d, rows, norms = std::move(norms)](Node& self) {
                       Node& p = *self.parents[0];
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.value.data() + r * d;
                         const double* g = self.grad.data() + r * d;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
                         for (std::size_t j = 0; j < d; ++j)
                           p.grad[r * d + j] += (g[j] - y[j] * dot) / norms[r];
                       }
                     });
}

Tensor softmax(const Tensor& a) {
  const std::size_t d = last_dim(a, "softmax");
  const std::size_t rows = a.size() / d;
  std::vector<double> out(a.size());
  auto in = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in.data() + r * d;
    double* y = out.data() + r * d;
    double mx = *std::max_element(x, x + d);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < d; ++j) y[j] /= s;
  }
  return make_result(a.shape(), std::move(out), "softmax", {a},
                     [d, rows](Node& self) {
                       Node& p = *self.parents[0];
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.value.data() + r * d;
                         const double* g = self.grad.data() + r * d;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
                         for (std::size_t j = 0; j < d; ++j)
                           p.grad[r * d + j] += y[j] * (g[j] - dot);
                       }
                     });
}

Tensor log_softmax(const Tensor& a) {
  const std::size_t d = last_dim(a, "log_softmax");
  const std::size_t rows = a.size() / d;
  std::vector<double> out(a.size());
  auto in = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in.data() + r * d;
    double mx = *std::max_element(x, x + d);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += std::exp(x[j] - mx);
    double lse = mx + std::log(s);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[j] - lse;
  }
  return make_result(a.shape(), std::move(out), "log_softmax", {a},
                     [d, rows](Node& self) {
                       Node& p = *self.parents[0];
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.value.data() + r * d;
                         const double* g = self.grad.data() + r * d;
                         double gs = 0.0;
                         for (std::size_t j = 0; j < d; ++j) gs += g[j];
                         for (std::size_t j = 0; j < d; ++j)
                           p.grad[r * d + j] += g[j] - std::exp(y[j]) * gs;
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const std::size_t d = last_dim(x, "layer_norm");
  CEIA_REQUIRE(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
               "layer_norm: affine parameters must have shape [" +
                   std::to_string(d) + "]");
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size()), xhat(x.size()), rstd(rows);
  auto in = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      double h = (xr[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data() + r * d;
          const double* h = xhat.data() + r * d;
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            double dh = g[j] * pg.value[j];
            s1 += dh;
            s2 += dh * h[j];
            if (pg.requires_grad) pg.grad[j] += g[j] * h[j];
            if (pb.requires_grad) pb.grad[j] += g[j];
          }
          if (px.requires_grad)
            for (std::size_t j = 0; j < d; ++j) {
              double dh = g[j] * pg.value[j];
              px.grad[r * d + j] +=
                  rstd[r] * (dh - s1 * inv_d - h[j] * s2 * inv_d);
            }
        }
      });
}

Tensor mean(const Tensor& a) {
  CEIA_REQUIRE(a.size() > 0, "mean: empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  return make_result({1}, {s * inv}, "mean", {a}, [inv](Node& self) {
    Node& p = *self.parents[0];
    const double g = self.grad[0] * inv;
    for (auto& v : p.grad) v += g;
  });
}

Tensor mean_tokens(const Tensor& a) {
  CEIA_REQUIRE(a.rank() >= 2, "mean_tokens: need rank >= 2");
  const std::size_t e = a.shape().back();
  const std::size_t t = a.shape()[a.rank() - 2];
  CEIA_REQUIRE(t > 0 && e > 0, "mean_tokens: empty rows");
  const std::size_t outer = a.size() / (t * e);
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(e);
  std::vector<double> out(outer * e, 0.0);
  const double inv = 1.0 / static_cast<double>(t);
  auto in = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < e; ++j)
        out[o * e + j] += in[(o * t + i) * e + j] * inv;
  return make_result(std::move(out_shape), std::move(out), "mean_tokens", {a},
                     [outer, t, e, inv](Node& self) {
                       Node& p = *self.parents[0];
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < t; ++i)
                           for (std::size_t j = 0; j < e; ++j)
                             p.grad[(o * t + i) * e + j] +=
                                 self.grad[o * e + j] * inv;
                     });
}

Tensor transpose(const Tensor& a) {
  CEIA_REQUIRE(a.rank() == 2, "transpose: expected rank 2");
  return permute(a, {1, 0});
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  const std::size_t r = a.rank();
  CEIA_REQUIRE(r >= 1 && perm.size() == r, "permute: rank mismatch");
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    CEIA_REQUIRE(p < r && !seen[p], "permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.dim(perm[i]);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;)
    in_stride[i - 1] = in_stride[i] * a.dim(i);
  // Copy contiguous runs when the last axis stays in place.
  const std::size_t run = perm.back() == r - 1 ? a.dim(r - 1) : 1;
  const std::size_t outer_rank = run > 1 ? r - 1 : r;
  std::vector<std::size_t> src(run > 0 ? a.size() / run : 0);
  std::vector<std::size_t> idx(outer_rank, 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < outer_rank; ++i) off += idx[i] * in_stride[perm[i]];
    src[flat] = off;
    for (std::size_t i = outer_rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(a.size());
  const double* in = a.values().data();
  for (std::size_t i = 0; i < src.size(); ++i)
    std::copy_n(in + src[i], run, out.data() + i * run);
  return make_result(std::move(out_shape), std::move(out), "permute", {a},
                     [src = std::move(src), run](Node& self) {
                       Node& p = *self.parents[0];
                       for (std::size_t i = 0; i < src.size(); ++i) {
                         double* dst = p.grad.data() + src[i];
                         const double* g = self.grad.data() + i * run;
                         for (std::size_t j = 0; j < run; ++j) dst[j] += g[j];
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  CEIA_REQUIRE(numel(shape) == a.size(), "reshape: cannot view " +
                                             shape_str(a.shape()) + " as " +
                                             shape_str(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result(std::move(shape), std::move(out), "reshape", {a},
                     [](Node& self) {
                       Node& p = *self.parents[0];
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         p.grad[i] += self.grad[i];
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin,
             std::size_t end) {
  CEIA_REQUIRE(axis < a.rank() && begin < end && end <= a.dim(axis),
               "slice: range out of bounds for " + shape_str(a.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t len = end - begin, full = a.dim(axis);
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  std::vector<double> out(outer * len * inner);
  auto in = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(in.begin() + (o * full + begin) * inner, len * inner,
                out.begin() + o * len * inner);
  return make_result(std::move(out_shape), std::move(out), "slice", {a},
                     [outer, inner, len, full, begin](Node& self) {
                       Node& p = *self.parents[0];
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < len * inner; ++i)
                           p.grad[(o * full + begin) * inner + i] +=
                               self.grad[o * len * inner + i];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  CEIA_REQUIRE(!parts.empty(), "concat: no inputs");
  const Shape& ref = parts[0].shape();
  CEIA_REQUIRE(axis < ref.size(), "concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    CEIA_REQUIRE(p.rank() == ref.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i)
      CEIA_REQUIRE(i == axis || p.dim(i) == ref[i],
                   "concat: incompatible shapes " + shape_str(ref) + " and " +
                       shape_str(p.shape()));
    lens.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto in = parts[k].values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(in.begin() + o * lens[k] * inner, lens[k] * inner,
                  out.begin() + (o * total + off) * inner);
    off += lens[k];
  }
  return make_result(std::move(out_shape), std::move(out), "concat", parts,
                     [outer, inner, total, lens](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < lens.size(); ++k) {
                         Node& p = *self.parents[k];
                         if (p.requires_grad)
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t i = 0; i < lens[k] * inner; ++i)
                               p.grad[o * lens[k] * inner + i] +=
                                   self.grad[(o * total + off) * inner + i];
                         off += lens[k];
                       }
                     });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids,
                        const Shape& ids_shape) {
  CEIA_REQUIRE(table.rank() == 2, "embedding_lookup: table must be rank 2");
  CEIA_REQUIRE(numel(ids_shape) == ids.size(),
               "embedding_lookup: id count does not match id shape");
  const std::size_t v = table.dim(0), e = table.dim(1);
  for (int id : ids)
    CEIA_REQUIRE(id >= 0 && static_cast<std::size_t>(id) < v,
                 "embedding_lookup: id " + std::to_string(id) +
                     " out of range [0," + std::to_string(v) + ")");
  Shape out_shape = ids_shape;
  out_shape.push_back(e);
  std::vector<double> out(ids.size() * e);
  auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.begin() + ids[i] * e, e, out.begin() + i * e);
  std::vector<int> idv(ids.begin(), ids.end());
  return make_result(std::move(out_shape), std::move(out), "embedding_lookup",
                     {table}, [e, idv = std::move(idv)](Node& self) {
                       Node& p = *self.parents[0];
                       for (std::size_t i = 0; i < idv.size(); ++i)
                         for (std::size_t j = 0; j < e; ++j)
                           p.grad[idv[i] * e + j] += self.grad[i * e + j];
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  CEIA_REQUIRE(logits.rank() == 2, "cross_entropy: logits must be [N,K]");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  CEIA_REQUIRE(n > 0 && k > 0, "cross_entropy: empty logits");
  CEIA_REQUIRE(labels.size() == n, "cross_entropy: label count mismatch");
  for (int l : labels)
    CEIA_REQUIRE(l >= 0 && static_cast<std::size_t>(l) < k,
                 "cross_entropy: label " + std::to_string(l) +
                     " out of range [0," + std::to_string(k) + ")");
  std::vector<double> prob(n * k);
  double loss = 0.0;
  auto in = logits.values();
  for (std::size_t r = 0; r < n; ++r) {
    const double* x = in.data() + r * k;
    double mx = *std::max_element(x, x + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(x[j] - mx);
    double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j)
      prob[r * k + j] = std::exp(x[j] - lse);
    loss += lse - x[labels[r]];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result(
      {1}, {loss * inv_n}, "cross_entropy", {logits},
      [n, k, inv_n, prob = std::move(prob), lab = std::move(lab)](Node& self) {
        Node& p = *self.parents[0];
        const double g = self.grad[0] * inv_n;
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < k; ++j)
            p.grad[r * k + j] +=
                g * (prob[r * k + j] - (static_cast<int>(j) == lab[r] ? 1.0 : 0.0));
      });
}

}  // namespace ceia::gradnet
