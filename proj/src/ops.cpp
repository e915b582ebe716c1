#include "molmamba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "molmamba/error.hpp"
#include "molmamba/kernels.hpp"

namespace molmamba::ops {

namespace {

bool all_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// Fail fast when finite inputs produce non-finite output.
void check_finite(const char* op, std::span<const double> out, std::initializer_list<const Tensor*> inputs) {
  if (all_finite(out)) return;
  for (const Tensor* t : inputs) {
    if (t->defined() && !all_finite(t->data())) return;
  }
  throw NumericError(std::string(op) + ": non-finite output from finite input");
}

void require(bool cond, const char* op, const std::string& detail) {
  if (!cond) throw ShapeError(std::string(op) + ": " + detail);
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank2(const char* op, const Tensor& a) {
  require(a.rank() == 2, op, "expected rank 2, got " + shape_str(a.shape()));
}

// View of an axis as (outer, len, inner) so index = (o*len + k)*inner + i.
struct AxisView {
  std::size_t outer, len, inner;
};

AxisView axis_view(const char* op, const Shape& s, std::size_t axis) {
  require(axis < s.size() && s.size() <= 2, op, "axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  if (s.size() == 1) return {1, s[0], 1};
  return axis == 1 ? AxisView{s[0], s[1], 1} : AxisView{1, s[0], s[1]};
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

template <class F>
Tensor unary(const char* op, const Tensor& a, F&& f) {
  // f(x) -> {value, derivative}
  std::vector<double> out(a.size()), deriv(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto [v, dv] = f(x[i]);
    out[i] = v;
    deriv[i] = dv;
  }
  check_finite(op, out, {&a});
  return Tensor::make_result(a.shape(), std::move(out), {a}, [deriv = std::move(deriv)](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < deriv.size(); ++i) p.grad[i] += self.grad[i] * deriv[i];
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  check_finite("add", out, {&a, &b});
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  check_finite("sub", out, {&a, &b});
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i];
      if (pb.requires_grad) pb.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  check_finite("mul", out, {&a, &b});
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const auto& da = *pa.data;
    const auto& db = *pb.data;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i] * db[i];
      if (pb.requires_grad) pb.grad[i] += self.grad[i] * da[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary("scale", a, [s](double x) { return std::pair{x * s, s}; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double x) { return std::pair{x + s, 1.0}; });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  require(s.size() == 1, "scale_by", "scale must hold one element, got " + shape_str(s.shape()));
  const double sv = s[0];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * sv;
  check_finite("scale_by", out, {&a, &s});
  return Tensor::make_result(a.shape(), std::move(out), {a, s}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& ps = parent(self, 1);
    const double sv = (*ps.data)[0];
    double gs = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i] * sv;
      gs += self.grad[i] * (*pa.data)[i];
    }
    if (ps.requires_grad) ps.grad[0] += gs;
  });
}

Tensor add_row(const Tensor& a, const Tensor& b) {
  require_rank2("add_row", a);
  require(b.size() == a.dim(1), "add_row", "bias " + shape_str(b.shape()) + " vs " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a[i * c + j] + b[j];
  check_finite("add_row", out, {&a, &b});
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [r, c](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double g = self.grad[i * c + j];
        if (pa.requires_grad) pa.grad[i * c + j] += g;
        if (pb.requires_grad) pb.grad[j] += g;
      }
  });
}

Tensor mul_row(const Tensor& a, const Tensor& g) {
  require_rank2("mul_row", a);
  require(g.size() == a.dim(1), "mul_row", "gain " + shape_str(g.shape()) + " vs " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a[i * c + j] * g[j];
  check_finite("mul_row", out, {&a, &g});
  return Tensor::make_result(a.shape(), std::move(out), {a, g}, [r, c](Node& self) {
    Node& pa = parent(self, 0);
    Node& pg = parent(self, 1);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double gr = self.grad[i * c + j];
        if (pa.requires_grad) pa.grad[i * c + j] += gr * (*pg.data)[j];
        if (pg.requires_grad) pg.grad[j] += gr * (*pa.data)[i * c + j];
      }
  });
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  require_rank2("scale_rows", a);
  require(s.size() == a.dim(0), "scale_rows", "scales " + shape_str(s.shape()) + " vs " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a[i * c + j] * s[i];
  check_finite("scale_rows", out, {&a, &s});
  return Tensor::make_result(a.shape(), std::move(out), {a, s}, [r, c](Node& self) {
    Node& pa = parent(self, 0);
    Node& ps = parent(self, 1);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double g = self.grad[i * c + j];
        if (pa.requires_grad) pa.grad[i * c + j] += g * (*ps.data)[i];
        if (ps.requires_grad) ps.grad[i] += g * (*pa.data)[i * c + j];
      }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) { return linear(a, b, Tensor{}); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank2("linear", x);
  require_rank2("linear", w);
  require(x.dim(1) == w.dim(0), "linear", "inner extents " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  const bool has_bias = b.defined();
  if (has_bias) require(b.size() == n, "linear", "bias " + shape_str(b.shape()) + " for width " + std::to_string(n));
  std::vector<double> out(m * n, 0.0);
  if (has_bias) {
    for (std::size_t i = 0; i < m; ++i) std::copy(b.data().begin(), b.data().end(), out.begin() + i * n);
  }
  kernels::gemm(m, n, k, x.data(), false, w.data(), false, out, has_bias);
  check_finite("linear", out, {&x, &w, &b});
  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(b);
  return Tensor::make_result({m, n}, std::move(out), std::move(parents), [m, k, n, has_bias](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    if (px.requires_grad) kernels::gemm(m, k, n, self.grad, false, *pw.data, true, px.grad, true);
    if (pw.requires_grad) kernels::gemm(k, n, m, *px.data, true, self.grad, false, pw.grad, true);
    if (has_bias) {
      Node& pb = parent(self, 2);
      if (pb.requires_grad) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) pb.grad[j] += self.grad[i * n + j];
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return Tensor::make_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(numel(shape) == a.size(), "reshape", shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  require(!parts.empty(), "concat", "no inputs");
  require(axis < 2, "concat", "axis must be 0 or 1");
  for (const auto& p : parts) require_rank2("concat", p);
  const std::size_t other = parts[0].dim(1 - axis);
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require(p.dim(1 - axis) == other, "concat",
            "extent mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    offsets.push_back(total);
    total += p.dim(axis);
  }
  const Shape shape = axis == 0 ? Shape{total, other} : Shape{other, total};
  const std::size_t cols = shape[1];
  std::vector<double> out(numel(shape));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& p = parts[k];
    const std::size_t pr = p.dim(0), pc = p.dim(1);
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t oi = axis == 0 ? offsets[k] + i : i;
        const std::size_t oj = axis == 0 ? j : offsets[k] + j;
        out[oi * cols + oj] = p[i * pc + j];
      }
  }
  std::vector<Tensor> ps(parts.begin(), parts.end());
  return Tensor::make_result(shape, std::move(out), std::move(ps), [axis, offsets, cols](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      const std::size_t pr = p.shape[0], pc = p.shape[1];
      for (std::size_t i = 0; i < pr; ++i)
        for (std::size_t j = 0; j < pc; ++j) {
          const std::size_t oi = axis == 0 ? offsets[k] + i : i;
          const std::size_t oj = axis == 0 ? j : offsets[k] + j;
          p.grad[i * pc + j] += self.grad[oi * cols + oj];
        }
    }
  });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require_rank2("slice", a);
  require(axis < 2 && begin <= end && end <= a.dim(axis), "slice",
          "range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " + std::to_string(axis) +
              " of " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  const std::size_t orows = axis == 0 ? end - begin : r;
  const std::size_t ocols = axis == 1 ? end - begin : c;
  std::vector<double> out(orows * ocols);
  for (std::size_t i = 0; i < orows; ++i)
    for (std::size_t j = 0; j < ocols; ++j) {
      const std::size_t si = axis == 0 ? begin + i : i;
      const std::size_t sj = axis == 1 ? begin + j : j;
      out[i * ocols + j] = a[si * c + sj];
    }
  return Tensor::make_result({orows, ocols}, std::move(out), {a}, [=](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < orows; ++i)
      for (std::size_t j = 0; j < ocols; ++j) {
        const std::size_t si = axis == 0 ? begin + i : i;
        const std::size_t sj = axis == 1 ? begin + j : j;
        p.grad[si * c + sj] += self.grad[i * ocols + j];
      }
  });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) {
    const double e = std::exp(x);
    return std::pair{e, e};
  });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double x) { return std::pair{std::log(x), 1.0 / x}; });
}

Tensor softplus(const Tensor& a) {
  return unary("softplus", a, [](double x) { return std::pair{stable_softplus(x), stable_sigmoid(x)}; });
}

Tensor silu(const Tensor& a) {
  return unary("silu", a, [](double x) {
    const double s = stable_sigmoid(x);
    return std::pair{x * s, s * (1.0 + x * (1.0 - s))};
  });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, [](double x) {
    const double s = stable_sigmoid(x);
    return std::pair{s, s * (1.0 - s)};
  });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const AxisView v = axis_view("softmax", a.shape(), axis);
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      auto idx = [&](std::size_t k) { return (o * v.len + k) * v.inner + in; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < v.len; ++k) mx = std::max(mx, a[idx(k)]);
      double z = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) z += (out[idx(k)] = std::exp(a[idx(k)] - mx));
      for (std::size_t k = 0; k < v.len; ++k) out[idx(k)] /= z;
    }
  check_finite("softmax", out, {&a});
  return Tensor::make_result(a.shape(), out, {a}, [v, out](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t in = 0; in < v.inner; ++in) {
        auto idx = [&](std::size_t k) { return (o * v.len + k) * v.inner + in; };
        double dot = 0.0;
        for (std::size_t k = 0; k < v.len; ++k) dot += self.grad[idx(k)] * out[idx(k)];
        for (std::size_t k = 0; k < v.len; ++k) p.grad[idx(k)] += out[idx(k)] * (self.grad[idx(k)] - dot);
      }
  });
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  const AxisView v = axis_view("log_softmax", a.shape(), axis);
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      auto idx = [&](std::size_t k) { return (o * v.len + k) * v.inner + in; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < v.len; ++k) mx = std::max(mx, a[idx(k)]);
      double z = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) z += std::exp(a[idx(k)] - mx);
      const double lz = mx + std::log(z);
      for (std::size_t k = 0; k < v.len; ++k) out[idx(k)] = a[idx(k)] - lz;
    }
  check_finite("log_softmax", out, {&a});
  return Tensor::make_result(a.shape(), out, {a}, [v, out](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t in = 0; in < v.inner; ++in) {
        auto idx = [&](std::size_t k) { return (o * v.len + k) * v.inner + in; };
        double gs = 0.0;
        for (std::size_t k = 0; k < v.len; ++k) gs += self.grad[idx(k)];
        for (std::size_t k = 0; k < v.len; ++k) p.grad[idx(k)] += self.grad[idx(k)] - std::exp(out[idx(k)]) * gs;
      }
  });
}

Tensor layernorm(const Tensor& a, std::size_t axis, double eps) {
  const AxisView v = axis_view("layernorm", a.shape(), axis);
  std::vector<double> out(a.size());
  std::vector<double> inv_std(v.outer * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      auto idx = [&](std::size_t k) { return (o * v.len + k) * v.inner + in; };
      double mu = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) mu += a[idx(k)];
      mu /= static_cast<double>(v.len);
      double var = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) var += (a[idx(k)] - mu) * (a[idx(k)] - mu);
      var /= static_cast<double>(v.len);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[o * v.inner + in] = is;
      for (std::size_t k = 0; k < v.len; ++k) out[idx(k)] = (a[idx(k)] - mu) * is;
    }
  check_finite("layernorm", out, {&a});
  return Tensor::make_result(a.shape(), out, {a}, [v, out, inv_std](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    const double n = static_cast<double>(v.len);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t in = 0; in < v.inner; ++in) {
        auto idx = [&](std::size_t k) { return (o * v.len + k) * v.inner + in; };
        double mg = 0.0, mgy = 0.0;
        for (std::size_t k = 0; k < v.len; ++k) {
          mg += self.grad[idx(k)];
          mgy += self.grad[idx(k)] * out[idx(k)];
        }
        mg /= n;
        mgy /= n;
        const double is = inv_std[o * v.inner + in];
        for (std::size_t k = 0; k < v.len; ++k)
          p.grad[idx(k)] += is * (self.grad[idx(k)] - mg - out[idx(k)] * mgy);
      }
  });
}

Tensor conv1d_causal(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank2("conv1d_causal", x);
  require_rank2("conv1d_causal", w);
  const std::size_t l = x.dim(0), c = x.dim(1), k = w.dim(1);
  require(w.dim(0) == c && b.size() == c && k >= 1, "conv1d_causal",
          "x " + shape_str(x.shape()) + " w " + shape_str(w.shape()) + " b " + shape_str(b.shape()));
  std::vector<double> out(l * c);
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = b[ch];
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(k - 1);
        if (src >= 0) s += w[ch * k + j] * x[static_cast<std::size_t>(src) * c + ch];
      }
      out[t * c + ch] = s;
    }
  check_finite("conv1d_causal", out, {&x, &w, &b});
  return Tensor::make_result({l, c}, std::move(out), {x, w, b}, [l, c, k](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    Node& pb = parent(self, 2);
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = self.grad[t * c + ch];
        if (pb.requires_grad) pb.grad[ch] += g;
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(k - 1);
          if (src < 0) continue;
          const std::size_t si = static_cast<std::size_t>(src) * c + ch;
          if (pw.requires_grad) pw.grad[ch * k + j] += g * (*px.data)[si];
          if (px.requires_grad) px.grad[si] += g * (*pw.data)[ch * k + j];
        }
      }
  });
}

Tensor segment_max(const Tensor& x, std::span<const std::size_t> segment, std::size_t segments) {
  require_rank2("segment_max", x);
  const std::size_t l = x.dim(0), d = x.dim(1);
  require(segment.size() == l, "segment_max", "segment ids length " + std::to_string(segment.size()) +
                                                  " for " + shape_str(x.shape()));
  std::vector<double> out(segments * d, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> argmax(segments * d, l);
  for (std::size_t i = 0; i < l; ++i) {
    require(segment[i] < segments, "segment_max", "segment id out of range");
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t o = segment[i] * d + j;
      if (argmax[o] == l || x[i * d + j] > out[o]) {
        out[o] = x[i * d + j];
        argmax[o] = i;
      }
    }
  }
  for (std::size_t s = 0; s < segments; ++s) {
    if (d > 0 && argmax[s * d] == l) throw ShapeError("segment_max: segment " + std::to_string(s) + " is empty");
  }
  return Tensor::make_result({segments, d}, std::move(out), {x}, [d, argmax](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (std::size_t o = 0; o < argmax.size(); ++o) p.grad[argmax[o] * d + o % d] += self.grad[o];
  });
}

Tensor segment_sum(const Tensor& x, std::span<const std::size_t> segment, std::size_t segments) {
  require_rank2("segment_sum", x);
  const std::size_t l = x.dim(0), d = x.dim(1);
  require(segment.size() == l, "segment_sum", "segment ids length mismatch");
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  std::vector<double> out(segments * d, 0.0);
  for (std::size_t i = 0; i < l; ++i) {
    require(seg[i] < segments, "segment_sum", "segment id out of range");
    for (std::size_t j = 0; j < d; ++j) out[seg[i] * d + j] += x[i * d + j];
  }
  check_finite("segment_sum", out, {&x});
  return Tensor::make_result({segments, d}, std::move(out), {x}, [d, seg](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < seg.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) p.grad[i * d + j] += self.grad[seg[i] * d + j];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index) {
  require_rank2("gather_rows", table);
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < rows, "gather_rows",
            "index " + std::to_string(idx[i]) + " out of range for " + shape_str(table.shape()));
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d, out.begin() + i * d);
  }
  return Tensor::make_result({idx.size(), d}, std::move(out), {table}, [d, idx](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) p.grad[idx[i] * d + j] += self.grad[i * d + j];
  });
}

Tensor cumsum_rows(const Tensor& a) {
  require_rank2("cumsum_rows", a);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.size());
  for (std::size_t j = 0; j < c; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < r; ++i) out[i * c + j] = (s += a[i * c + j]);
  }
  check_finite("cumsum_rows", out, {&a});
  return Tensor::make_result(a.shape(), std::move(out), {a}, [r, c](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t i = r; i-- > 0;) p.grad[i * c + j] += (s += self.grad[i * c + j]);
    }
  });
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& cm) {
  require_rank2("selective_scan", u);
  require_same("selective_scan", u, delta);
  require_rank2("selective_scan", a);
  const std::size_t l = u.dim(0), c = u.dim(1), n = a.dim(1);
  require(a.dim(0) == c, "selective_scan", "A " + shape_str(a.shape()) + " vs channels " + std::to_string(c));
  require(b.shape() == Shape{l, n} && cm.shape() == Shape{l, n}, "selective_scan",
          "B " + shape_str(b.shape()) + " C " + shape_str(cm.shape()) + " expected [" + std::to_string(l) + "," +
              std::to_string(n) + "]");
  const ScanDims dims{l, c, n};
  std::vector<double> y(l * c);
  auto states = std::make_shared<std::vector<double>>(l * c * n);
  kernels::selective_scan_forward(dims, u.data(), delta.data(), a.data(), b.data(), cm.data(), y, *states);
  check_finite("selective_scan", y, {&u, &delta, &a, &b, &cm});
  return Tensor::make_result({l, c}, std::move(y), {u, delta, a, b, cm}, [dims, states](Node& self) {
    const std::size_t lc = dims.length * dims.channels, cn = dims.channels * dims.state,
                      ln = dims.length * dims.state;
    std::vector<double> gu(lc), gd(lc), ga(cn), gb(ln), gc(ln);
    kernels::selective_scan_backward(dims, *parent(self, 0).data, *parent(self, 1).data, *parent(self, 2).data,
                                     *parent(self, 3).data, *parent(self, 4).data, *states, self.grad, gu, gd, ga,
                                     gb, gc);
    const std::vector<double>* gs[5] = {&gu, &gd, &ga, &gb, &gc};
    for (std::size_t k = 0; k < 5; ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += (*gs[k])[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  check_finite("sum", std::span<const double>(&s, 1), {&a});
  return Tensor::make_result({}, {s}, {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (double& g : p.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  require(a.size() > 0, "mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor mean_rows(const Tensor& a) {
  require_rank2("mean_rows", a);
  const std::size_t r = a.dim(0), c = a.dim(1);
  require(r > 0, "mean_rows", "no rows");
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += a[i * c + j];
  for (double& x : out) x /= static_cast<double>(r);
  return Tensor::make_result({1, c}, std::move(out), {a}, [r, c](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[j] * inv;
  });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same("mse", pred, target);
  const auto d = sub(pred, target);
  return mean(mul(d, d));
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets, std::span<const double> weights) {
  require_same("bce_with_logits", logits, targets);
  const std::size_t n = logits.size();
  require(weights.empty() || weights.size() == n, "bce_with_logits", "weight count mismatch");
  std::vector<double> w(n, 1.0);
  if (!weights.empty()) w.assign(weights.begin(), weights.end());
  double wsum = 0.0, loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (w[i] == 0.0) continue;
    const double z = logits[i], t = targets[i];
    loss += w[i] * (std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z))));
    wsum += w[i];
  }
  loss = wsum > 0.0 ? loss / wsum : 0.0;
  check_finite("bce_with_logits", std::span<const double>(&loss, 1), {&logits, &targets});
  return Tensor::make_result({}, {loss}, {logits, targets}, [w, wsum](Node& self) {
    if (wsum <= 0.0) return;
    Node& pz = parent(self, 0);
    Node& pt = parent(self, 1);
    const double g = self.grad[0] / wsum;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] == 0.0) continue;
      const double z = (*pz.data)[i];
      if (pz.requires_grad) pz.grad[i] += g * w[i] * (stable_sigmoid(z) - (*pt.data)[i]);
      if (pt.requires_grad) pt.grad[i] -= g * w[i] * z;
    }
  });
}

Tensor cross_entropy(const Tensor& logits, const Tensor& target_probs) {
  require_same("cross_entropy", logits, target_probs);
  require_rank2("cross_entropy", logits);
  require(logits.dim(0) > 0, "cross_entropy", "no rows");
  const auto ls = log_softmax(logits, 1);
  return scale(sum(mul(target_probs, ls)), -1.0 / static_cast<double>(logits.dim(0)));
}

Tensor masked_row_mse(const Tensor& pred, const Tensor& target, const std::vector<bool>& mask) {
  require_same("masked_row_mse", pred, target);
  require_rank2("masked_row_mse", pred);
  const std::size_t r = pred.dim(0), c = pred.dim(1);
  require(mask.size() == r, "masked_row_mse", "mask length " + std::to_string(mask.size()) + " for " +
                                                  shape_str(pred.shape()));
  std::vector<bool> m(mask.begin(), mask.end());
  const auto count = static_cast<double>(std::count(m.begin(), m.end(), true));
  if (count == 0.0) throw ValidationError("masked_row_mse: mask selects no rows");
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (!m[i]) continue;
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = pred[i * c + j] - target[i * c + j];
      row += e * e;
    }
    loss += row / static_cast<double>(c);
  }
  loss /= count;
  check_finite("masked_row_mse", std::span<const double>(&loss, 1), {&pred, &target});
  return Tensor::make_result({}, {loss}, {pred, target}, [m, count, r, c](Node& self) {
    Node& pp = parent(self, 0);
    Node& pt = parent(self, 1);
    const double g = self.grad[0] * 2.0 / (count * static_cast<double>(c));
    for (std::size_t i = 0; i < r; ++i) {
      if (!m[i]) continue;
      for (std::size_t j = 0; j < c; ++j) {
        const double e = (*pp.data)[i * c + j] - (*pt.data)[i * c + j];
        if (pp.requires_grad) pp.grad[i * c + j] += g * e;
        if (pt.requires_grad) pt.grad[i * c + j] -= g * e;
      }
    }
  });
}

}  // namespace molmamba::ops
