#include "kanite/ops.hpp"

#include <algorithm>
#include <cmath>

namespace kanite {

namespace {

struct EwPlan {
  Shape out_shape;
  std::size_t n;      // output numel
  std::size_t a_mod;  // operand flat index = i % mod
  std::size_t b_mod;
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() >= big.size()) return false;
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
  }
  return true;
}

EwPlan ew_plan(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    return {a.shape(), a.numel(), a.numel(), b.numel()};
  }
  if (a.numel() == 1 && b.numel() == 1) {
    const Shape& s = a.ndim() >= b.ndim() ? a.shape() : b.shape();
    return {s, 1, 1, 1};
  }
  if (a.numel() == 1) return {b.shape(), b.numel(), 1, b.numel()};
  if (b.numel() == 1) return {a.shape(), a.numel(), a.numel(), 1};
  if (is_suffix(b.shape(), a.shape())) {
    return {a.shape(), a.numel(), a.numel(), b.numel()};
  }
  if (is_suffix(a.shape(), b.shape())) {
    return {b.shape(), b.numel(), a.numel(), b.numel()};
  }
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                   " and " + shape_str(b.shape()) + " do not broadcast");
}

bool want_grad(const Tensor& a) { return Tape::active() && a.requires_grad(); }
bool want_grad(const Tensor& a, const Tensor& b) {
  return Tape::active() && (a.requires_grad() || b.requires_grad());
}

void check_finite(const char* op, const std::vector<double>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NonFiniteError(std::string(op) + ": non-finite result at flat index " +
                           std::to_string(i));
    }
  }
}

// operand flat index for output index i; mod == n means identity, mod == 1 a
// one-element broadcast, otherwise a trailing-suffix repeat
inline std::size_t ew_index(std::size_t i, std::size_t mod) {
  return mod == 1 ? 0 : i % mod;
}

template <class Fwd, class Bwd>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd,
                 Bwd bwd) {
  EwPlan plan = ew_plan(op, a, b);
  std::vector<double> out(plan.n);
  const auto& av = a.values();
  const auto& bv = b.values();
  if (plan.a_mod == plan.n && plan.b_mod == plan.n) {
    for (std::size_t i = 0; i < plan.n; ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < plan.n; ++i) {
      out[i] = fwd(av[ew_index(i, plan.a_mod)], bv[ew_index(i, plan.b_mod)]);
    }
  }
  check_finite(op, out);
  Tensor result(plan.out_shape, std::move(out), want_grad(a, b));
  if (result.requires_grad()) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = result.impl();
    Tape::active()->record(result, [=]() {
      const auto& g = oi->grad;
      bool ga = ai->requires_grad || ai->tape != nullptr;
      bool gb = bi->requires_grad || bi->tape != nullptr;
      if (ga && ai->grad.empty()) ai->grad.assign(ai->value.size(), 0.0);
      if (gb && bi->grad.empty()) bi->grad.assign(bi->value.size(), 0.0);
      if (ga && gb && plan.a_mod == plan.n && plan.b_mod == plan.n) {
        for (std::size_t i = 0; i < plan.n; ++i) {
          auto [da, db] = bwd(ai->value[i], bi->value[i]);
          ai->grad[i] += g[i] * da;
          bi->grad[i] += g[i] * db;
        }
        return;
      }
      for (std::size_t i = 0; i < plan.n; ++i) {
        std::size_t ia = ew_index(i, plan.a_mod);
        std::size_t ib = ew_index(i, plan.b_mod);
        auto [da, db] = bwd(ai->value[ia], bi->value[ib]);
        if (ga) ai->grad[ia] += g[i] * da;
        if (gb) bi->grad[ib] += g[i] * db;
      }
    });
  }
  return result;
}

template <class Fwd, class Dfdx>
Tensor unary_op(const char* op, const Tensor& x, Fwd fwd, Dfdx dfdx) {
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  check_finite(op, out);
  Tensor result(x.shape(), std::move(out), want_grad(x));
  if (result.requires_grad()) {
    auto xi = x.impl();
    auto oi = result.impl();
    Tape::active()->record(result, [=]() {
      if (xi->grad.empty()) xi->grad.assign(xi->value.size(), 0.0);
      for (std::size_t i = 0; i < oi->value.size(); ++i) {
        xi->grad[i] += oi->grad[i] * dfdx(xi->value[i], oi->value[i]);
      }
    });
  }
  return result;
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair<double, double>{y, x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  const auto& bv = b.values();
  for (std::size_t i = 0; i < bv.size(); ++i) {
    if (bv[i] == 0.0) {
      throw DomainError("div: zero divisor at flat index " + std::to_string(i));
    }
  }
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y) {
        return std::pair<double, double>{1.0 / y, -x / (y * y)};
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 1 || a.ndim() > 2 || b.ndim() < 1 || b.ndim() > 2 ||
      (a.ndim() == 1 && b.ndim() == 1)) {
    throw ShapeError("matmul: unsupported ranks " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  std::size_t n = a.ndim() == 2 ? a.dim(0) : 1;
  std::size_t m = a.ndim() == 2 ? a.dim(1) : a.dim(0);
  std::size_t m2 = b.ndim() == 2 ? b.dim(0) : b.dim(0);
  std::size_t p = b.ndim() == 2 ? b.dim(1) : 1;
  if (m != m2) {
    throw ShapeError("matmul: inner dimensions differ, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(n * p, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      double aik = av[i * m + k];
      if (aik == 0.0) continue;
      const double* brow = bv.data() + k * p;
      double* orow = out.data() + i * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
    }
  }
  check_finite("matmul", out);
  Shape out_shape;
  if (a.ndim() == 1) {
    out_shape = Shape{p};
  } else if (b.ndim() == 1) {
    out_shape = Shape{n};
  } else {
    out_shape = Shape{n, p};
  }
  Tensor result(out_shape, std::move(out), want_grad(a, b));
  if (result.requires_grad()) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = result.impl();
    Tape::active()->record(result, [=]() {
      const auto& g = oi->grad;
      bool ga = ai->requires_grad || ai->tape != nullptr;
      bool gb = bi->requires_grad || bi->tape != nullptr;
      if (ga) {
        if (ai->grad.empty()) ai->grad.assign(ai->value.size(), 0.0);
        // dA = g @ B^T
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < m; ++k) {
            double acc = 0.0;
            const double* grow = g.data() + i * p;
            const double* brow = bi->value.data() + k * p;
            for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
            ai->grad[i * m + k] += acc;
          }
        }
      }
      if (gb) {
        if (bi->grad.empty()) bi->grad.assign(bi->value.size(), 0.0);
        // dB = A^T @ g
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < m; ++k) {
            double aik = ai->value[i * m + k];
            if (aik == 0.0) continue;
            const double* grow = g.data() + i * p;
            double* brow = bi->grad.data() + k * p;
            for (std::size_t j = 0; j < p; ++j) brow[j] += aik * grow[j];
          }
        }
      }
    });
  }
  return result;
}

Tensor transpose(const Tensor& t) {
  if (t.ndim() != 2) throw ShapeError("transpose: tensor is not 2-d");
  std::size_t r = t.dim(0), c = t.dim(1);
  std::vector<double> out(r * c);
  const auto& v = t.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  }
  Tensor result(Shape{c, r}, std::move(out), want_grad(t));
  if (result.requires_grad()) {
    auto ti = t.impl();
    auto oi = result.impl();
    Tape::active()->record(result, [=]() {
      if (ti->grad.empty()) ti->grad.assign(ti->value.size(), 0.0);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          ti->grad[i * c + j] += oi->grad[j * r + i];
        }
      }
    });
  }
  return result;
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(t.shape()) + " as " +
                     shape_str(shape));
  }
  Tensor result(shape, t.values(), want_grad(t));
  if (result.requires_grad()) {
    auto ti = t.impl();
    auto oi = result.impl();
    Tape::active()->record(result, [=]() {
      if (ti->grad.empty()) ti->grad.assign(ti->value.size(), 0.0);
      for (std::size_t i = 0; i < oi->grad.size(); ++i) {
        ti->grad[i] += oi->grad[i];
      }
    });
  }
  return result;
}

namespace {

Tensor reduce_op(const char* op, const Tensor& t, int dim, bool take_mean) {
  if (dim == -1) {  // full reduction to scalar
    double acc = 0.0;
    for (double v : t.values()) acc += v;
    double scale = take_mean ? 1.0 / static_cast<double>(t.numel()) : 1.0;
    if (!std::isfinite(acc * scale)) {
      throw NonFiniteError(std::string(op) + ": non-finite reduction result");
    }
    Tensor result = Tensor(Shape{}, {acc * scale}, false);
    if (want_grad(t)) {
      result.set_requires_grad(true);
      auto ti = t.impl();
      auto oi = result.impl();
      Tape::active()->record(result, [=]() {
        if (ti->grad.empty()) ti->grad.assign(ti->value.size(), 0.0);
        double g = oi->grad[0] * scale;
        for (auto& gv : ti->grad) gv += g;
      });
    }
    return result;
  }
  if (t.ndim() != 2 || (dim != 0 && dim != 1)) {
    throw ShapeError(std::string(op) + ": dim reduction needs a 2-d tensor");
  }
  std::size_t r = t.dim(0), c = t.dim(1);
  std::size_t out_n = dim == 0 ? c : r;
  std::size_t count = dim == 0 ? r : c;
  double scale = take_mean ? 1.0 / static_cast<double>(count) : 1.0;
  std::vector<double> out(out_n, 0.0);
  const auto& v = t.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      out[dim == 0 ? j : i] += v[i * c + j];
    }
  }
  for (auto& x : out) x *= scale;
  check_finite(op, out);
  Tensor result(Shape{out_n}, std::move(out), want_grad(t));
  if (result.requires_grad()) {
    auto ti = t.impl();
    auto oi = result.impl();
    Tape::active()->record(result, [=]() {
      if (ti->grad.empty()) ti->grad.assign(ti->value.size(), 0.0);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          ti->grad[i * c + j] += oi->grad[dim == 0 ? j : i] * scale;
        }
      }
    });
  }
  return result;
}

}  // namespace

Tensor sum(const Tensor& t) { return reduce_op("sum", t, -1, false); }
Tensor sum(const Tensor& t, int dim) { return reduce_op("sum", t, dim, false); }
Tensor mean(const Tensor& t) { return reduce_op("mean", t, -1, true); }
Tensor mean(const Tensor& t, int dim) { return reduce_op("mean", t, dim, true); }

Tensor exp(const Tensor& t) {
  return unary_op(
      "exp", t, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& t) {
  const auto& v = t.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] <= 0.0) {
      throw DomainError("log: non-positive value " + std::to_string(v[i]) +
                        " at flat index " + std::to_string(i));
    }
  }
  return unary_op(
      "log", t, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor pow(const Tensor& t, double exponent) {
  double ip;
  bool integral = std::modf(exponent, &ip) == 0.0;
  const auto& v = t.values();
  if (!integral) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] < 0.0 || (v[i] == 0.0 && exponent < 1.0)) {
        throw DomainError("pow: base " + std::to_string(v[i]) +
                          " outside domain at flat index " + std::to_string(i));
      }
    }
  }
  return unary_op(
      "pow", t, [=](double x) { return std::pow(x, exponent); },
      [=](double x, double) { return exponent * std::pow(x, exponent - 1.0); });
}

Tensor relu(const Tensor& t) {
  return unary_op(
      "relu", t, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& t) {
  return unary_op(
      "silu", t, [](double x) { return x * sigmoid(x); },
      [](double x, double) {
        double s = sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor square(const Tensor& t) {
  return unary_op(
      "square", t, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor softmax_rows(const Tensor& t) {
  if (t.ndim() != 2) throw ShapeError("softmax_rows: tensor is not 2-d");
  std::size_t r = t.dim(0), c = t.dim(1);
  if (c == 0) throw ShapeError("softmax_rows: empty rows");
  std::vector<double> out(r * c);
  const auto& v = t.values();
  for (std::size_t i = 0; i < r; ++i) {
    double mx = v[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, v[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(v[i * c + j] - mx);
      z += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  check_finite("softmax_rows", out);
  Tensor result(t.shape(), std::move(out), want_grad(t));
  if (result.requires_grad()) {
    auto ti = t.impl();
    auto oi = result.impl();
    Tape::active()->record(result, [=]() {
      if (ti->grad.empty()) ti->grad.assign(ti->value.size(), 0.0);
      for (std::size_t i = 0; i < r; ++i) {
        const double* y = oi->value.data() + i * c;
        const double* g = oi->grad.data() + i * c;
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < c; ++j) {
          ti->grad[i * c + j] += y[j] * (g[j] - dot);
        }
      }
    });
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, int dim) {
  if (parts.empty()) throw ShapeError("concat: no tensors");
  std::size_t nd = parts[0].ndim();
  if (nd == 0 || nd > 2 || dim < 0 || static_cast<std::size_t>(dim) >= nd) {
    throw ShapeError("concat: unsupported rank/dim");
  }
  for (const auto& p : parts) {
    if (p.ndim() != nd) throw ShapeError("concat: mixed ranks");
    for (std::size_t d = 0; d < nd; ++d) {
      if (static_cast<int>(d) != dim && p.dim(d) != parts[0].dim(d)) {
        throw ShapeError("concat: shapes disagree off the concat dim");
      }
    }
  }
  bool rg = false;
  for (const auto& p : parts) rg = rg || (Tape::active() && p.requires_grad());

  Shape out_shape = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) total += p.dim(dim);
  out_shape[dim] = total;

  std::vector<double> out(shape_numel(out_shape));
  std::size_t rows_out = nd == 2 ? out_shape[0] : 1;
  std::size_t cols_out = nd == 2 ? out_shape[1] : out_shape[0];
  std::vector<std::size_t> offsets;  // per part: row or col offset
  {
    std::size_t off = 0;
    for (const auto& p : parts) {
      offsets.push_back(off);
      off += p.dim(dim);
    }
  }
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& p = parts[pi];
    const auto& v = p.values();
    std::size_t pr = nd == 2 ? p.dim(0) : 1;
    std::size_t pc = nd == 2 ? p.dim(1) : p.dim(0);
    for (std::size_t i = 0; i < pr; ++i) {
      for (std::size_t j = 0; j < pc; ++j) {
        std::size_t oi = (dim == 0 && nd == 2) ? (offsets[pi] + i) : i;
        std::size_t oj = (dim == 0 && nd == 2) ? j
                         : (nd == 1)           ? offsets[pi] + j
                                               : offsets[pi] + j;
        if (nd == 2 && dim == 0) {
          out[oi * cols_out + j] = v[i * pc + j];
        } else if (nd == 2) {
          out[i * cols_out + oj] = v[i * pc + j];
        } else {
          out[offsets[pi] + j] = v[j];
        }
      }
    }
  }
  (void)rows_out;
  Tensor result(out_shape, std::move(out), rg);
  if (result.requires_grad()) {
    std::vector<std::shared_ptr<Tensor::Impl>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    auto oi = result.impl();
    auto offs = offsets;
    Tape::active()->record(result, [=]() {
      for (std::size_t pi = 0; pi < impls.size(); ++pi) {
        auto& im = impls[pi];
        bool track = im->requires_grad || im->tape != nullptr;
        if (!track) continue;
        if (im->grad.empty()) im->grad.assign(im->value.size(), 0.0);
        std::size_t pr = nd == 2 ? im->shape[0] : 1;
        std::size_t pc = nd == 2 ? im->shape[1] : im->shape[0];
        for (std::size_t i = 0; i < pr; ++i) {
          for (std::size_t j = 0; j < pc; ++j) {
            if (nd == 2 && dim == 0) {
              im->grad[i * pc + j] += oi->grad[(offs[pi] + i) * cols_out + j];
            } else if (nd == 2) {
              im->grad[i * pc + j] += oi->grad[i * cols_out + offs[pi] + j];
            } else {
              im->grad[j] += oi->grad[offs[pi] + j];
            }
          }
        }
      }
    });
  }
  return result;
}

Tensor index_select(const Tensor& t, int dim,
                    const std::vector<std::size_t>& indices) {
  std::size_t nd = t.ndim();
  if (nd == 0 || nd > 2 || dim < 0 || static_cast<std::size_t>(dim) >= nd) {
    throw ShapeError("index_select: unsupported rank/dim");
  }
  std::size_t limit = t.dim(dim);
  for (auto ix : indices) {
    if (ix >= limit) {
      throw DomainError("index_select: index " + std::to_string(ix) +
                        " out of range for dim of size " +
                        std::to_string(limit));
    }
  }
  const auto& v = t.values();
  std::vector<double> out;
  Shape out_shape;
  if (nd == 1) {
    out.reserve(indices.size());
    for (auto ix : indices) out.push_back(v[ix]);
    out_shape = Shape{indices.size()};
  } else if (dim == 0) {
    std::size_t c = t.dim(1);
    out.reserve(indices.size() * c);
    for (auto ix : indices) {
      out.insert(out.end(), v.begin() + ix * c, v.begin() + (ix + 1) * c);
    }
    out_shape = Shape{indices.size(), c};
  } else {
    std::size_t r = t.dim(0), c = t.dim(1);
    out.resize(r * indices.size());
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < indices.size(); ++j) {
        out[i * indices.size() + j] = v[i * c + indices[j]];
      }
    }
    out_shape = Shape{r, indices.size()};
  }
  Tensor result(out_shape, std::move(out), want_grad(t));
  if (result.requires_grad()) {
    auto ti = t.impl();
    auto oi = result.impl();
    auto idx = indices;
    Tape::active()->record(result, [=]() {
      if (ti->grad.empty()) ti->grad.assign(ti->value.size(), 0.0);
      if (nd == 1) {
        for (std::size_t j = 0; j < idx.size(); ++j) {
          ti->grad[idx[j]] += oi->grad[j];
        }
      } else if (dim == 0) {
        std::size_t c = ti->shape[1];
        for (std::size_t j = 0; j < idx.size(); ++j) {
          for (std::size_t k = 0; k < c; ++k) {
            ti->grad[idx[j] * c + k] += oi->grad[j * c + k];
          }
        }
      } else {
        std::size_t r = ti->shape[0], c = ti->shape[1];
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < idx.size(); ++j) {
            ti->grad[i * c + idx[j]] += oi->grad[i * idx.size() + j];
          }
        }
      }
    });
  }
  return result;
}

Tensor repeat_interleave(const Tensor& t, std::size_t times, int dim) {
  if (t.ndim() != 2 || dim != 1) {
    throw ShapeError("repeat_interleave: only dim=1 of a 2-d tensor");
  }
  std::size_t r = t.dim(0), c = t.dim(1);
  std::vector<double> out(r * c * times);
  const auto& v = t.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      for (std::size_t q = 0; q < times; ++q) {
        out[i * c * times + j * times + q] = v[i * c + j];
      }
    }
  }
  Tensor result(Shape{r, c * times}, std::move(out), want_grad(t));
  if (result.requires_grad()) {
    auto ti = t.impl();
    auto oi = result.impl();
    Tape::active()->record(result, [=]() {
      if (ti->grad.empty()) ti->grad.assign(ti->value.size(), 0.0);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          double acc = 0.0;
          for (std::size_t q = 0; q < times; ++q) {
            acc += oi->grad[i * c * times + j * times + q];
          }
          ti->grad[i * c + j] += acc;
        }
      }
    });
  }
  return result;
}

Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("pairwise_sqdist: need (n,d) and (m,d), got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  std::vector<double> out(n * m, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        double diff = av[i * d + k] - bv[j * d + k];
        acc += diff * diff;
      }
      out[i * m + j] = acc;
    }
  }
  Tensor result(Shape{n, m}, std::move(out), want_grad(a, b));
  if (result.requires_grad()) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = result.impl();
    Tape::active()->record(result, [=]() {
      bool ga = ai->requires_grad || ai->tape != nullptr;
      bool gb = bi->requires_grad || bi->tape != nullptr;
      if (ga && ai->grad.empty()) ai->grad.assign(ai->value.size(), 0.0);
      if (gb && bi->grad.empty()) bi->grad.assign(bi->value.size(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          double g = oi->grad[i * m + j];
          if (g == 0.0) continue;
          for (std::size_t k = 0; k < d; ++k) {
            double diff = ai->value[i * d + k] - bi->value[j * d + k];
            if (ga) ai->grad[i * d + k] += g * 2.0 * diff;
            if (gb) bi->grad[j * d + k] -= g * 2.0 * diff;
          }
        }
      }
    });
  }
  return result;
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator*(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
Tensor operator*(double s, const Tensor& a) { return mul(Tensor::scalar(s), a); }

}  // namespace kanite
