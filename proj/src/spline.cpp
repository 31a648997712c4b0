#include "kanite/spline.hpp"

#include <algorithm>
#include <cmath>

#include "kanite/ops.hpp"

namespace kanite {

namespace {
constexpr int kMaxDegree = 32;
}  // namespace

BSplineBasis::BSplineBasis(int degree, int grid_size, double lo, double hi)
    : degree_(degree), grid_size_(grid_size), lo_(lo), hi_(hi) {
  if (degree < 0) throw DomainError("bspline: degree must be >= 0");
  if (grid_size < 1) throw DomainError("bspline: grid_size must be >= 1");
  if (!(hi > lo)) throw DomainError("bspline: need hi > lo");
  step_ = (hi - lo) / grid_size;
  // knots t_0 .. t_{G+2k}, uniform, k-fold extension beyond each end
  knots_.resize(static_cast<std::size_t>(grid_size + 2 * degree + 1));
  for (std::size_t i = 0; i < knots_.size(); ++i) {
    knots_[i] = lo + (static_cast<double>(i) - degree) * step_;
  }
}

std::size_t BSplineBasis::eval_local(double x, double* vals,
                                     double* derivs) const {
  bool clamped = false;
  if (x < lo_) {
    x = lo_;
    clamped = true;
  } else if (x > hi_) {
    x = hi_;
    clamped = true;
  }
  int k = degree_;
  int cell = static_cast<int>(std::floor((x - lo_) / step_));
  cell = std::clamp(cell, 0, grid_size_ - 1);
  // interval index into the knot vector: t_j <= x < t_{j+1}
  std::size_t j = static_cast<std::size_t>(cell + k);

  if (k >= kMaxDegree) throw DomainError("bspline: degree too large");
  // Triangular de Boor scheme: after level r, vals[0..r] hold
  // B_{j-r .. j, r}(x).
  vals[0] = 1.0;
  double lower[kMaxDegree];  // degree k-1 values, kept for derivatives
  for (int r = 1; r <= k; ++r) {
    if (r == k && derivs) std::copy(vals, vals + k, lower);
    double saved = 0.0;
    for (int i = 0; i < r; ++i) {
      double right = knots_[j + i + 1] - x;
      double left = x - knots_[j + 1 - r + i];
      double term = vals[i] / (right + left);
      vals[i] = saved + right * term;
      saved = left * term;
    }
    vals[r] = saved;
  }
  std::size_t first = j - k;
  if (derivs) {
    if (k == 0 || clamped) {
      std::fill(derivs, derivs + k + 1, 0.0);
    } else {
      // B'_{i,k} = k * (B_{i,k-1}/(t_{i+k}-t_i) - B_{i+1,k-1}/(t_{i+k+1}-t_{i+1}))
      // lower[m] = B_{j-k+1+m, k-1}(x), m = 0..k-1; bases outside are zero.
      auto lower_at = [&](std::size_t i) -> double {
        if (i < first + 1 || i > j) return 0.0;
        return lower[i - (first + 1)];
      };
      for (int m = 0; m <= k; ++m) {
        std::size_t i = first + m;
        double a = lower_at(i) / (knots_[i + k] - knots_[i]);
        double b = lower_at(i + 1) / (knots_[i + k + 1] - knots_[i + 1]);
        derivs[m] = k * (a - b);
      }
    }
  }
  return first;
}

std::vector<double> BSplineBasis::eval_dense(double x) const {
  std::vector<double> row(size(), 0.0);
  std::vector<double> local(degree_ + 1);
  std::size_t first = eval_local(x, local.data());
  for (int m = 0; m <= degree_; ++m) row[first + m] = local[m];
  return row;
}

BSplineBasis grid_from_samples(const std::vector<double>& samples,
                               int grid_size, int degree, double margin) {
  if (samples.empty()) throw DataError("grid_from_samples: no samples");
  auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
  double lo = *mn - margin;
  double hi = *mx + margin;
  if (!(hi > lo)) {
    throw DomainError("grid_from_samples: degenerate span; use margin > 0");
  }
  return BSplineBasis(degree, grid_size, lo, hi);
}

Tensor basis_eval(const BSplineBasis& basis, const std::vector<double>& x) {
  std::size_t nb = basis.size();
  std::vector<double> out(x.size() * nb, 0.0);
  std::vector<double> local(basis.degree() + 1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::size_t first = basis.eval_local(x[i], local.data());
    for (int m = 0; m <= basis.degree(); ++m) {
      out[i * nb + first + m] = local[m];
    }
  }
  return Tensor(Shape{x.size(), nb}, std::move(out));
}

Tensor spline_basis(const Tensor& x,
                    std::shared_ptr<const BSplineBasis> basis) {
  if (x.ndim() < 1 || x.ndim() > 2) {
    throw ShapeError("spline_basis: input must be 1-d or 2-d");
  }
  std::size_t n = x.dim(0);
  std::size_t c = x.ndim() == 2 ? x.dim(1) : 1;
  std::size_t nb = basis->size();
  int k = basis->degree();

  std::vector<double> out(n * c * nb, 0.0);
  auto derivs = std::make_shared<std::vector<double>>();
  auto firsts = std::make_shared<std::vector<std::size_t>>();
  bool track = Tape::active() && x.requires_grad();
  if (track) {
    derivs->assign(n * c * (k + 1), 0.0);
    firsts->assign(n * c, 0);
  }
  const auto& xv = x.values();
  std::vector<double> local(k + 1);
  for (std::size_t e = 0; e < n * c; ++e) {
    std::size_t first = basis->eval_local(
        xv[e], local.data(), track ? derivs->data() + e * (k + 1) : nullptr);
    std::size_t row = e / c, col = e % c;
    for (int m = 0; m <= k; ++m) {
      out[row * c * nb + col * nb + first + m] = local[m];
    }
    if (track) (*firsts)[e] = first;
  }
  Shape out_shape = x.ndim() == 2 ? Shape{n, c * nb} : Shape{n, nb};
  Tensor result(out_shape, std::move(out), track);
  if (track) {
    auto xi = x.impl();
    auto oi = result.impl();
    Tape::active()->record(result, [=]() {
      if (xi->grad.empty()) xi->grad.assign(xi->value.size(), 0.0);
      for (std::size_t e = 0; e < n * c; ++e) {
        std::size_t row = e / c, col = e % c;
        std::size_t first = (*firsts)[e];
        double acc = 0.0;
        for (int m = 0; m <= k; ++m) {
          acc += oi->grad[row * c * nb + col * nb + first + m] *
                 (*derivs)[e * (k + 1) + m];
        }
        xi->grad[e] += acc;
      }
    });
  }
  return result;
}

Tensor SplineFunction::forward(const Tensor& x) const {
  if (x.ndim() != 1) throw ShapeError("spline_forward: input must be 1-d");
  Tensor b = spline_basis(x, basis);
  Tensor s = matmul(b, coefficients);
  return add(mul(residual_weight, silu(x)), mul(spline_weight, s));
}

SplineFunction make_spline_function(std::shared_ptr<const BSplineBasis> basis,
                                    std::mt19937_64& rng, double coef_std) {
  SplineFunction f;
  f.coefficients = Tensor::randn(Shape{basis->size()}, rng, coef_std, true);
  f.residual_weight = Tensor::scalar(1.0, true);
  f.spline_weight = Tensor::scalar(1.0, true);
  f.basis = std::move(basis);
  return f;
}

}  // namespace kanite
