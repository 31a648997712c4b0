#pragma once

#include <memory>
#include <random>
#include <vector>

#include "kanite/tensor.hpp"

namespace kanite {

// Uniform B-spline basis of a given degree over [lo, hi] with `grid_size`
// interior intervals and degree-fold uniform knot extension beyond each end.
// Defines grid_size + degree basis functions; inputs are clamped to [lo, hi]
// before evaluation.
class BSplineBasis {
 public:
  BSplineBasis(int degree, int grid_size, double lo, double hi);

  int degree() const { return degree_; }
  int grid_size() const { return grid_size_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  const std::vector<double>& knots() const { return knots_; }
  std::size_t size() const {
    return static_cast<std::size_t>(grid_size_ + degree_);
  }

  // Evaluates the degree+1 bases that can be non-zero at x (clamped).
  // Writes values into vals[0..degree] and, when derivs is non-null, the
  // derivatives d/dx (zero when x fell outside the span).  Returns the index
  // of the first basis written.
  std::size_t eval_local(double x, double* vals, double* derivs = nullptr) const;

  // Dense row of all size() basis values at x.
  std::vector<double> eval_dense(double x) const;

 private:
  int degree_;
  int grid_size_;
  double lo_, hi_;
  double step_;
  std::vector<double> knots_;
};

// Uniform basis spanning [min(samples)-margin, max(samples)+margin].
BSplineBasis grid_from_samples(const std::vector<double>& samples,
                               int grid_size, int degree, double margin);

// Dense basis matrix, len(x) rows by basis.size() columns. Plain values, no
// gradient tracking.
Tensor basis_eval(const BSplineBasis& basis, const std::vector<double>& x);

// Autodiff primitive: x of shape (N,) or (N, C) -> (N, size()) or
// (N, C*size()) with the per-column basis blocks laid out contiguously.
// Gradients flow into x through the basis derivatives.
Tensor spline_basis(const Tensor& x, std::shared_ptr<const BSplineBasis> basis);

// One learnable univariate activation:
//   phi(x) = residual_weight * silu(x) + spline_weight * sum_i c_i B_i(x).
struct SplineFunction {
  std::shared_ptr<const BSplineBasis> basis;
  Tensor coefficients;     // (basis->size(),)
  Tensor residual_weight;  // scalar
  Tensor spline_weight;    // scalar

  // Elementwise phi over a vector input, recorded on the active tape.
  Tensor forward(const Tensor& x) const;
};

// c ~ Normal(0, coef_std), residual and spline weights start at 1.
SplineFunction make_spline_function(std::shared_ptr<const BSplineBasis> basis,
                                    std::mt19937_64& rng,
                                    double coef_std = 0.1);

}  // namespace kanite
