#pragma once

#include <vector>

#include "kanite/tensor.hpp"

namespace kanite {

// Elementwise binaries broadcast over a leading batch dimension: shapes must
// match exactly, or one operand's shape must be a trailing suffix of the
// other's (a one-element tensor broadcasts everywhere).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// 2-d x 2-d, 2-d x 1-d and 1-d x 2-d.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& t);
Tensor reshape(const Tensor& t, Shape shape);

Tensor sum(const Tensor& t);
Tensor sum(const Tensor& t, int dim);
Tensor mean(const Tensor& t);
Tensor mean(const Tensor& t, int dim);

Tensor exp(const Tensor& t);
Tensor log(const Tensor& t);
Tensor pow(const Tensor& t, double exponent);
Tensor relu(const Tensor& t);
Tensor silu(const Tensor& t);
Tensor square(const Tensor& t);

// Row-wise softmax of a 2-d tensor, numerically stabilized.
Tensor softmax_rows(const Tensor& t);

Tensor concat(const std::vector<Tensor>& parts, int dim);
Tensor index_select(const Tensor& t, int dim,
                    const std::vector<std::size_t>& indices);

// out(i, j*times+q) = t(i, j); gradient sums over the repeats.
Tensor repeat_interleave(const Tensor& t, std::size_t times, int dim);

// out(i, j) = ||a_i - b_j||^2 for row sets a (n x d), b (m x d).
Tensor pairwise_sqdist(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, double s);
Tensor operator*(double s, const Tensor& a);

double sigmoid(double x);

}  // namespace kanite
