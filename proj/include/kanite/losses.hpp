#pragma once

#include <cstddef>
#include <vector>

#include "kanite/tensor.hpp"

namespace kanite {

// Minibatch representations bucketed by assigned treatment (0-based ids).
// Groups are disjoint and cover the batch; empty groups are legal and
// reported by the consumers' skip rules.
struct GroupedRepresentations {
  Tensor rep;                                   // (batch, d)
  std::vector<std::vector<std::size_t>> index;  // per treatment

  static GroupedRepresentations from(const Tensor& rep,
                                     const std::vector<int>& treatments,
                                     std::size_t n_treatments);

  std::size_t n_treatments() const { return index.size(); }
  std::size_t dim() const { return rep.dim(1); }
  std::size_t group_size(std::size_t t) const { return index[t].size(); }
  std::size_t n_nonempty() const;
  Tensor group(std::size_t t) const;  // row subset, stays on the tape
};

// (1/|B|) * sum_i (pred[i, t_i] - y_i)^2
Tensor factual_mse(const Tensor& pred, const std::vector<int>& treatments,
                   const std::vector<double>& y);

enum class MmdKernel { Linear, Rbf };

// Linear kernel: squared distance of the group means. Rbf: biased V-statistic
// exp(-d^2 / h); bandwidth <= 0 selects the median pairwise squared distance
// over the pooled rows (held constant w.r.t. gradients).
Tensor mmd_squared(const Tensor& a, const Tensor& b,
                   MmdKernel kernel = MmdKernel::Linear,
                   double rbf_bandwidth = -1.0);

struct SinkhornOptions {
  double eps = -1.0;  // <= 0 selects 0.1 * median pairwise cost
  int iters = 50;
};

// Entropic-regularized OT cost between uniform empirical measures with
// squared-Euclidean ground cost, differentiable through the iterations.
Tensor wasserstein(const Tensor& a, const Tensor& b,
                   const SinkhornOptions& options = {});

enum class IpmKind { Mmd, Wasserstein };

struct IpmOptions {
  IpmKind kind = IpmKind::Mmd;
  MmdKernel kernel = MmdKernel::Linear;
  SinkhornOptions sinkhorn;
};

struct PairwiseIpmResult {
  Tensor value;                 // scalar; zero when fewer than 2 non-empty groups
  std::size_t pairs_used = 0;   // pairs with both groups non-empty
  std::size_t pairs_total = 0;  // C(K, 2)
};

// Mean IPM over unordered treatment pairs; pairs touching an empty group are
// skipped and the normalizer shrinks to the evaluated count.
PairwiseIpmResult pairwise_ipm(const GroupedRepresentations& groups,
                               const IpmOptions& options = {});

struct EbOptions {
  int iters = 200;
  double lr = 0.1;
};

// Dual variables of the multi-treatment entropy-balancing problem: one vector
// per unordered pair (t, s), t < s, with lambda_{s,t} = -lambda_{t,s}.
struct EBDualState {
  std::size_t n_treatments = 0;
  std::size_t dim = 0;
  std::vector<std::vector<double>> lambda;      // indexed by pair_index
  std::vector<double> weights;                  // per batch sample, positive
  std::vector<double> balance_residual_inf;     // per pair, at the solution
  double objective = 0.0;
  int restarts = 0;

  static std::size_t pair_index(std::size_t t, std::size_t s, std::size_t k);
  // Effective lambda_{t,s} honoring the antisymmetry convention (t != s).
  std::vector<double> lambda_between(std::size_t t, std::size_t s) const;
};

// Full-batch gradient descent on the dual objective
//   sum_t log sum_{T_i = t} exp(-sum_{s != t} <lambda_{t,s}, Psi_i>)
// over detached representation values.  Diverging runs (objective rising for
// 10 straight steps) halve the step and restart from zero, at most 3 times.
EBDualState eb_dual_solve(const GroupedRepresentations& groups,
                          const EbOptions& options = {});

// Closed-form within-group softmax weights for a fixed dual point.
std::vector<double> eb_weights(const std::vector<std::vector<double>>& lambda,
                               const GroupedRepresentations& groups);

// sum_i w_i log w_i with the dual treated as constants and the weights
// re-expressed through the live representations, so gradients reach Psi.
Tensor eb_representation_loss(const GroupedRepresentations& groups,
                              const EBDualState& dual);

// alpha * l1 + beta * l2; negative coefficients are rejected.
Tensor total_loss(const Tensor& l1, const Tensor& l2, double alpha,
                  double beta);

}  // namespace kanite
