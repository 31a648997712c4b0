#include "kanite/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "kanite/ops.hpp"

namespace kanite {

GroupedRepresentations GroupedRepresentations::from(
    const Tensor& rep, const std::vector<int>& treatments,
    std::size_t n_treatments) {
  if (rep.ndim() != 2 || rep.dim(0) != treatments.size()) {
    throw ShapeError("grouped representations: rep rows must match treatments");
  }
  GroupedRepresentations g;
  g.rep = rep;
  g.index.resize(n_treatments);
  for (std::size_t i = 0; i < treatments.size(); ++i) {
    int t = treatments[i];
    if (t < 0 || static_cast<std::size_t>(t) >= n_treatments) {
      throw DomainError("grouped representations: treatment id " +
                        std::to_string(t) + " out of range at row " +
                        std::to_string(i));
    }
    g.index[static_cast<std::size_t>(t)].push_back(i);
  }
  return g;
}

std::size_t GroupedRepresentations::n_nonempty() const {
  std::size_t n = 0;
  for (const auto& g : index) n += g.empty() ? 0 : 1;
  return n;
}

Tensor GroupedRepresentations::group(std::size_t t) const {
  return index_select(rep, 0, index.at(t));
}

Tensor factual_mse(const Tensor& pred, const std::vector<int>& treatments,
                   const std::vector<double>& y) {
  if (pred.ndim() != 2) throw ShapeError("factual_mse: pred must be (batch, K)");
  std::size_t n = pred.dim(0), k = pred.dim(1);
  if (treatments.size() != n || y.size() != n) {
    throw ShapeError("factual_mse: batch size mismatch");
  }
  std::vector<std::vector<std::size_t>> rows(k);
  for (std::size_t i = 0; i < n; ++i) {
    int t = treatments[i];
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw DomainError("factual_mse: treatment id " + std::to_string(t) +
                        " out of range at row " + std::to_string(i));
    }
    rows[static_cast<std::size_t>(t)].push_back(i);
  }
  Tensor acc = Tensor::scalar(0.0);
  for (std::size_t t = 0; t < k; ++t) {
    if (rows[t].empty()) continue;
    Tensor p = index_select(pred, 0, rows[t]);
    Tensor col = reshape(index_select(p, 1, {t}), Shape{rows[t].size()});
    std::size_t nt = rows[t].size();
    std::vector<double> yt(nt);
    for (std::size_t j = 0; j < nt; ++j) yt[j] = y[rows[t][j]];
    Tensor target(Shape{nt}, std::move(yt));
    acc = add(acc, sum(square(sub(col, target))));
  }
  return mul(acc, Tensor::scalar(1.0 / static_cast<double>(n)));
}

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    double lo = *std::max_element(v.begin(), v.begin() + mid);
    m = 0.5 * (lo + m);
  }
  return m;
}

}  // namespace

Tensor mmd_squared(const Tensor& a, const Tensor& b, MmdKernel kernel,
                   double rbf_bandwidth) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("mmd_squared: need (n,d) and (m,d) with equal d");
  }
  if (a.dim(0) == 0 || b.dim(0) == 0) {
    throw ShapeError("mmd_squared: empty group");
  }
  if (kernel == MmdKernel::Linear) {
    return sum(square(sub(mean(a, 0), mean(b, 0))));
  }
  double h = rbf_bandwidth;
  if (h <= 0.0) {
    std::vector<double> pooled;
    Tensor all = concat({a.detach(), b.detach()}, 0);
    Tensor d2 = pairwise_sqdist(all, all);
    for (std::size_t i = 0; i < all.dim(0); ++i) {
      for (std::size_t j = i + 1; j < all.dim(0); ++j) {
        pooled.push_back(d2.at(i, j));
      }
    }
    h = median_of(pooled);
    if (h <= 0.0) h = 1.0;
  }
  double inv = -1.0 / h;
  Tensor kaa = exp(mul(pairwise_sqdist(a, a), Tensor::scalar(inv)));
  Tensor kbb = exp(mul(pairwise_sqdist(b, b), Tensor::scalar(inv)));
  Tensor kab = exp(mul(pairwise_sqdist(a, b), Tensor::scalar(inv)));
  return sub(add(mean(kaa), mean(kbb)), mul(mean(kab), Tensor::scalar(2.0)));
}

Tensor wasserstein(const Tensor& a, const Tensor& b,
                   const SinkhornOptions& options) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("wasserstein: need (n,d) and (m,d) with equal d");
  }
  std::size_t n = a.dim(0), m = b.dim(0);
  if (n == 0 || m == 0) throw ShapeError("wasserstein: empty group");
  if (options.iters < 1) throw DomainError("wasserstein: iters must be >= 1");

  Tensor cost = pairwise_sqdist(a, b);
  double cmin = *std::min_element(cost.values().begin(), cost.values().end());
  double cmax = *std::max_element(cost.values().begin(), cost.values().end());
  double eps = options.eps;
  if (eps <= 0.0) {
    // 0.1 * median cost, floored so the Gibbs kernel exponent cmax/eps stays
    // representable and the scaling vectors cannot overflow
    eps = std::max(0.1 * median_of(cost.detach().values()), cmax / 200.0);
    if (eps <= 0.0) eps = 1e-3;
  }

  try {
    Tensor kmat = exp(mul(cost, Tensor::scalar(-1.0 / eps)));
    Tensor kmat_t = transpose(kmat);
    Tensor au = Tensor::full(Shape{n}, 1.0 / static_cast<double>(n));
    Tensor bw = Tensor::full(Shape{m}, 1.0 / static_cast<double>(m));
    Tensor v = Tensor::full(Shape{m}, 1.0);
    Tensor u;
    for (int it = 0; it < options.iters; ++it) {
      u = div(au, matmul(kmat, v));
      v = div(bw, matmul(kmat_t, u));
    }
    Tensor plan_scale = matmul(reshape(u, Shape{n, 1}), reshape(v, Shape{1, m}));
    return sum(mul(mul(plan_scale, kmat), cost));
  } catch (const KaniteError& e) {
    std::ostringstream os;
    os << "wasserstein: non-convergent Sinkhorn scaling (" << e.what()
       << "); eps=" << eps << " cost[min=" << cmin << ", max=" << cmax
       << ", n=" << n << ", m=" << m << "]";
    throw NonFiniteError(os.str());
  }
}

PairwiseIpmResult pairwise_ipm(const GroupedRepresentations& groups,
                               const IpmOptions& options) {
  std::size_t k = groups.n_treatments();
  if (k < 2) throw DomainError("pairwise_ipm: need K >= 2");
  PairwiseIpmResult result;
  result.pairs_total = k * (k - 1) / 2;
  if (groups.n_nonempty() < 2) {
    result.value = Tensor::scalar(0.0);
    return result;
  }
  Tensor acc = Tensor::scalar(0.0);
  for (std::size_t t = 0; t < k; ++t) {
    if (groups.group_size(t) == 0) continue;
    Tensor gt = groups.group(t);
    for (std::size_t s = t + 1; s < k; ++s) {
      if (groups.group_size(s) == 0) continue;
      Tensor gs = groups.group(s);
      Tensor term = options.kind == IpmKind::Mmd
                        ? mmd_squared(gt, gs, options.kernel)
                        : wasserstein(gt, gs, options.sinkhorn);
      acc = add(acc, term);
      ++result.pairs_used;
    }
  }
  result.value =
      mul(acc, Tensor::scalar(1.0 / static_cast<double>(result.pairs_used)));
  return result;
}

std::size_t EBDualState::pair_index(std::size_t t, std::size_t s,
                                    std::size_t k) {
  if (t >= s || s >= k) throw DomainError("pair_index: need t < s < K");
  return t * (2 * k - t - 1) / 2 + (s - t - 1);
}

std::vector<double> EBDualState::lambda_between(std::size_t t,
                                                std::size_t s) const {
  if (t == s) throw DomainError("lambda_between: t == s");
  if (t < s) return lambda[pair_index(t, s, n_treatments)];
  std::vector<double> neg = lambda[pair_index(s, t, n_treatments)];
  for (auto& x : neg) x = -x;
  return neg;
}

namespace {

// score_i for sample i in group t: -sum_{s != t} <lambda_{t,s}, psi_i>
std::vector<std::vector<double>> eb_scores(
    const std::vector<std::vector<double>>& lambda,
    const GroupedRepresentations& groups) {
  std::size_t k = groups.n_treatments();
  std::size_t d = groups.dim();
  const auto& rep = groups.rep.values();
  std::vector<std::vector<double>> scores(k);
  for (std::size_t t = 0; t < k; ++t) {
    // combined coefficient vector a_t = -sum_{s != t} lambda_{t,s}
    std::vector<double> coeff(d, 0.0);
    for (std::size_t s = 0; s < k; ++s) {
      if (s == t) continue;
      if (t < s) {
        const auto& l = lambda[EBDualState::pair_index(t, s, k)];
        for (std::size_t j = 0; j < d; ++j) coeff[j] -= l[j];
      } else {
        const auto& l = lambda[EBDualState::pair_index(s, t, k)];
        for (std::size_t j = 0; j < d; ++j) coeff[j] += l[j];
      }
    }
    scores[t].resize(groups.group_size(t));
    for (std::size_t gi = 0; gi < groups.group_size(t); ++gi) {
      std::size_t row = groups.index[t][gi];
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += coeff[j] * rep[row * d + j];
      scores[t][gi] = acc;
    }
  }
  return scores;
}

double eb_objective(const std::vector<std::vector<double>>& scores) {
  double total = 0.0;
  for (const auto& group : scores) {
    double mx = *std::max_element(group.begin(), group.end());
    double z = 0.0;
    for (double s : group) z += std::exp(s - mx);
    total += mx + std::log(z);
  }
  return total;
}

}  // namespace

std::vector<double> eb_weights(const std::vector<std::vector<double>>& lambda,
                               const GroupedRepresentations& groups) {
  for (const auto& l : lambda) {
    for (double x : l) {
      if (!std::isfinite(x)) throw NonFiniteError("eb_weights: non-finite dual");
    }
  }
  auto scores = eb_scores(lambda, groups);
  std::vector<double> w(groups.rep.dim(0), 0.0);
  for (std::size_t t = 0; t < groups.n_treatments(); ++t) {
    if (scores[t].empty()) continue;
    double mx = *std::max_element(scores[t].begin(), scores[t].end());
    double z = 0.0;
    for (double s : scores[t]) z += std::exp(s - mx);
    for (std::size_t gi = 0; gi < scores[t].size(); ++gi) {
      w[groups.index[t][gi]] = std::exp(scores[t][gi] - mx) / z;
    }
  }
  return w;
}

EBDualState eb_dual_solve(const GroupedRepresentations& groups,
                          const EbOptions& options) {
  std::size_t k = groups.n_treatments();
  std::size_t d = groups.dim();
  if (k < 2) throw DomainError("eb_dual_solve: need K >= 2");
  for (std::size_t t = 0; t < k; ++t) {
    if (groups.group_size(t) == 0) {
      throw DomainError("eb_dual_solve: empty treatment group " +
                        std::to_string(t));
    }
  }
  std::size_t n_pairs = k * (k - 1) / 2;
  const auto& rep = groups.rep.values();

  EBDualState state;
  state.n_treatments = k;
  state.dim = d;
  state.lambda.assign(n_pairs, std::vector<double>(d, 0.0));

  double lr = options.lr;
  auto lambda = state.lambda;
  auto best_lambda = lambda;
  double best_obj = eb_objective(eb_scores(lambda, groups));
  double prev_obj = best_obj;
  int rising = 0;

  auto group_weighted_mean = [&](const std::vector<double>& w, std::size_t t) {
    std::vector<double> mu(d, 0.0);
    for (std::size_t gi = 0; gi < groups.group_size(t); ++gi) {
      std::size_t row = groups.index[t][gi];
      for (std::size_t j = 0; j < d; ++j) mu[j] += w[row] * rep[row * d + j];
    }
    return mu;
  };

  for (int it = 0; it < options.iters; ++it) {
    auto w = eb_weights(lambda, groups);
    // dF/dlambda_{t,s} = sum_{i in s} w_i psi_i - sum_{i in t} w_i psi_i
    std::vector<std::vector<double>> means(k);
    for (std::size_t t = 0; t < k; ++t) means[t] = group_weighted_mean(w, t);
    for (std::size_t t = 0; t < k; ++t) {
      for (std::size_t s = t + 1; s < k; ++s) {
        auto& l = lambda[EBDualState::pair_index(t, s, k)];
        for (std::size_t j = 0; j < d; ++j) {
          l[j] -= lr * (means[s][j] - means[t][j]);
        }
      }
    }
    double obj = eb_objective(eb_scores(lambda, groups));
    if (obj < best_obj) {
      best_obj = obj;
      best_lambda = lambda;
    }
    rising = obj > prev_obj ? rising + 1 : 0;
    prev_obj = obj;
    if (rising >= 10) {
      if (state.restarts >= 3) break;
      ++state.restarts;
      lr *= 0.5;
      lambda.assign(n_pairs, std::vector<double>(d, 0.0));
      prev_obj = eb_objective(eb_scores(lambda, groups));
      rising = 0;
    }
  }

  state.lambda = best_lambda;
  state.objective = best_obj;
  state.weights = eb_weights(state.lambda, groups);
  state.balance_residual_inf.assign(n_pairs, 0.0);
  {
    std::vector<std::vector<double>> means(k);
    for (std::size_t t = 0; t < k; ++t) {
      means[t] = group_weighted_mean(state.weights, t);
    }
    for (std::size_t t = 0; t < k; ++t) {
      for (std::size_t s = t + 1; s < k; ++s) {
        double r = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          r = std::max(r, std::abs(means[t][j] - means[s][j]));
        }
        state.balance_residual_inf[EBDualState::pair_index(t, s, k)] = r;
      }
    }
  }
  return state;
}

Tensor eb_representation_loss(const GroupedRepresentations& groups,
                              const EBDualState& dual) {
  std::size_t k = groups.n_treatments();
  std::size_t d = groups.dim();
  if (dual.n_treatments != k || dual.dim != d) {
    throw ShapeError("eb_representation_loss: dual does not match groups");
  }
  Tensor acc = Tensor::scalar(0.0);
  for (std::size_t t = 0; t < k; ++t) {
    std::size_t n_t = groups.group_size(t);
    if (n_t == 0) continue;
    std::vector<double> coeff(d, 0.0);
    for (std::size_t s = 0; s < k; ++s) {
      if (s == t) continue;
      auto l = dual.lambda_between(t, s);
      for (std::size_t j = 0; j < d; ++j) coeff[j] -= l[j];
    }
    Tensor ct(Shape{d}, coeff);  // constant, stop-gradiented dual
    Tensor scores = matmul(groups.group(t), ct);
    Tensor w = reshape(softmax_rows(reshape(scores, Shape{1, n_t})), Shape{n_t});
    acc = add(acc, sum(mul(w, log(w))));
  }
  return acc;
}

Tensor total_loss(const Tensor& l1, const Tensor& l2, double alpha,
                  double beta) {
  if (alpha < 0.0 || beta < 0.0) {
    throw DomainError("total_loss: negative loss weight");
  }
  return add(mul(l1, Tensor::scalar(alpha)), mul(l2, Tensor::scalar(beta)));
}

}  // namespace kanite
