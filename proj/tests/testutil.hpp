#pragma once

// Shared test oracles. Everything here is implemented independently of the
// library's computation paths: the finite-difference checker re-evaluates the
// loss as a black box, the naive Cox-de Boor recursion mirrors the textbook
// definition, optimal transport is brute-forced over permutation couplings,
// and the entropy-balancing primal oracle runs cyclic Bregman (KL)
// projections onto the constraint set.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "kanite/tensor.hpp"

namespace testutil {

inline double rel_error(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

// Max relative error between tape gradients and central finite differences
// over every element of every listed parameter. make_loss must rebuild the
// loss expression from the parameters' current values.
inline double max_grad_rel_error(const std::vector<kanite::Tensor>& params,
                                 const std::function<kanite::Tensor()>& make_loss,
                                 double h = 1e-5) {
  using kanite::Tape;
  for (auto p : params) p.zero_grad();
  {
    Tape tape;
    kanite::Tensor loss = make_loss();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    analytic.push_back(p.has_grad() ? p.grad()
                                    : std::vector<double>(p.numel(), 0.0));
  }
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    kanite::Tensor p = params[pi];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      double orig = p.values()[j];
      p.values()[j] = orig + h;
      double fp = make_loss().item();
      p.values()[j] = orig - h;
      double fm = make_loss().item();
      p.values()[j] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_error(numeric, analytic[pi][j]));
    }
  }
  return worst;
}

// Textbook Cox-de Boor recursion over an explicit knot vector.
inline double naive_bspline(const std::vector<double>& knots, std::size_t i,
                            int degree, double x) {
  if (degree == 0) {
    return (x >= knots[i] && x < knots[i + 1]) ? 1.0 : 0.0;
  }
  double left = 0.0, right = 0.0;
  double dl = knots[i + degree] - knots[i];
  if (dl > 0.0) {
    left = (x - knots[i]) / dl * naive_bspline(knots, i, degree - 1, x);
  }
  double dr = knots[i + degree + 1] - knots[i + 1];
  if (dr > 0.0) {
    right = (knots[i + degree + 1] - x) / dr *
            naive_bspline(knots, i + 1, degree - 1, x);
  }
  return left + right;
}

// Exact OT cost between uniform measures on two equal-sized point sets:
// minimum over all permutation couplings of the mean pair cost.
inline double brute_force_ot(const std::vector<std::vector<double>>& a,
                             const std::vector<std::vector<double>>& b) {
  std::size_t n = a.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  auto sqdist = [](const std::vector<double>& p, const std::vector<double>& q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += (p[i] - q[i]) * (p[i] - q[i]);
    }
    return acc;
  };
  do {
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) cost += sqdist(a[i], b[perm[i]]);
    best = std::min(best, cost / n);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Maximum-entropy weights under per-group normalization and pairwise mean
// balance, via cyclic Bregman projections w.r.t. KL starting from all-ones.
// psi: N rows of d features; groups: sample indices per treatment.
inline std::vector<double> eb_primal_oracle(
    const std::vector<std::vector<double>>& psi,
    const std::vector<std::vector<std::size_t>>& groups, int rounds = 4000) {
  std::size_t n = psi.size();
  std::size_t d = psi.empty() ? 0 : psi[0].size();
  std::size_t k = groups.size();
  std::vector<double> w(n, 1.0);

  // balance constraint rows: sum_i c_i w_i = 0
  struct Row {
    std::vector<double> c;  // length n, sparse in spirit
  };
  std::vector<Row> rows;
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t s = t + 1; s < k; ++s) {
      for (std::size_t j = 0; j < d; ++j) {
        Row row;
        row.c.assign(n, 0.0);
        for (auto i : groups[t]) row.c[i] = psi[i][j];
        for (auto i : groups[s]) row.c[i] = -psi[i][j];
        rows.push_back(std::move(row));
      }
    }
  }

  auto project_group = [&](const std::vector<std::size_t>& g) {
    double z = 0.0;
    for (auto i : g) z += w[i];
    for (auto i : g) w[i] /= z;
  };
  auto project_row = [&](const Row& row) {
    // KL projection onto {sum c_i w_i = 0}: w_i <- w_i exp(-eta c_i) with eta
    // the root of g(eta) = sum c_i w_i exp(-eta c_i); g is strictly
    // decreasing, so bisection applies once a sign change is bracketed.
    auto g = [&](double eta) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (row.c[i] != 0.0) acc += row.c[i] * w[i] * std::exp(-eta * row.c[i]);
      }
      return acc;
    };
    double lo = -1.0, hi = 1.0;
    int guard = 0;
    while (g(lo) < 0.0 && guard++ < 200) lo *= 2.0;
    guard = 0;
    while (g(hi) > 0.0 && guard++ < 200) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
      double mid = 0.5 * (lo + hi);
      if (g(mid) > 0.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    double eta = 0.5 * (lo + hi);
    for (std::size_t i = 0; i < n; ++i) {
      if (row.c[i] != 0.0) w[i] *= std::exp(-eta * row.c[i]);
    }
  };

  for (int round = 0; round < rounds; ++round) {
    for (const auto& g : groups) project_group(g);
    for (const auto& row : rows) project_row(row);
  }
  for (const auto& g : groups) project_group(g);
  return w;
}

// Random feasible entropy-balancing instances: every group's convex hull
// strictly contains the origin, so exact balance with positive weights exists.
struct EbInstance {
  std::vector<std::vector<double>> psi;            // N x d
  std::vector<int> treatments;                     // 0-based
  std::vector<std::vector<std::size_t>> groups;    // per treatment
  std::size_t k = 0, d = 0;
};

inline EbInstance make_feasible_eb_instance(std::mt19937_64& rng, int variant) {
  std::uniform_real_distribution<double> mag(0.3, 1.2);
  std::uniform_real_distribution<double> frac(0.26, 0.74);
  EbInstance inst;
  if (variant % 3 == 0) {
    // K=2, d=1, sizes (3,3): both intervals straddle 0
    inst.k = 2;
    inst.d = 1;
    for (std::size_t t = 0; t < 2; ++t) {
      inst.psi.push_back({-mag(rng)});
      inst.psi.push_back({mag(rng)});
      inst.psi.push_back({mag(rng) * (t == 0 ? 0.5 : -0.5)});
      for (int j = 0; j < 3; ++j) inst.treatments.push_back(static_cast<int>(t));
    }
  } else if (variant % 3 == 1) {
    // K=2, d=2, sizes (3,3): triangles with the origin strictly inside
    inst.k = 2;
    inst.d = 2;
    for (std::size_t t = 0; t < 2; ++t) {
      for (int j = 0; j < 3; ++j) {
        double theta = 2.0 * M_PI * (j + frac(rng)) / 3.0;
        double r = 0.5 + mag(rng);
        inst.psi.push_back({r * std::cos(theta), r * std::sin(theta)});
        inst.treatments.push_back(static_cast<int>(t));
      }
    }
  } else {
    // K=3, d=1, sizes (2,2,2): every interval straddles 0
    inst.k = 3;
    inst.d = 1;
    for (std::size_t t = 0; t < 3; ++t) {
      inst.psi.push_back({-mag(rng)});
      inst.psi.push_back({mag(rng)});
      inst.treatments.push_back(static_cast<int>(t));
      inst.treatments.push_back(static_cast<int>(t));
    }
  }
  inst.groups.resize(inst.k);
  for (std::size_t i = 0; i < inst.treatments.size(); ++i) {
    inst.groups[static_cast<std::size_t>(inst.treatments[i])].push_back(i);
  }
  return inst;
}

inline kanite::Tensor psi_tensor(const EbInstance& inst) {
  std::vector<double> flat;
  for (const auto& row : inst.psi) {
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return kanite::Tensor(kanite::Shape{inst.psi.size(), inst.d}, flat);
}

}  // namespace testutil
