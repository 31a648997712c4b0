#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "kanite/tensor.hpp"

namespace kanite {

struct PairMetrics {
  std::size_t a = 0, b = 0;  // 1-based treatment ids, a > b
  double pehe = 0.0;
  double ate_error = 0.0;
};

// eps_PEHE / eps_ATE over all unordered treatment pairs, plus the per-pair
// breakdown. Factual-only datasets carry ite_available = false.
struct EvaluationReport {
  bool ite_available = false;
  double pehe = 0.0;
  double ate_error = 0.0;
  std::vector<PairMetrics> pairs;
  double factual_mse = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_treatments = 0;

  std::string to_json() const;
};

// Column a minus column b of the ground-truth potential outcomes (1-based).
std::vector<double> true_ite(const Tensor& potential_outcomes, std::size_t a,
                             std::size_t b);

// (1/C(K,2)) sum_pairs (1/N) sum_i (tau_hat_i - tau_i)^2
double epsilon_pehe(const std::vector<std::vector<double>>& tau_hat,
                    const std::vector<std::vector<double>>& tau,
                    std::size_t n_treatments);

// (1/C(K,2)) sum_pairs | mean(tau_hat) - mean(tau) |
double epsilon_ate(const std::vector<std::vector<double>>& tau_hat,
                   const std::vector<std::vector<double>>& tau,
                   std::size_t n_treatments);

// Full report from predicted and true potential-outcome matrices (N x K).
EvaluationReport evaluate_potential_outcomes(const Tensor& predicted,
                                             const Tensor& truth);

}  // namespace kanite
