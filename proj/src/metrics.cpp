#include "kanite/metrics.hpp"

#include <cmath>

#include <json.hpp>

namespace kanite {

std::vector<double> true_ite(const Tensor& potential_outcomes, std::size_t a,
                             std::size_t b) {
  if (potential_outcomes.ndim() != 2) {
    throw ShapeError("true_ite: potential outcomes must be (N, K)");
  }
  std::size_t k = potential_outcomes.dim(1);
  if (a < 1 || a > k || b < 1 || b > k) {
    throw DomainError("true_ite: treatment id out of range 1.." +
                      std::to_string(k));
  }
  std::size_t n = potential_outcomes.dim(0);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = potential_outcomes.at(i, a - 1) - potential_outcomes.at(i, b - 1);
  }
  return out;
}

namespace {

void check_pairs(const std::vector<std::vector<double>>& tau_hat,
                 const std::vector<std::vector<double>>& tau,
                 std::size_t n_treatments, const char* op) {
  std::size_t expected = n_treatments * (n_treatments - 1) / 2;
  if (tau_hat.size() != expected || tau.size() != expected) {
    throw ShapeError(std::string(op) + ": expected " +
                     std::to_string(expected) + " treatment pairs");
  }
  for (std::size_t p = 0; p < expected; ++p) {
    if (tau_hat[p].size() != tau[p].size() || tau_hat[p].empty()) {
      throw ShapeError(std::string(op) + ": pair " + std::to_string(p) +
                       " length mismatch");
    }
  }
}

}  // namespace

double epsilon_pehe(const std::vector<std::vector<double>>& tau_hat,
                    const std::vector<std::vector<double>>& tau,
                    std::size_t n_treatments) {
  check_pairs(tau_hat, tau, n_treatments, "epsilon_pehe");
  double total = 0.0;
  for (std::size_t p = 0; p < tau_hat.size(); ++p) {
    double mse = 0.0;
    for (std::size_t i = 0; i < tau_hat[p].size(); ++i) {
      double e = tau_hat[p][i] - tau[p][i];
      mse += e * e;
    }
    total += mse / static_cast<double>(tau_hat[p].size());
  }
  return total / static_cast<double>(tau_hat.size());
}

double epsilon_ate(const std::vector<std::vector<double>>& tau_hat,
                   const std::vector<std::vector<double>>& tau,
                   std::size_t n_treatments) {
  check_pairs(tau_hat, tau, n_treatments, "epsilon_ate");
  double total = 0.0;
  for (std::size_t p = 0; p < tau_hat.size(); ++p) {
    double mh = 0.0, mt = 0.0;
    for (std::size_t i = 0; i < tau_hat[p].size(); ++i) {
      mh += tau_hat[p][i];
      mt += tau[p][i];
    }
    double n = static_cast<double>(tau_hat[p].size());
    total += std::abs(mh / n - mt / n);
  }
  return total / static_cast<double>(tau_hat.size());
}

EvaluationReport evaluate_potential_outcomes(const Tensor& predicted,
                                             const Tensor& truth) {
  if (predicted.ndim() != 2 || truth.ndim() != 2 ||
      predicted.shape() != truth.shape()) {
    throw ShapeError("evaluate_potential_outcomes: shape mismatch");
  }
  std::size_t k = predicted.dim(1);
  EvaluationReport report;
  report.ite_available = true;
  report.n_samples = predicted.dim(0);
  report.n_treatments = k;

  std::vector<std::vector<double>> tau_hat, tau;
  for (std::size_t a = 2; a <= k; ++a) {
    for (std::size_t b = 1; b < a; ++b) {
      tau_hat.push_back(true_ite(predicted, a, b));
      tau.push_back(true_ite(truth, a, b));
      PairMetrics pm;
      pm.a = a;
      pm.b = b;
      double mse = 0.0, mh = 0.0, mt = 0.0;
      const auto& th = tau_hat.back();
      const auto& tt = tau.back();
      for (std::size_t i = 0; i < th.size(); ++i) {
        double e = th[i] - tt[i];
        mse += e * e;
        mh += th[i];
        mt += tt[i];
      }
      double n = static_cast<double>(th.size());
      pm.pehe = mse / n;
      pm.ate_error = std::abs(mh / n - mt / n);
      report.pairs.push_back(pm);
    }
  }
  report.pehe = epsilon_pehe(tau_hat, tau, k);
  report.ate_error = epsilon_ate(tau_hat, tau, k);
  return report;
}

std::string EvaluationReport::to_json() const {
  nlohmann::json doc;
  doc["ite_available"] = ite_available;
  doc["n_samples"] = n_samples;
  doc["k"] = n_treatments;
  doc["factual_mse"] = factual_mse;
  if (ite_available) {
    doc["pehe"] = pehe;
    doc["ate_error"] = ate_error;
    nlohmann::json pj = nlohmann::json::array();
    for (const auto& p : pairs) {
      pj.push_back({{"a", p.a},
                    {"b", p.b},
                    {"pehe", p.pehe},
                    {"ate_error", p.ate_error}});
    }
    doc["pairs"] = pj;
  } else {
    doc["pehe"] = nullptr;
    doc["ate_error"] = nullptr;
    doc["pairs"] = nlohmann::json::array();
  }
  return doc.dump();
}

}  // namespace kanite
