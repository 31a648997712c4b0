#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "kanite/metrics.hpp"
#include "testutil.hpp"

using namespace kanite;

TEST_CASE("true_ite is column subtraction") {
  Tensor mu = Tensor::from_rows({{1.0, 4.0, 2.0},
                                 {0.0, -1.0, 5.0},
                                 {3.0, 3.0, 3.0}});
  auto ite = true_ite(mu, 2, 1);
  CHECK(ite[0] == 3.0);
  CHECK(ite[1] == -1.0);
  CHECK(ite[2] == 0.0);

  auto same = true_ite(mu, 3, 3);
  for (double v : same) CHECK(v == 0.0);

  auto ab = true_ite(mu, 3, 1);
  auto ba = true_ite(mu, 1, 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(ab[i] == -ba[i]);

  CHECK_THROWS_AS(true_ite(mu, 0, 1), DomainError);
  CHECK_THROWS_AS(true_ite(mu, 1, 4), DomainError);
}

TEST_CASE("epsilon_pehe hand values") {
  CHECK(epsilon_pehe({{1.0, 2.0}}, {{1.0, 2.0}}, 2) == 0.0);
  // K=2, N=2, errors (1, -1) -> mean squared error 1
  CHECK(epsilon_pehe({{2.0, 1.0}}, {{1.0, 2.0}}, 2) == doctest::Approx(1.0));
  CHECK_THROWS_AS(epsilon_pehe({{1.0}}, {{1.0, 2.0}}, 2), ShapeError);
  CHECK_THROWS_AS(epsilon_pehe({{1.0}}, {{1.0}}, 3), ShapeError);
}

TEST_CASE("epsilon_ate hand values") {
  // constant offset c on a single pair
  CHECK(epsilon_ate({{1.5, 2.5}}, {{1.0, 2.0}}, 2) == doctest::Approx(0.5));
  // zero-mean antisymmetric errors: ATE blind while PEHE is positive
  std::vector<std::vector<double>> th = {{1.0, -1.0}};
  std::vector<std::vector<double>> tt = {{0.0, 0.0}};
  CHECK(epsilon_ate(th, tt, 2) == doctest::Approx(0.0));
  CHECK(epsilon_pehe(th, tt, 2) > 0.0);
}

TEST_CASE("nested-loop oracle on random instances") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> g;
  for (int rep = 0; rep < 100; ++rep) {
    std::size_t k = 2 + rep % 3;  // up to 4
    std::size_t n = 2 + static_cast<std::size_t>(rep) % 49;
    std::size_t n_pairs = k * (k - 1) / 2;
    std::vector<std::vector<double>> th(n_pairs), tt(n_pairs);
    for (auto& v : th) {
      v.resize(n);
      for (auto& e : v) e = g(rng);
    }
    for (auto& v : tt) {
      v.resize(n);
      for (auto& e : v) e = g(rng);
    }
    double pehe = 0.0, ate = 0.0;
    for (std::size_t p = 0; p < n_pairs; ++p) {
      double mse = 0.0, mh = 0.0, mt = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        mse += (th[p][i] - tt[p][i]) * (th[p][i] - tt[p][i]);
        mh += th[p][i];
        mt += tt[p][i];
      }
      pehe += mse / n;
      ate += std::abs(mh - mt) / n;
    }
    pehe /= n_pairs;
    ate /= n_pairs;
    CHECK(std::abs(epsilon_pehe(th, tt, k) - pehe) < 1e-12);
    CHECK(std::abs(epsilon_ate(th, tt, k) - ate) < 1e-12);
  }
}

TEST_CASE("jensen bound per pair: ate error <= sqrt(pehe)") {
  std::mt19937_64 rng(43);
  std::normal_distribution<double> g;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> th(10), tt(10);
    for (auto& v : th) v = g(rng);
    for (auto& v : tt) v = g(rng);
    double pehe = epsilon_pehe({th}, {tt}, 2);
    double ate = epsilon_ate({th}, {tt}, 2);
    CHECK(ate <= std::sqrt(pehe) + 1e-12);
  }
}

TEST_CASE("relabeling treatments leaves the metrics unchanged") {
  std::mt19937_64 rng(44);
  std::normal_distribution<double> g;
  std::size_t n = 12, k = 3;
  std::vector<std::vector<double>> pred(n, std::vector<double>(k));
  std::vector<std::vector<double>> truth(n, std::vector<double>(k));
  for (auto& row : pred) {
    for (auto& v : row) v = g(rng);
  }
  for (auto& row : truth) {
    for (auto& v : row) v = g(rng);
  }
  auto report = evaluate_potential_outcomes(Tensor::from_rows(pred),
                                            Tensor::from_rows(truth));
  std::vector<std::size_t> perm = {2, 0, 1};
  std::vector<std::vector<double>> pred_p(n, std::vector<double>(k));
  std::vector<std::vector<double>> truth_p(n, std::vector<double>(k));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      pred_p[i][t] = pred[i][perm[t]];
      truth_p[i][t] = truth[i][perm[t]];
    }
  }
  auto report_p = evaluate_potential_outcomes(Tensor::from_rows(pred_p),
                                              Tensor::from_rows(truth_p));
  CHECK(report.pehe == doctest::Approx(report_p.pehe).epsilon(1e-12));
  CHECK(report.ate_error == doctest::Approx(report_p.ate_error).epsilon(1e-12));
}

TEST_CASE("perfect prediction yields a zero report") {
  std::mt19937_64 rng(45);
  Tensor mu = Tensor::randn(Shape{20, 3}, rng);
  auto report = evaluate_potential_outcomes(mu, mu);
  CHECK(report.pehe == 0.0);
  CHECK(report.ate_error == 0.0);
  CHECK(report.pairs.size() == 3);
}

TEST_CASE("report serializes to json") {
  EvaluationReport report;
  report.ite_available = false;
  report.n_samples = 5;
  report.n_treatments = 2;
  report.factual_mse = 0.25;
  std::string text = report.to_json();
  CHECK(text.find("\"pehe\":null") != std::string::npos);
  CHECK(text.find("\"factual_mse\":0.25") != std::string::npos);
}
