#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "kanite/tensor.hpp"

namespace kanite {

// Rows (x_i, t_i, Y_i) with optional ground-truth potential outcomes for all
// K treatments. Treatment ids are 0-based in memory and 1-based on disk.
struct ObservationalDataset {
  Tensor x;            // (N, n0)
  std::vector<int> t;  // 0-based
  std::vector<double> y;
  Tensor mu;           // (N, K) when ground truth is available
  std::size_t n_treatments = 0;

  std::size_t n() const { return t.size(); }
  std::size_t covariate_dim() const { return x.dim(1); }
  bool has_ground_truth() const { return mu.defined(); }

  ObservationalDataset subset(const std::vector<std::size_t>& rows) const;
  // Loader/generator invariants: ids in range, every treatment present.
  void validate() const;
};

struct SplitSpec {
  double train = 0.63;
  double val = 0.27;
  double test = 0.10;
  std::uint64_t seed = 0;
};

struct SplitResult {
  ObservationalDataset train, val, test;
  std::array<std::vector<std::size_t>, 3> indices;
  std::vector<std::string> warnings;
};

// Deterministic stratified split with exact global sizes (largest-remainder
// apportionment); every split keeps every treatment when group sizes permit.
SplitResult split(const ObservationalDataset& ds, const SplitSpec& spec);

struct NormalizationStats {
  std::vector<double> x_mean, x_std;       // std 1 for constant columns
  std::vector<std::size_t> constant_columns;
  bool y_standardized = false;
  double y_mean = 0.0;
  double y_std = 1.0;

  double denormalize_outcome(double v) const {
    return y_standardized ? v * y_std + y_mean : v;
  }
};

// Train-split statistics only; covariates standardize to zero mean and unit
// variance, outcomes optionally. Ground-truth mu always stays in the original
// outcome scale.
NormalizationStats fit_normalization(const ObservationalDataset& train,
                                     bool standardize_y);
ObservationalDataset apply_normalization(const ObservationalDataset& ds,
                                         const NormalizationStats& stats);

struct GeneratorConfig {
  std::size_t n = 1000;
  std::size_t covariate_dim = 10;
  std::size_t n_treatments = 2;
  double gamma = 1.0;  // confounding strength
  double sigma = 0.5;  // outcome noise
  std::uint64_t seed = 0;
};

// Confounded synthetic data with known counterfactuals:
//   X ~ N(0, I);  P(T = t | x) = softmax_t(gamma * <W_t, x>);
//   mu[i, t] = a_t sin(<u_t, x_i>) + b_t <v_t, x_i>^2 + c_t <r_t, x_i> + d_t;
//   Y_i = mu[i, T_i] + N(0, sigma^2).
// Direction vectors are unit-normalized N(0, I) draws; all draws come from
// mt19937_64(seed) in the documented order (see README). Softmax assignment
// keeps every per-sample treatment probability strictly positive.
ObservationalDataset generate_synthetic(const GeneratorConfig& config);

// Per-sample assignment probabilities of the generator, for positivity checks.
std::vector<std::vector<double>> synthetic_assignment_probabilities(
    const GeneratorConfig& config);

// CSV schema: header x0..x{n0-1},t,y[,mu0..mu{K-1}], t written 1-based.
ObservationalDataset load_csv(const std::string& path);
void save_csv(const ObservationalDataset& ds, const std::string& path);
std::string dataset_to_csv(const ObservationalDataset& ds);
ObservationalDataset dataset_from_csv(const std::string& text);

}  // namespace kanite
