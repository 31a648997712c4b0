#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "kanite/data.hpp"
#include "kanite/kan.hpp"
#include "kanite/losses.hpp"
#include "kanite/metrics.hpp"

namespace kanite {

enum class LossKind { Mmd, Wasserstein, EntropyBalancing };
enum class OptimizerKind { Sgd, Adam };

std::string loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

struct TrainConfig {
  double alpha = 1.0;
  double beta = 1.0;
  LossKind loss_kind = LossKind::Mmd;
  MmdKernel mmd_kernel = MmdKernel::Linear;
  SinkhornOptions sinkhorn;  // eps <= 0 selects 0.1 * median batch cost
  EbOptions eb;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double lr = -1.0;  // < 0: 1e-3 for adam, 1e-2 for sgd
  std::size_t batch_size = 64;
  std::size_t max_epochs = 500;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  double sparsify_weight = 1e-5;  // L1 on spline coefficients
  ModelConfig model;  // covariate_dim / n_treatments filled from the data

  double resolved_lr() const;
  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_l1 = 0.0;
  double train_l2 = 0.0;
  double train_total = 0.0;
  double val_l1 = 0.0;
};

struct RunLog {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;  // 1-based; epoch of the restored parameters
  double best_val_l1 = 0.0;
  std::size_t parameter_count = 0;
  std::size_t l2_skipped_steps = 0;
  double wall_seconds = 0.0;  // reported separately; not part of the jsonl
  bool aborted = false;
  std::string abort_reason;

  // One epoch per line; only run-deterministic fields are serialized.
  std::string to_jsonl() const;
};

class Optimizer {
 public:
  explicit Optimizer(std::vector<Tensor> params);
  virtual ~Optimizer() = default;
  virtual void step() = 0;
  void zero_grad();
  std::size_t n_scalars() const;

 protected:
  std::vector<Tensor> params_;
};

class SgdOptimizer : public Optimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, double lr);
  void step() override;

 private:
  double lr_;
};

class AdamOptimizer : public Optimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  void step() override;

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<std::vector<double>> m_, v_;
  long step_count_ = 0;
};

struct TrainResult {
  KaniteModel model;
  RunLog log;
};

// Minibatch loop of the training algorithm: factual regression loss plus the
// configured representation loss, early stopping on validation factual MSE,
// best-validation parameters restored on exit.  A non-finite loss aborts the
// run with the last good parameters and a diagnostic naming the broken term.
TrainResult train(const ObservationalDataset& train_ds,
                  const ObservationalDataset& val_ds,
                  const TrainConfig& config);

NormalizationStats identity_normalization(std::size_t covariate_dim);

// Predictions over the raw dataset (covariates standardized with the stored
// stats, outcomes mapped back to the original scale) scored against the
// ground-truth potential outcomes when present.
EvaluationReport evaluate(const KaniteModel& model,
                          const ObservationalDataset& ds,
                          const NormalizationStats& stats);

struct SweepRow {
  int grid_size = 0;
  int degree = 0;
  std::uint64_t seed = 0;
  double pehe = 0.0;
  double ate_error = 0.0;
  std::size_t parameter_count = 0;
  std::size_t epochs_to_best = 0;
  double wall_seconds = 0.0;
  bool ok = false;
  std::string error;
};

struct SweepOptions {
  std::vector<int> grid_sizes;
  std::vector<int> spline_degrees;
  std::size_t repetitions = 1;
  std::size_t jobs = 1;
  SplitSpec split;
  bool standardize_y = false;
};

// Cartesian (grid, degree) x repetition study; failed runs are recorded and
// the sweep continues.  Rows come back in deterministic (grid, degree, seed)
// order regardless of job count.
std::vector<SweepRow> sweep(const ObservationalDataset& ds,
                            const TrainConfig& base,
                            const SweepOptions& options);

// Per-(grid, degree) aggregation over repetitions; std is the sample standard
// deviation across the successful runs.
struct SweepCell {
  int grid_size = 0;
  int degree = 0;
  std::uint64_t base_seed = 0;
  double pehe_mean = 0.0, pehe_std = 0.0;
  double ate_mean = 0.0, ate_std = 0.0;
  std::size_t parameter_count = 0;
  double epochs_mean = 0.0;
  double wall_seconds = 0.0;  // summed over runs
  std::size_t n_ok = 0, n_runs = 0;
};

std::vector<SweepCell> aggregate_sweep(const std::vector<SweepRow>& rows);

// One row per cell: grid,degree,seed,pehe,ate,params,epochs,wall_s
std::string sweep_to_csv(const std::vector<SweepCell>& cells);
// grid,degree,params (one row per configuration)
std::string params_to_csv(const std::vector<SweepCell>& cells);

}  // namespace kanite
