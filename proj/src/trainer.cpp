#include "kanite/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <thread>
#include <tuple>

#include "kanite/ops.hpp"
#include <json.hpp>

namespace kanite {

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::Mmd:
      return "mmd";
    case LossKind::Wasserstein:
      return "wass";
    case LossKind::EntropyBalancing:
      return "eb";
  }
  return "?";
}

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "mmd") return LossKind::Mmd;
  if (name == "wass") return LossKind::Wasserstein;
  if (name == "eb") return LossKind::EntropyBalancing;
  throw DomainError("unknown loss kind '" + name + "' (mmd|wass|eb)");
}

double TrainConfig::resolved_lr() const {
  if (lr >= 0.0) return lr;
  return optimizer == OptimizerKind::Adam ? 1e-3 : 1e-2;
}

void TrainConfig::validate() const {
  if (alpha < 0.0 || beta < 0.0) {
    throw DomainError("train config: alpha and beta must be >= 0");
  }
  if (batch_size < 2) throw DomainError("train config: batch size must be >= 2");
  if (patience < 1) throw DomainError("train config: patience must be >= 1");
  if (max_epochs < 1) throw DomainError("train config: max epochs must be >= 1");
  if (model.grid_size < 1 || model.degree < 0) {
    throw DomainError("train config: invalid spline grid/degree");
  }
}

std::string RunLog::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::json line;
    line["epoch"] = e.epoch;
    line["train_l1"] = e.train_l1;
    line["train_l2"] = e.train_l2;
    line["train_total"] = e.train_total;
    line["val_l1"] = e.val_l1;
    out += line.dump();
    out += "\n";
  }
  return out;
}

Optimizer::Optimizer(std::vector<Tensor> params) : params_(std::move(params)) {}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t Optimizer::n_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, double lr)
    : Optimizer(std::move(params)), lr_(lr) {}

void SgdOptimizer::step() {
  for (auto& p : params_) {
    if (!p.has_grad()) continue;
    auto& v = p.values();
    const auto& g = p.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
  }
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, double lr,
                             double beta1, double beta2, double eps)
    : Optimizer(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].numel(), 0.0);
    v_[i].assign(params_[i].numel(), 0.0);
  }
}

void AdamOptimizer::step() {
  ++step_count_;
  double bc1 = 1.0 - std::pow(beta1_, step_count_);
  double bc2 = 1.0 - std::pow(beta2_, step_count_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto& values = p.values();
    const auto& g = p.grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      values[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

namespace {

Tensor batch_rows(const ObservationalDataset& ds,
                  const std::vector<std::size_t>& rows) {
  std::size_t n0 = ds.covariate_dim();
  std::vector<double> v;
  v.reserve(rows.size() * n0);
  for (auto r : rows) {
    for (std::size_t j = 0; j < n0; ++j) v.push_back(ds.x.at(r, j));
  }
  return Tensor(Shape{rows.size(), n0}, std::move(v));
}

Tensor coefficient_l1(const KaniteModel& model) {
  Tensor acc = Tensor::scalar(0.0);
  auto add_stack = [&](const std::vector<KanLayer>& layers) {
    for (const auto& layer : layers) {
      const Tensor& c = layer.coefficients();
      acc = add(acc, sum(add(relu(c), relu(mul(c, Tensor::scalar(-1.0))))));
    }
  };
  add_stack(model.psi().layers);
  for (const auto& head : model.heads()) add_stack(head.layers);
  return acc;
}

double dataset_l1(const KaniteModel& model, const ObservationalDataset& ds) {
  if (ds.n() == 0) return 0.0;
  Tensor preds = model.forward(ds.x);
  return factual_mse(preds, ds.t, ds.y).item();
}

struct BatchLoss {
  Tensor total;
  double l1 = 0.0;
  double l2 = 0.0;
  bool l2_skipped = false;
};

BatchLoss batch_loss(const KaniteModel& model, const Tensor& xb,
                     const std::vector<int>& tb, const std::vector<double>& yb,
                     const TrainConfig& config) {
  BatchLoss out;
  auto [rep, preds] = model.forward_with_representation(xb);

  Tensor l1;
  try {
    l1 = factual_mse(preds, tb, yb);
  } catch (const KaniteError& e) {
    throw TrainingError(std::string("factual loss (L1): ") + e.what());
  }
  out.l1 = l1.item();

  Tensor l2 = Tensor::scalar(0.0);
  if (config.beta > 0.0) {
    std::size_t k = model.n_treatments();
    GroupedRepresentations groups =
        GroupedRepresentations::from(rep, tb, k);
    try {
      if (config.loss_kind == LossKind::EntropyBalancing) {
        if (groups.n_nonempty() < k) {
          out.l2_skipped = true;
        } else {
          EBDualState dual = eb_dual_solve(groups, config.eb);
          l2 = eb_representation_loss(groups, dual);
        }
      } else {
        IpmOptions ipm;
        ipm.kind = config.loss_kind == LossKind::Mmd ? IpmKind::Mmd
                                                     : IpmKind::Wasserstein;
        ipm.kernel = config.mmd_kernel;
        ipm.sinkhorn = config.sinkhorn;
        auto res = pairwise_ipm(groups, ipm);
        if (res.pairs_used == 0) {
          out.l2_skipped = true;
        } else {
          l2 = res.value;
        }
      }
    } catch (const KaniteError& e) {
      throw TrainingError("representation loss (L2, " +
                          loss_kind_name(config.loss_kind) + "): " + e.what());
    }
  }
  out.l2 = l2.item();

  try {
    out.total = total_loss(l1, l2, config.alpha, config.beta);
    if (config.sparsify_weight > 0.0) {
      out.total = add(out.total, mul(coefficient_l1(model),
                                     Tensor::scalar(config.sparsify_weight)));
    }
  } catch (const KaniteError& e) {
    throw TrainingError(std::string("total loss: ") + e.what());
  }
  return out;
}

}  // namespace

TrainResult train(const ObservationalDataset& train_ds,
                  const ObservationalDataset& val_ds,
                  const TrainConfig& config) {
  config.validate();
  train_ds.validate();  // all treatments must be present in train
  if (val_ds.n() > 0 && (val_ds.covariate_dim() != train_ds.covariate_dim() ||
                         val_ds.n_treatments != train_ds.n_treatments)) {
    throw ShapeError("train: train/val schema mismatch");
  }

  auto t_start = std::chrono::steady_clock::now();

  ModelConfig model_cfg = config.model;
  model_cfg.covariate_dim = train_ds.covariate_dim();
  model_cfg.n_treatments = train_ds.n_treatments;

  std::mt19937_64 rng(config.seed);
  KaniteModel model = build_model(model_cfg, train_ds.x.values(), rng);

  std::unique_ptr<Optimizer> opt;
  if (config.optimizer == OptimizerKind::Adam) {
    opt = std::make_unique<AdamOptimizer>(model.parameters(), config.resolved_lr());
  } else {
    opt = std::make_unique<SgdOptimizer>(model.parameters(), config.resolved_lr());
  }

  TrainResult result;
  result.log.parameter_count = model.count_parameters();

  std::vector<std::size_t> order(train_ds.n());
  std::iota(order.begin(), order.end(), 0);

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> best_params = model.snapshot();
  std::size_t best_epoch = 0;
  std::size_t wait = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum_l1 = 0.0, sum_l2 = 0.0, sum_total = 0.0;
    std::size_t n_seen = 0;

    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<std::size_t> rows(order.begin() + start,
                                    order.begin() + stop);
      Tensor xb = batch_rows(train_ds, rows);
      std::vector<int> tb(rows.size());
      std::vector<double> yb(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        tb[i] = train_ds.t[rows[i]];
        yb[i] = train_ds.y[rows[i]];
      }

      try {
        Tape tape;
        BatchLoss loss = batch_loss(model, xb, tb, yb, config);
        if (loss.l2_skipped) ++result.log.l2_skipped_steps;
        opt->zero_grad();
        tape.backward(loss.total);
        opt->step();
        sum_l1 += loss.l1 * rows.size();
        sum_l2 += loss.l2 * rows.size();
        sum_total += loss.total.item() * rows.size();
        n_seen += rows.size();
      } catch (const KaniteError& e) {
        result.log.aborted = true;
        result.log.abort_reason = e.what();
        model.restore(best_params);
        result.model = std::move(model);
        result.log.best_epoch = best_epoch;
        result.log.best_val_l1 = best_val;
        result.log.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          t_start)
                .count();
        return result;
      }
    }

    EpochLog el;
    el.epoch = epoch;
    el.train_l1 = sum_l1 / n_seen;
    el.train_l2 = sum_l2 / n_seen;
    el.train_total = sum_total / n_seen;
    try {
      el.val_l1 = val_ds.n() > 0 ? dataset_l1(model, val_ds) : el.train_l1;
    } catch (const KaniteError& e) {
      result.log.aborted = true;
      result.log.abort_reason = std::string("validation loss: ") + e.what();
      model.restore(best_params);
      result.model = std::move(model);
      result.log.best_epoch = best_epoch;
      result.log.best_val_l1 = best_val;
      result.log.wall_seconds = std::chrono::duration<double>(
                                    std::chrono::steady_clock::now() - t_start)
                                    .count();
      return result;
    }
    result.log.epochs.push_back(el);

    if (el.val_l1 < best_val) {
      best_val = el.val_l1;
      best_epoch = epoch;
      best_params = model.snapshot();
      wait = 0;
    } else {
      ++wait;
      if (wait >= config.patience) break;
    }
  }

  model.restore(best_params);
  result.model = std::move(model);
  result.log.best_epoch = best_epoch;
  result.log.best_val_l1 = best_val;
  result.log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return result;
}

NormalizationStats identity_normalization(std::size_t covariate_dim) {
  NormalizationStats stats;
  stats.x_mean.assign(covariate_dim, 0.0);
  stats.x_std.assign(covariate_dim, 1.0);
  return stats;
}

EvaluationReport evaluate(const KaniteModel& model,
                          const ObservationalDataset& ds,
                          const NormalizationStats& stats) {
  ObservationalDataset norm = ds;
  {
    NormalizationStats x_only = stats;
    x_only.y_standardized = false;  // outcomes stay in the original scale
    norm = apply_normalization(ds, x_only);
  }
  Tensor preds = model.forward(norm.x);
  std::vector<double> pv = preds.values();
  for (auto& v : pv) v = stats.denormalize_outcome(v);
  Tensor pred_orig(preds.shape(), std::move(pv));

  EvaluationReport report;
  if (ds.has_ground_truth()) {
    report = evaluate_potential_outcomes(pred_orig, ds.mu);
  } else {
    report.ite_available = false;
    report.n_samples = ds.n();
    report.n_treatments = ds.n_treatments;
  }
  report.factual_mse = factual_mse(pred_orig, ds.t, ds.y).item();
  return report;
}

std::vector<SweepRow> sweep(const ObservationalDataset& ds,
                            const TrainConfig& base,
                            const SweepOptions& options) {
  if (options.grid_sizes.empty() || options.spline_degrees.empty() ||
      options.repetitions == 0) {
    throw DomainError("sweep: empty grid/degree/repetition lists");
  }
  struct RunSpec {
    int grid;
    int degree;
    std::uint64_t seed;
  };
  std::vector<RunSpec> specs;
  for (int g : options.grid_sizes) {
    for (int d : options.spline_degrees) {
      for (std::size_t rep = 0; rep < options.repetitions; ++rep) {
        specs.push_back({g, d, base.seed + rep});
      }
    }
  }

  std::vector<SweepRow> rows(specs.size());
  auto run_one = [&](std::size_t idx) {
    const RunSpec& spec = specs[idx];
    SweepRow row;
    row.grid_size = spec.grid;
    row.degree = spec.degree;
    row.seed = spec.seed;
    try {
      SplitSpec split_spec = options.split;
      split_spec.seed = spec.seed;
      SplitResult parts = split(ds, split_spec);
      NormalizationStats stats =
          fit_normalization(parts.train, options.standardize_y);
      ObservationalDataset train_n = apply_normalization(parts.train, stats);
      ObservationalDataset val_n = apply_normalization(parts.val, stats);

      TrainConfig cfg = base;
      cfg.model.grid_size = spec.grid;
      cfg.model.degree = spec.degree;
      cfg.seed = spec.seed;
      TrainResult res = train(train_n, val_n, cfg);
      if (res.log.aborted) {
        throw TrainingError("aborted: " + res.log.abort_reason);
      }
      EvaluationReport report = evaluate(res.model, ds, stats);
      row.pehe = report.pehe;
      row.ate_error = report.ate_error;
      row.parameter_count = res.model.count_parameters();
      row.epochs_to_best = res.log.best_epoch;
      row.wall_seconds = res.log.wall_seconds;
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
      row.pehe = std::numeric_limits<double>::quiet_NaN();
      row.ate_error = std::numeric_limits<double>::quiet_NaN();
    }
    rows[idx] = std::move(row);
  };

  std::size_t jobs = std::max<std::size_t>(1, options.jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < specs.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < std::min(jobs, specs.size()); ++j) {
      pool.emplace_back([&]() {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= specs.size()) return;
          run_one(i);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  return rows;
}

std::vector<SweepCell> aggregate_sweep(const std::vector<SweepRow>& rows) {
  std::vector<SweepCell> cells;
  auto find_cell = [&](int g, int d) -> SweepCell* {
    for (auto& c : cells) {
      if (c.grid_size == g && c.degree == d) return &c;
    }
    return nullptr;
  };
  for (const auto& r : rows) {
    SweepCell* cell = find_cell(r.grid_size, r.degree);
    if (!cell) {
      cells.push_back(SweepCell{});
      cell = &cells.back();
      cell->grid_size = r.grid_size;
      cell->degree = r.degree;
      cell->base_seed = r.seed;
    }
    cell->base_seed = std::min(cell->base_seed, r.seed);
    ++cell->n_runs;
    cell->wall_seconds += r.wall_seconds;
    if (r.ok) {
      ++cell->n_ok;
      cell->parameter_count = r.parameter_count;
    }
  }
  for (auto& cell : cells) {
    std::vector<double> pehes, ates, epochs;
    for (const auto& r : rows) {
      if (r.grid_size != cell.grid_size || r.degree != cell.degree || !r.ok) {
        continue;
      }
      pehes.push_back(r.pehe);
      ates.push_back(r.ate_error);
      epochs.push_back(static_cast<double>(r.epochs_to_best));
    }
    auto mean_std = [](const std::vector<double>& v) {
      if (v.empty()) {
        double nan = std::numeric_limits<double>::quiet_NaN();
        return std::pair<double, double>{nan, nan};
      }
      double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
      double s = 0.0;
      if (v.size() > 1) {
        for (double x : v) s += (x - m) * (x - m);
        s = std::sqrt(s / (v.size() - 1));
      }
      return std::pair<double, double>{m, s};
    };
    std::tie(cell.pehe_mean, cell.pehe_std) = mean_std(pehes);
    std::tie(cell.ate_mean, cell.ate_std) = mean_std(ates);
    cell.epochs_mean = mean_std(epochs).first;
  }
  return cells;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string sweep_to_csv(const std::vector<SweepCell>& cells) {
  std::string out = "grid,degree,seed,pehe,ate,params,epochs,wall_s\n";
  for (const auto& c : cells) {
    out += std::to_string(c.grid_size) + "," + std::to_string(c.degree) + "," +
           std::to_string(c.base_seed) + "," + fmt_double(c.pehe_mean) + "," +
           fmt_double(c.ate_mean) + "," + std::to_string(c.parameter_count) +
           "," + fmt_double(c.epochs_mean) + "," + fmt_double(c.wall_seconds) +
           "\n";
  }
  return out;
}

std::string params_to_csv(const std::vector<SweepCell>& cells) {
  std::string out = "grid,degree,params\n";
  for (const auto& c : cells) {
    out += std::to_string(c.grid_size) + "," + std::to_string(c.degree) + "," +
           std::to_string(c.parameter_count) + "\n";
  }
  return out;
}

}  // namespace kanite
