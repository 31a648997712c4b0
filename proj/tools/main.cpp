// kanite: generate synthetic confounded datasets, train KANITE estimators,
// and sweep spline hyperparameters. Exit codes: 0 ok, 2 usage, 3 data,
// 4 training abort, 5 every sweep run failed.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kanite/data.hpp"
#include "kanite/kan.hpp"
#include "kanite/metrics.hpp"
#include "kanite/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw kanite::DataError("cannot write " + path.string());
  out << content;
}

std::string method_name(kanite::LossKind kind) {
  switch (kind) {
    case kanite::LossKind::Mmd:
      return "KANITE-MMD";
    case kanite::LossKind::Wasserstein:
      return "KANITE-Wass";
    case kanite::LossKind::EntropyBalancing:
      return "KANITE-EB";
  }
  return "KANITE";
}

void print_table_header() {
  std::printf("%-28s %-20s %-20s\n", "Method", "eps_PEHE", "eps_ATE");
}

std::string cell_text(double mean, std::optional<double> sd) {
  char buf[64];
  if (std::isnan(mean)) return "n/a";
  if (sd) {
    std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", mean, *sd);
  } else {
    std::snprintf(buf, sizeof(buf), "%.4f", mean);
  }
  return buf;
}

void print_table_row(const std::string& method, double pehe,
                     std::optional<double> pehe_sd, double ate,
                     std::optional<double> ate_sd) {
  std::printf("%-28s %-20s %-20s\n", method.c_str(),
              cell_text(pehe, pehe_sd).c_str(), cell_text(ate, ate_sd).c_str());
}

// Shared train/sweep flags, bound to plain variables so a flat JSON config
// file can fill anything not given on the command line.
struct TrainFlags {
  std::string data;
  std::string out_dir = "out";
  std::string loss = "mmd";
  double alpha = 1.0;
  double beta = 1.0;
  double lr = -1.0;
  std::string optimizer = "adam";
  std::size_t batch = 64;
  std::size_t epochs = 500;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  int grid = 5;
  int degree = 3;
  std::string psi_widths = "64,64,32";
  std::string head_widths = "16";
  double sparsify = 1e-5;
  bool standardize_y = false;
  std::string split = "0.63,0.27,0.10";
  std::string mmd_kernel = "linear";
  double sinkhorn_eps = -1.0;
  int sinkhorn_iters = 50;
  int eb_iters = 200;
  double eb_lr = 0.1;
  std::string config_file;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--data", f.data, "dataset CSV")->required();
  cmd->add_option("--out", f.out_dir, "output directory");
  cmd->add_option("--loss", f.loss, "representation loss: mmd|wass|eb");
  cmd->add_option("--alpha", f.alpha, "factual loss weight");
  cmd->add_option("--beta", f.beta, "representation loss weight");
  cmd->add_option("--lr", f.lr, "learning rate (<0 picks the optimizer default)");
  cmd->add_option("--optimizer", f.optimizer, "adam|sgd");
  cmd->add_option("--batch", f.batch, "minibatch size");
  cmd->add_option("--epochs", f.epochs, "max epochs");
  cmd->add_option("--patience", f.patience, "early-stopping patience");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--grid", f.grid, "spline grid size G");
  cmd->add_option("--degree", f.degree, "spline degree k");
  cmd->add_option("--psi-widths", f.psi_widths,
                  "representation widths, last is the latent dim");
  cmd->add_option("--head-widths", f.head_widths, "head hidden widths");
  cmd->add_option("--sparsify", f.sparsify, "L1 weight on spline coefficients");
  cmd->add_flag("--standardize-y", f.standardize_y,
                "standardize outcomes for training");
  cmd->add_option("--split", f.split, "train,val,test fractions");
  cmd->add_option("--mmd-kernel", f.mmd_kernel, "linear|rbf");
  cmd->add_option("--sinkhorn-eps", f.sinkhorn_eps,
                  "entropic regularization (<=0 auto)");
  cmd->add_option("--sinkhorn-iters", f.sinkhorn_iters, "Sinkhorn iterations");
  cmd->add_option("--eb-iters", f.eb_iters, "EB dual solver iterations");
  cmd->add_option("--eb-lr", f.eb_lr, "EB dual solver step size");
  cmd->add_option("--config", f.config_file,
                  "flat JSON config; flags override file values");
}

// Fills any flag the command line did not set from the config file.
class ConfigLayer {
 public:
  ConfigLayer(CLI::App* cmd, const std::string& path) : cmd_(cmd) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw kanite::DataError("config: cannot open " + path);
    try {
      in >> doc_;
    } catch (const json::exception& e) {
      throw kanite::DataError("config: " + std::string(e.what()));
    }
  }

  template <class T>
  void apply(const std::string& flag, T& var) const {
    if (doc_.is_null() || !doc_.contains(flag)) return;
    auto* opt = cmd_->get_option_no_throw("--" + flag);
    if (opt != nullptr && opt->count() > 0) return;  // flags win
    var = doc_.at(flag).get<T>();
  }

 private:
  CLI::App* cmd_;
  json doc_;
};

void layer_config(CLI::App* cmd, TrainFlags& f) {
  ConfigLayer layer(cmd, f.config_file);
  layer.apply("data", f.data);
  layer.apply("out", f.out_dir);
  layer.apply("loss", f.loss);
  layer.apply("alpha", f.alpha);
  layer.apply("beta", f.beta);
  layer.apply("lr", f.lr);
  layer.apply("optimizer", f.optimizer);
  layer.apply("batch", f.batch);
  layer.apply("epochs", f.epochs);
  layer.apply("patience", f.patience);
  layer.apply("seed", f.seed);
  layer.apply("grid", f.grid);
  layer.apply("degree", f.degree);
  layer.apply("psi-widths", f.psi_widths);
  layer.apply("head-widths", f.head_widths);
  layer.apply("sparsify", f.sparsify);
  layer.apply("standardize-y", f.standardize_y);
  layer.apply("split", f.split);
  layer.apply("mmd-kernel", f.mmd_kernel);
  layer.apply("sinkhorn-eps", f.sinkhorn_eps);
  layer.apply("sinkhorn-iters", f.sinkhorn_iters);
  layer.apply("eb-iters", f.eb_iters);
  layer.apply("eb-lr", f.eb_lr);
}

kanite::TrainConfig to_train_config(const TrainFlags& f) {
  kanite::TrainConfig cfg;
  cfg.alpha = f.alpha;
  cfg.beta = f.beta;
  cfg.loss_kind = kanite::loss_kind_from_name(f.loss);
  if (f.mmd_kernel == "linear") {
    cfg.mmd_kernel = kanite::MmdKernel::Linear;
  } else if (f.mmd_kernel == "rbf") {
    cfg.mmd_kernel = kanite::MmdKernel::Rbf;
  } else {
    throw kanite::DomainError("unknown mmd kernel '" + f.mmd_kernel + "'");
  }
  cfg.sinkhorn.eps = f.sinkhorn_eps;
  cfg.sinkhorn.iters = f.sinkhorn_iters;
  cfg.eb.iters = f.eb_iters;
  cfg.eb.lr = f.eb_lr;
  if (f.optimizer == "adam") {
    cfg.optimizer = kanite::OptimizerKind::Adam;
  } else if (f.optimizer == "sgd") {
    cfg.optimizer = kanite::OptimizerKind::Sgd;
  } else {
    throw kanite::DomainError("unknown optimizer '" + f.optimizer + "'");
  }
  cfg.lr = f.lr;
  cfg.batch_size = f.batch;
  cfg.max_epochs = f.epochs;
  cfg.patience = f.patience;
  cfg.seed = f.seed;
  cfg.sparsify_weight = f.sparsify;
  cfg.model.grid_size = f.grid;
  cfg.model.degree = f.degree;
  cfg.model.psi_widths.clear();
  for (int w : parse_int_list(f.psi_widths)) {
    cfg.model.psi_widths.push_back(static_cast<std::size_t>(w));
  }
  cfg.model.head_hidden.clear();
  for (int w : parse_int_list(f.head_widths)) {
    cfg.model.head_hidden.push_back(static_cast<std::size_t>(w));
  }
  cfg.validate();
  return cfg;
}

kanite::SplitSpec to_split_spec(const TrainFlags& f) {
  auto fr = parse_double_list(f.split);
  if (fr.size() != 3) {
    throw kanite::DomainError("--split needs three fractions");
  }
  kanite::SplitSpec spec;
  spec.train = fr[0];
  spec.val = fr[1];
  spec.test = fr[2];
  spec.seed = f.seed;
  return spec;
}

json normalization_json(const kanite::NormalizationStats& stats) {
  json j;
  j["x_mean"] = stats.x_mean;
  j["x_std"] = stats.x_std;
  j["constant_columns"] = stats.constant_columns;
  j["y_standardized"] = stats.y_standardized;
  j["y_mean"] = stats.y_mean;
  j["y_std"] = stats.y_std;
  return j;
}

int cmd_gen(std::size_t n, std::size_t dim, std::size_t k, double gamma,
            double sigma, std::uint64_t seed, const std::string& out) {
  kanite::GeneratorConfig cfg;
  cfg.n = n;
  cfg.covariate_dim = dim;
  cfg.n_treatments = k;
  cfg.gamma = gamma;
  cfg.sigma = sigma;
  cfg.seed = seed;
  try {
    auto ds = kanite::generate_synthetic(cfg);
    kanite::save_csv(ds, out);
    json meta;
    meta["n"] = n;
    meta["dim"] = dim;
    meta["k"] = k;
    meta["gamma"] = gamma;
    meta["sigma"] = sigma;
    meta["seed"] = seed;
    fs::path meta_path = fs::path(out);
    meta_path.replace_extension(".meta.json");
    write_file(meta_path, meta.dump(2) + "\n");
    std::printf("wrote %s (%zu rows, K=%zu) and %s\n", out.c_str(), ds.n(), k,
                meta_path.string().c_str());
    return 0;
  } catch (const kanite::KaniteError& e) {
    std::fprintf(stderr, "gen: %s\n", e.what());
    return 3;
  }
}

int cmd_train(CLI::App* cmd, TrainFlags& f) {
  try {
    layer_config(cmd, f);
  } catch (const kanite::DataError& e) {
    std::fprintf(stderr, "train: %s\n", e.what());
    return 2;
  }
  if (!fs::exists(f.data)) {
    std::fprintf(stderr, "train: missing file: %s\n", f.data.c_str());
    return 2;
  }
  kanite::TrainConfig cfg;
  kanite::SplitSpec split_spec;
  try {
    cfg = to_train_config(f);
    split_spec = to_split_spec(f);
  } catch (const kanite::KaniteError& e) {
    std::fprintf(stderr, "train: %s\n", e.what());
    return 2;
  }

  kanite::ObservationalDataset ds;
  try {
    ds = kanite::load_csv(f.data);
  } catch (const kanite::KaniteError& e) {
    std::fprintf(stderr, "train: %s\n", e.what());
    return 3;
  }

  fs::create_directories(f.out_dir);
  try {
    auto parts = kanite::split(ds, split_spec);
    for (const auto& w : parts.warnings) {
      std::fprintf(stderr, "warning: %s\n", w.c_str());
    }
    auto stats = kanite::fit_normalization(parts.train, f.standardize_y);
    auto result = kanite::train(kanite::apply_normalization(parts.train, stats),
                                kanite::apply_normalization(parts.val, stats),
                                cfg);

    write_file(fs::path(f.out_dir) / "runlog.jsonl", result.log.to_jsonl());

    json extra;
    extra["normalization"] = normalization_json(stats);
    extra["train"] = {{"loss", f.loss},   {"alpha", f.alpha},
                      {"beta", f.beta},   {"seed", f.seed},
                      {"grid", f.grid},   {"degree", f.degree},
                      {"optimizer", f.optimizer}};
    kanite::save_model(result.model,
                       (fs::path(f.out_dir) / "model.json").string(),
                       extra.dump());

    auto report = kanite::evaluate(result.model, ds, stats);
    json rj = json::parse(report.to_json());
    rj["method"] = method_name(cfg.loss_kind);
    rj["best_epoch"] = result.log.best_epoch;
    rj["parameter_count"] = result.log.parameter_count;
    rj["wall_seconds"] = result.log.wall_seconds;
    rj["l2_skipped_steps"] = result.log.l2_skipped_steps;
    rj["aborted"] = result.log.aborted;
    if (result.log.aborted) rj["abort_reason"] = result.log.abort_reason;
    write_file(fs::path(f.out_dir) / "report.json", rj.dump(2) + "\n");

    print_table_header();
    double nan = std::numeric_limits<double>::quiet_NaN();
    print_table_row(method_name(cfg.loss_kind),
                    report.ite_available ? report.pehe : nan, std::nullopt,
                    report.ite_available ? report.ate_error : nan,
                    std::nullopt);
    std::printf("factual MSE (full dataset): %.6f\n", report.factual_mse);
    std::printf("parameters: %zu, best epoch: %zu\n",
                result.log.parameter_count, result.log.best_epoch);

    if (result.log.aborted) {
      std::fprintf(stderr, "train: aborted: %s\n",
                   result.log.abort_reason.c_str());
      return 4;
    }
    return 0;
  } catch (const kanite::TrainingError& e) {
    std::fprintf(stderr, "train: %s\n", e.what());
    return 4;
  } catch (const kanite::KaniteError& e) {
    std::fprintf(stderr, "train: %s\n", e.what());
    return 3;
  }
}

int cmd_sweep(CLI::App* cmd, TrainFlags& f, std::string grids,
              std::string degrees, std::size_t reps, std::size_t jobs) {
  try {
    layer_config(cmd, f);
    ConfigLayer layer(cmd, f.config_file);
    layer.apply("grids", grids);
    layer.apply("degrees", degrees);
    layer.apply("reps", reps);
    layer.apply("jobs", jobs);
  } catch (const kanite::DataError& e) {
    std::fprintf(stderr, "sweep: %s\n", e.what());
    return 2;
  }
  if (!fs::exists(f.data)) {
    std::fprintf(stderr, "sweep: missing file: %s\n", f.data.c_str());
    return 2;
  }

  kanite::TrainConfig base;
  kanite::SweepOptions opts;
  try {
    base = to_train_config(f);
    opts.grid_sizes = parse_int_list(grids);
    opts.spline_degrees = parse_int_list(degrees);
    opts.repetitions = reps;
    opts.jobs = jobs;
    opts.split = to_split_spec(f);
    opts.standardize_y = f.standardize_y;
    if (opts.grid_sizes.empty() || opts.spline_degrees.empty() || reps == 0) {
      throw kanite::DomainError("empty grids/degrees/reps");
    }
  } catch (const kanite::KaniteError& e) {
    std::fprintf(stderr, "sweep: %s\n", e.what());
    return 2;
  }

  kanite::ObservationalDataset ds;
  try {
    ds = kanite::load_csv(f.data);
  } catch (const kanite::KaniteError& e) {
    std::fprintf(stderr, "sweep: %s\n", e.what());
    return 3;
  }

  auto rows = kanite::sweep(ds, base, opts);
  std::size_t n_ok = 0;
  for (const auto& r : rows) {
    if (r.ok) {
      ++n_ok;
    } else {
      std::fprintf(stderr, "sweep: run G=%d k=%d seed=%llu failed: %s\n",
                   r.grid_size, r.degree,
                   static_cast<unsigned long long>(r.seed), r.error.c_str());
    }
  }
  auto cells = kanite::aggregate_sweep(rows);

  fs::create_directories(f.out_dir);
  write_file(fs::path(f.out_dir) / "sweep.csv", kanite::sweep_to_csv(cells));
  write_file(fs::path(f.out_dir) / "params.csv", kanite::params_to_csv(cells));

  print_table_header();
  double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& c : cells) {
    char label[96];
    std::snprintf(label, sizeof(label), "%s G=%d k=%d",
                  method_name(base.loss_kind).c_str(), c.grid_size, c.degree);
    if (c.n_ok > 0) {
      print_table_row(label, c.pehe_mean, c.pehe_std, c.ate_mean, c.ate_std);
    } else {
      print_table_row(label, nan, std::nullopt, nan, std::nullopt);
    }
    if (c.n_ok < c.n_runs) {
      std::printf("  (partial cell: %zu/%zu runs succeeded)\n", c.n_ok,
                  c.n_runs);
    }
  }

  if (n_ok == 0) {
    std::fprintf(stderr, "sweep: every run failed\n");
    return 5;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KANITE: treatment effect estimation with Kolmogorov-Arnold "
               "networks"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::size_t gn = 1000, gdim = 10, gk = 2;
  double ggamma = 1.0, gsigma = 0.5;
  std::uint64_t gseed = 0;
  std::string gout;
  gen->add_option("--n", gn, "number of samples");
  gen->add_option("--dim", gdim, "covariate dimension");
  gen->add_option("--k", gk, "number of treatments")
      ->check(CLI::Range(std::size_t{2}, std::size_t{64}));
  gen->add_option("--gamma", ggamma, "confounding strength");
  gen->add_option("--sigma", gsigma, "outcome noise");
  gen->add_option("--seed", gseed, "random seed");
  gen->add_option("--out", gout, "output CSV path")->required();

  auto* tr = app.add_subcommand("train", "train one KANITE model");
  TrainFlags tflags;
  add_train_flags(tr, tflags);

  auto* sw = app.add_subcommand("sweep", "grid-size / spline-degree study");
  TrainFlags sflags;
  add_train_flags(sw, sflags);
  std::string grids = "3,5", degrees = "2,3";
  std::size_t reps = 1, jobs = 1;
  sw->add_option("--grids", grids, "comma-separated grid sizes");
  sw->add_option("--degrees", degrees, "comma-separated spline degrees");
  sw->add_option("--reps", reps, "repetitions per cell");
  sw->add_option("--jobs", jobs, "parallel runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (gen->parsed()) {
    return cmd_gen(gn, gdim, gk, ggamma, gsigma, gseed, gout);
  }
  if (tr->parsed()) {
    return cmd_train(tr, tflags);
  }
  if (sw->parsed()) {
    return cmd_sweep(sw, sflags, grids, degrees, reps, jobs);
  }
  return 2;
}
