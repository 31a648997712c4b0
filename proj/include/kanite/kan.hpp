#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "kanite/spline.hpp"
#include "kanite/tensor.hpp"

namespace kanite {

// One KAN layer: an n_out x n_in matrix of learnable univariate activations,
// summed over inputs per output.  Edge parameters are stored packed
// (per-layer tensors) so a layer forward costs a handful of tape nodes:
//   wb (n_out, n_in), ws (n_out, n_in), coef (n_out, n_in * nb)
// where nb = grid_size + degree and edge (q, p) owns coef[q, p*nb .. p*nb+nb).
class KanLayer {
 public:
  KanLayer(std::size_t n_in, std::size_t n_out,
           std::shared_ptr<const BSplineBasis> basis, std::mt19937_64& rng,
           double coef_std = 0.1);

  // (batch, n_in) -> (batch, n_out)
  Tensor forward(const Tensor& h) const;

  std::size_t n_in() const { return n_in_; }
  std::size_t n_out() const { return n_out_; }
  const std::shared_ptr<const BSplineBasis>& basis() const { return basis_; }

  // Copy of edge (out, in) as a standalone activation.
  SplineFunction edge(std::size_t out, std::size_t in) const;
  void set_edge(std::size_t out, std::size_t in,
                const std::vector<double>& coefficients, double wb, double ws);

  Tensor& residual_weights() { return wb_; }
  Tensor& spline_weights() { return ws_; }
  Tensor& coefficients() { return coef_; }
  const Tensor& residual_weights() const { return wb_; }
  const Tensor& spline_weights() const { return ws_; }
  const Tensor& coefficients() const { return coef_; }

  // n_in * n_out * (grid_size + degree + 2)
  std::size_t parameter_count() const;
  void collect_parameters(std::vector<Tensor>& out) const;

 private:
  std::size_t n_in_, n_out_;
  std::shared_ptr<const BSplineBasis> basis_;
  Tensor wb_, ws_, coef_;
};

// Stacked KAN layers mapping covariates to the latent representation.
struct RepresentationNetwork {
  std::vector<KanLayer> layers;
  Tensor forward(const Tensor& x) const;
};

// Per-treatment KAN stack ending in a single output column; consumes the
// shared representation only.
struct TreatmentHead {
  std::vector<KanLayer> layers;
  Tensor forward(const Tensor& z) const;  // (batch, d) -> (batch, 1)
};

struct ModelConfig {
  std::size_t covariate_dim = 0;
  std::size_t n_treatments = 2;
  std::vector<std::size_t> psi_widths = {64, 64, 32};  // hidden...; last = d
  std::vector<std::size_t> head_hidden = {16};         // final width 1 appended
  int grid_size = 5;
  int degree = 3;
  double grid_margin = 0.1;
  double hidden_span = 3.0;  // knot span of non-input layers
  double coef_init_std = 0.1;
};

// Representation network plus K treatment heads.  forward() yields all K
// potential-outcome columns for every sample, observed treatment or not.
class KaniteModel {
 public:
  KaniteModel() = default;
  KaniteModel(RepresentationNetwork psi, std::vector<TreatmentHead> heads,
              ModelConfig config);

  std::size_t n_treatments() const { return heads_.size(); }
  const ModelConfig& config() const { return config_; }
  RepresentationNetwork& psi() { return psi_; }
  const RepresentationNetwork& psi() const { return psi_; }
  std::vector<TreatmentHead>& heads() { return heads_; }
  const std::vector<TreatmentHead>& heads() const { return heads_; }

  Tensor representation(const Tensor& x) const;
  Tensor forward(const Tensor& x) const;  // (batch, K)
  std::pair<Tensor, Tensor> forward_with_representation(const Tensor& x) const;

  // Column a minus column b of forward(); treatment ids are 1-based.
  Tensor predicted_ite(const Tensor& x, std::size_t a, std::size_t b) const;

  std::size_t count_parameters() const;
  std::vector<Tensor> parameters() const;

  std::vector<double> snapshot() const;
  void restore(const std::vector<double>& snapshot);

 private:
  RepresentationNetwork psi_;
  std::vector<TreatmentHead> heads_;
  ModelConfig config_;
};

// Builds the model; the input layer's knot span is fit from the pooled
// training covariate values, deeper layers use [-hidden_span, hidden_span].
KaniteModel build_model(const ModelConfig& config,
                        const std::vector<double>& covariate_samples,
                        std::mt19937_64& rng);

// Flat key -> float-array JSON checkpoint with keys
// psi.layer{l}.phi{q}.{p}.{c|wb|ws} and heads.{t}.layer{m}.phi{q}.{p}.{...},
// plus a "meta" block carrying the architecture. Values round-trip losslessly.
std::string model_to_json(const KaniteModel& model,
                          const std::string& extra_meta_json = "");
KaniteModel model_from_json(const std::string& text);
void save_model(const KaniteModel& model, const std::string& path,
                const std::string& extra_meta_json = "");
KaniteModel load_model(const std::string& path);
std::string model_extra_meta(const std::string& path_or_text, bool is_path);

}  // namespace kanite
