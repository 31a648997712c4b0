#include "kanite/kan.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "kanite/ops.hpp"
#include <json.hpp>

namespace kanite {

KanLayer::KanLayer(std::size_t n_in, std::size_t n_out,
                   std::shared_ptr<const BSplineBasis> basis,
                   std::mt19937_64& rng, double coef_std)
    : n_in_(n_in), n_out_(n_out), basis_(std::move(basis)) {
  if (n_in == 0 || n_out == 0) throw ShapeError("kan layer: zero width");
  std::size_t nb = basis_->size();
  // Outputs sum n_in edge activations; 1/sqrt(n_in) keeps the residual path
  // at unit scale through the stack.
  wb_ = Tensor::full(Shape{n_out, n_in}, 1.0 / std::sqrt(double(n_in)), true);
  ws_ = Tensor::full(Shape{n_out, n_in}, 1.0, true);
  coef_ = Tensor::randn(Shape{n_out, n_in * nb}, rng, coef_std, true);
}

Tensor KanLayer::forward(const Tensor& h) const {
  if (h.ndim() != 2 || h.dim(1) != n_in_) {
    throw ShapeError("layer_forward: expected (batch," + std::to_string(n_in_) +
                     "), got " + shape_str(h.shape()));
  }
  std::size_t nb = basis_->size();
  Tensor base = matmul(silu(h), transpose(wb_));
  Tensor bases = spline_basis(h, basis_);
  Tensor scaled = mul(coef_, repeat_interleave(ws_, nb, 1));
  Tensor spline_out = matmul(bases, transpose(scaled));
  return add(base, spline_out);
}

SplineFunction KanLayer::edge(std::size_t out, std::size_t in) const {
  std::size_t nb = basis_->size();
  std::vector<double> c(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    c[b] = coef_.values()[out * n_in_ * nb + in * nb + b];
  }
  SplineFunction f;
  f.basis = basis_;
  f.coefficients = Tensor(Shape{nb}, std::move(c), true);
  f.residual_weight = Tensor::scalar(wb_.at(out, in), true);
  f.spline_weight = Tensor::scalar(ws_.at(out, in), true);
  return f;
}

void KanLayer::set_edge(std::size_t out, std::size_t in,
                        const std::vector<double>& coefficients, double wb,
                        double ws) {
  std::size_t nb = basis_->size();
  if (coefficients.size() != nb) {
    throw ShapeError("set_edge: expected " + std::to_string(nb) +
                     " coefficients");
  }
  for (std::size_t b = 0; b < nb; ++b) {
    coef_.values()[out * n_in_ * nb + in * nb + b] = coefficients[b];
  }
  wb_.at(out, in) = wb;
  ws_.at(out, in) = ws;
}

std::size_t KanLayer::parameter_count() const {
  return n_in_ * n_out_ * (basis_->size() + 2);
}

void KanLayer::collect_parameters(std::vector<Tensor>& out) const {
  out.push_back(coef_);
  out.push_back(wb_);
  out.push_back(ws_);
}

Tensor RepresentationNetwork::forward(const Tensor& x) const {
  Tensor h = x;
  for (const auto& layer : layers) h = layer.forward(h);
  return h;
}

Tensor TreatmentHead::forward(const Tensor& z) const {
  Tensor h = z;
  for (const auto& layer : layers) h = layer.forward(h);
  return h;
}

KaniteModel::KaniteModel(RepresentationNetwork psi,
                         std::vector<TreatmentHead> heads, ModelConfig config)
    : psi_(std::move(psi)), heads_(std::move(heads)), config_(std::move(config)) {}

Tensor KaniteModel::representation(const Tensor& x) const {
  return psi_.forward(x);
}

Tensor KaniteModel::forward(const Tensor& x) const {
  return forward_with_representation(x).second;
}

std::pair<Tensor, Tensor> KaniteModel::forward_with_representation(
    const Tensor& x) const {
  Tensor rep = psi_.forward(x);
  std::vector<Tensor> cols;
  cols.reserve(heads_.size());
  for (const auto& head : heads_) cols.push_back(head.forward(rep));
  return {rep, concat(cols, 1)};
}

Tensor KaniteModel::predicted_ite(const Tensor& x, std::size_t a,
                                  std::size_t b) const {
  std::size_t k = n_treatments();
  if (a < 1 || a > k || b < 1 || b > k) {
    throw DomainError("predicted_ite: treatment id out of range 1.." +
                      std::to_string(k));
  }
  Tensor preds = forward(x);
  Tensor ca = index_select(preds, 1, {a - 1});
  Tensor cb = index_select(preds, 1, {b - 1});
  return reshape(sub(ca, cb), Shape{preds.dim(0)});
}

std::size_t KaniteModel::count_parameters() const {
  std::size_t total = 0;
  for (const auto& layer : psi_.layers) total += layer.parameter_count();
  for (const auto& head : heads_) {
    for (const auto& layer : head.layers) total += layer.parameter_count();
  }
  return total;
}

std::vector<Tensor> KaniteModel::parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : psi_.layers) layer.collect_parameters(out);
  for (const auto& head : heads_) {
    for (const auto& layer : head.layers) layer.collect_parameters(out);
  }
  return out;
}

std::vector<double> KaniteModel::snapshot() const {
  std::vector<double> out;
  for (const auto& p : parameters()) {
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return out;
}

void KaniteModel::restore(const std::vector<double>& snapshot) {
  std::size_t off = 0;
  for (auto& p : parameters()) {
    if (off + p.numel() > snapshot.size()) {
      throw ShapeError("restore: snapshot too short");
    }
    std::copy(snapshot.begin() + off, snapshot.begin() + off + p.numel(),
              p.values().begin());
    off += p.numel();
  }
  if (off != snapshot.size()) throw ShapeError("restore: snapshot too long");
}

namespace {

std::vector<KanLayer> make_stack(const std::vector<std::size_t>& widths,
                                 const std::vector<std::pair<double, double>>& spans,
                                 int grid_size, int degree, double coef_std,
                                 std::mt19937_64& rng) {
  std::vector<KanLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    auto basis = std::make_shared<const BSplineBasis>(
        degree, grid_size, spans[l].first, spans[l].second);
    layers.emplace_back(widths[l], widths[l + 1], basis, rng, coef_std);
  }
  return layers;
}

}  // namespace

KaniteModel build_model(const ModelConfig& config,
                        const std::vector<double>& covariate_samples,
                        std::mt19937_64& rng) {
  if (config.covariate_dim == 0) throw ShapeError("build_model: covariate_dim is 0");
  if (config.n_treatments < 2) throw DomainError("build_model: need K >= 2");
  if (config.psi_widths.empty()) throw ShapeError("build_model: empty psi widths");

  BSplineBasis input_basis = grid_from_samples(
      covariate_samples, config.grid_size, config.degree, config.grid_margin);

  std::vector<std::size_t> psi_w;
  psi_w.push_back(config.covariate_dim);
  psi_w.insert(psi_w.end(), config.psi_widths.begin(), config.psi_widths.end());

  std::vector<std::pair<double, double>> psi_spans(psi_w.size() - 1,
                                                   {-config.hidden_span,
                                                    config.hidden_span});
  psi_spans[0] = {input_basis.lo(), input_basis.hi()};

  RepresentationNetwork psi{make_stack(psi_w, psi_spans, config.grid_size,
                                       config.degree, config.coef_init_std,
                                       rng)};

  std::size_t d = psi_w.back();
  std::vector<std::size_t> head_w;
  head_w.push_back(d);
  head_w.insert(head_w.end(), config.head_hidden.begin(),
                config.head_hidden.end());
  head_w.push_back(1);
  std::vector<std::pair<double, double>> head_spans(
      head_w.size() - 1, {-config.hidden_span, config.hidden_span});

  std::vector<TreatmentHead> heads;
  for (std::size_t t = 0; t < config.n_treatments; ++t) {
    heads.push_back(TreatmentHead{make_stack(head_w, head_spans,
                                             config.grid_size, config.degree,
                                             config.coef_init_std, rng)});
  }
  return KaniteModel(std::move(psi), std::move(heads), config);
}

namespace {

using nlohmann::json;

void dump_stack(json& doc, const std::string& prefix,
                const std::vector<KanLayer>& layers) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    for (std::size_t q = 0; q < layer.n_out(); ++q) {
      for (std::size_t p = 0; p < layer.n_in(); ++p) {
        SplineFunction f = layer.edge(q, p);
        std::string key = prefix + ".layer" + std::to_string(l) + ".phi" +
                          std::to_string(q) + "." + std::to_string(p);
        doc[key + ".c"] = f.coefficients.values();
        doc[key + ".wb"] = std::vector<double>{f.residual_weight.item()};
        doc[key + ".ws"] = std::vector<double>{f.spline_weight.item()};
      }
    }
  }
}

void load_stack(const json& doc, const std::string& prefix,
                std::vector<KanLayer>& layers) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& layer = layers[l];
    for (std::size_t q = 0; q < layer.n_out(); ++q) {
      for (std::size_t p = 0; p < layer.n_in(); ++p) {
        std::string key = prefix + ".layer" + std::to_string(l) + ".phi" +
                          std::to_string(q) + "." + std::to_string(p);
        auto c = doc.at(key + ".c").get<std::vector<double>>();
        double wb = doc.at(key + ".wb").get<std::vector<double>>().at(0);
        double ws = doc.at(key + ".ws").get<std::vector<double>>().at(0);
        layer.set_edge(q, p, c, wb, ws);
      }
    }
  }
}

json spans_of(const std::vector<KanLayer>& layers) {
  json out = json::array();
  for (const auto& layer : layers) {
    out.push_back({layer.basis()->lo(), layer.basis()->hi()});
  }
  return out;
}

}  // namespace

std::string model_to_json(const KaniteModel& model,
                          const std::string& extra_meta_json) {
  json doc;
  const auto& cfg = model.config();
  json meta;
  meta["format"] = "kanite-model";
  meta["k"] = model.n_treatments();
  meta["grid_size"] = cfg.grid_size;
  meta["degree"] = cfg.degree;
  meta["covariate_dim"] = cfg.covariate_dim;
  meta["psi_widths"] = cfg.psi_widths;
  meta["head_hidden"] = cfg.head_hidden;
  meta["psi_grids"] = spans_of(model.psi().layers);
  meta["head_grids"] = spans_of(model.heads().at(0).layers);
  if (!extra_meta_json.empty()) meta["extra"] = json::parse(extra_meta_json);
  doc["meta"] = meta;
  dump_stack(doc, "psi", model.psi().layers);
  for (std::size_t t = 0; t < model.n_treatments(); ++t) {
    dump_stack(doc, "heads." + std::to_string(t), model.heads()[t].layers);
  }
  return doc.dump();
}

KaniteModel model_from_json(const std::string& text) {
  json doc = json::parse(text);
  const json& meta = doc.at("meta");
  ModelConfig cfg;
  cfg.n_treatments = meta.at("k").get<std::size_t>();
  cfg.grid_size = meta.at("grid_size").get<int>();
  cfg.degree = meta.at("degree").get<int>();
  cfg.covariate_dim = meta.at("covariate_dim").get<std::size_t>();
  cfg.psi_widths = meta.at("psi_widths").get<std::vector<std::size_t>>();
  cfg.head_hidden = meta.at("head_hidden").get<std::vector<std::size_t>>();

  auto psi_grids = meta.at("psi_grids").get<std::vector<std::vector<double>>>();
  auto head_grids =
      meta.at("head_grids").get<std::vector<std::vector<double>>>();

  std::mt19937_64 rng(0);  // placeholder init, overwritten below

  std::vector<std::size_t> psi_w;
  psi_w.push_back(cfg.covariate_dim);
  psi_w.insert(psi_w.end(), cfg.psi_widths.begin(), cfg.psi_widths.end());
  std::vector<std::pair<double, double>> psi_spans;
  for (const auto& g : psi_grids) psi_spans.push_back({g.at(0), g.at(1)});
  RepresentationNetwork psi{make_stack(psi_w, psi_spans, cfg.grid_size,
                                       cfg.degree, 0.0, rng)};

  std::size_t d = psi_w.back();
  std::vector<std::size_t> head_w;
  head_w.push_back(d);
  head_w.insert(head_w.end(), cfg.head_hidden.begin(), cfg.head_hidden.end());
  head_w.push_back(1);
  std::vector<std::pair<double, double>> head_spans;
  for (const auto& g : head_grids) head_spans.push_back({g.at(0), g.at(1)});

  std::vector<TreatmentHead> heads;
  for (std::size_t t = 0; t < cfg.n_treatments; ++t) {
    heads.push_back(TreatmentHead{make_stack(head_w, head_spans, cfg.grid_size,
                                             cfg.degree, 0.0, rng)});
  }
  KaniteModel model(std::move(psi), std::move(heads), cfg);
  load_stack(doc, "psi", model.psi().layers);
  for (std::size_t t = 0; t < cfg.n_treatments; ++t) {
    load_stack(doc, "heads." + std::to_string(t), model.heads()[t].layers);
  }
  return model;
}

void save_model(const KaniteModel& model, const std::string& path,
                const std::string& extra_meta_json) {
  std::ofstream out(path);
  if (!out) throw DataError("save_model: cannot open " + path);
  out << model_to_json(model, extra_meta_json);
}

KaniteModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_model: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

std::string model_extra_meta(const std::string& path_or_text, bool is_path) {
  std::string text = path_or_text;
  if (is_path) {
    std::ifstream in(path_or_text);
    if (!in) throw DataError("model_extra_meta: cannot open " + path_or_text);
    std::ostringstream buf;
    buf << in.rdbuf();
    text = buf.str();
  }
  json doc = json::parse(text);
  if (doc.at("meta").contains("extra")) return doc["meta"]["extra"].dump();
  return "{}";
}

}  // namespace kanite
