#include "kanite/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace kanite {

ObservationalDataset ObservationalDataset::subset(
    const std::vector<std::size_t>& rows) const {
  ObservationalDataset out;
  out.n_treatments = n_treatments;
  std::size_t n0 = covariate_dim();
  std::vector<double> xv;
  xv.reserve(rows.size() * n0);
  out.t.reserve(rows.size());
  out.y.reserve(rows.size());
  for (auto r : rows) {
    if (r >= n()) throw DomainError("subset: row index out of range");
    for (std::size_t j = 0; j < n0; ++j) xv.push_back(x.at(r, j));
    out.t.push_back(t[r]);
    out.y.push_back(y[r]);
  }
  out.x = Tensor(Shape{rows.size(), n0}, std::move(xv));
  if (has_ground_truth()) {
    std::size_t k = mu.dim(1);
    std::vector<double> mv;
    mv.reserve(rows.size() * k);
    for (auto r : rows) {
      for (std::size_t j = 0; j < k; ++j) mv.push_back(mu.at(r, j));
    }
    out.mu = Tensor(Shape{rows.size(), k}, std::move(mv));
  }
  return out;
}

void ObservationalDataset::validate() const {
  if (n_treatments < 2) throw DataError("dataset: need at least 2 treatments");
  if (t.size() != y.size() || (x.defined() && x.dim(0) != t.size())) {
    throw DataError("dataset: column lengths disagree");
  }
  std::vector<bool> seen(n_treatments, false);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < 0 || static_cast<std::size_t>(t[i]) >= n_treatments) {
      throw DataError("dataset: treatment id out of range at row " +
                      std::to_string(i));
    }
    seen[static_cast<std::size_t>(t[i])] = true;
  }
  for (std::size_t k = 0; k < n_treatments; ++k) {
    if (!seen[k]) {
      throw DataError("dataset: treatment " + std::to_string(k + 1) +
                      " never appears");
    }
  }
  if (has_ground_truth() &&
      (mu.dim(0) != t.size() || mu.dim(1) != n_treatments)) {
    throw DataError("dataset: ground-truth shape mismatch");
  }
}

namespace {

std::array<std::size_t, 3> largest_remainder_sizes(std::size_t n,
                                                   const double fracs[3]) {
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rema{};
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    double q = n * fracs[s];
    sizes[s] = static_cast<std::size_t>(std::floor(q + 1e-12));
    rema[s] = q - sizes[s];
    assigned += sizes[s];
  }
  while (assigned < n) {
    int best = 0;
    for (int s = 1; s < 3; ++s) {
      if (rema[s] > rema[best] + 1e-12) best = s;
    }
    ++sizes[best];
    rema[best] = -1.0;
    ++assigned;
  }
  return sizes;
}

}  // namespace

SplitResult split(const ObservationalDataset& ds, const SplitSpec& spec) {
  const double fracs[3] = {spec.train, spec.val, spec.test};
  double sum = fracs[0] + fracs[1] + fracs[2];
  if (fracs[0] <= 0.0 || fracs[1] < 0.0 || fracs[2] < 0.0 ||
      std::abs(sum - 1.0) > 1e-9) {
    throw DataError("split: fractions must be non-negative and sum to 1");
  }
  std::size_t n = ds.n();
  std::size_t k = ds.n_treatments;
  SplitResult result;

  auto targets = largest_remainder_sizes(n, fracs);

  std::vector<std::vector<std::size_t>> groups(k);
  for (std::size_t i = 0; i < n; ++i) {
    groups[static_cast<std::size_t>(ds.t[i])].push_back(i);
  }
  std::mt19937_64 rng(spec.seed);
  for (auto& g : groups) std::shuffle(g.begin(), g.end(), rng);

  for (std::size_t t = 0; t < k; ++t) {
    if (groups[t].size() < 3) {
      result.warnings.push_back("treatment " + std::to_string(t + 1) +
                                " has fewer than 3 samples; stratification "
                                "relaxed");
    }
  }

  // Controlled rounding: start from floor quotas, then fill row (group) and
  // column (split) deficits greedily by largest fractional remainder.
  std::vector<std::array<std::size_t, 3>> alloc(k);
  std::vector<std::array<double, 3>> frac(k);
  std::array<std::size_t, 3> col_have{};
  std::vector<std::size_t> row_deficit(k, 0);
  for (std::size_t t = 0; t < k; ++t) {
    std::size_t have = 0;
    for (int s = 0; s < 3; ++s) {
      double q = groups[t].size() * fracs[s];
      alloc[t][s] = static_cast<std::size_t>(std::floor(q + 1e-12));
      frac[t][s] = q - alloc[t][s];
      have += alloc[t][s];
      col_have[s] += alloc[t][s];
    }
    row_deficit[t] = groups[t].size() - have;
  }
  std::array<std::size_t, 3> col_deficit{};
  for (int s = 0; s < 3; ++s) col_deficit[s] = targets[s] - col_have[s];

  std::size_t remaining = 0;
  for (auto r : row_deficit) remaining += r;
  while (remaining > 0) {
    double best = -1.0;
    std::size_t bt = 0;
    int bs = -1;
    for (std::size_t t = 0; t < k; ++t) {
      if (row_deficit[t] == 0) continue;
      for (int s = 0; s < 3; ++s) {
        if (col_deficit[s] == 0) continue;
        if (frac[t][s] > best + 1e-15) {
          best = frac[t][s];
          bt = t;
          bs = s;
        }
      }
    }
    if (bs < 0) throw DataError("split: apportionment failed");
    ++alloc[bt][bs];
    --row_deficit[bt];
    --col_deficit[bs];
    frac[bt][bs] = -1.0;
    --remaining;
  }

  // Keep every treatment in every split when group sizes permit, trading
  // members between groups so the split sizes stay exact.
  for (int s = 0; s < 3; ++s) {
    if (targets[s] == 0) continue;
    for (std::size_t t = 0; t < k; ++t) {
      if (alloc[t][s] > 0 || groups[t].size() < 3) continue;
      bool fixed = false;
      for (int s2 = 0; s2 < 3 && !fixed; ++s2) {
        if (s2 == s || alloc[t][s2] < 2) continue;
        for (std::size_t u = 0; u < k && !fixed; ++u) {
          if (u == t || alloc[u][s] < 2) continue;
          ++alloc[t][s];
          --alloc[t][s2];
          --alloc[u][s];
          ++alloc[u][s2];
          fixed = true;
        }
      }
      if (!fixed) {
        result.warnings.push_back("split " + std::to_string(s) +
                                  " is missing treatment " +
                                  std::to_string(t + 1));
      }
    }
  }

  for (std::size_t t = 0; t < k; ++t) {
    std::size_t off = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < alloc[t][s]; ++j) {
        result.indices[s].push_back(groups[t][off++]);
      }
    }
  }
  for (int s = 0; s < 3; ++s) {
    std::sort(result.indices[s].begin(), result.indices[s].end());
  }
  result.train = ds.subset(result.indices[0]);
  result.val = ds.subset(result.indices[1]);
  result.test = ds.subset(result.indices[2]);
  return result;
}

NormalizationStats fit_normalization(const ObservationalDataset& train,
                                     bool standardize_y) {
  if (train.n() == 0) throw DataError("fit_normalization: empty train split");
  std::size_t n = train.n(), n0 = train.covariate_dim();
  NormalizationStats stats;
  stats.x_mean.assign(n0, 0.0);
  stats.x_std.assign(n0, 1.0);
  for (std::size_t j = 0; j < n0; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += train.x.at(i, j);
    m /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = train.x.at(i, j) - m;
      var += d * d;
    }
    double sd = std::sqrt(var / n);
    if (sd < 1e-12 * (1.0 + std::abs(m))) {
      stats.constant_columns.push_back(j);  // left unscaled
    } else {
      stats.x_mean[j] = m;
      stats.x_std[j] = sd;
    }
  }
  stats.y_standardized = standardize_y;
  if (standardize_y) {
    double m = std::accumulate(train.y.begin(), train.y.end(), 0.0) / n;
    double var = 0.0;
    for (double v : train.y) var += (v - m) * (v - m);
    double sd = std::sqrt(var / n);
    stats.y_mean = m;
    stats.y_std = sd < 1e-12 ? 1.0 : sd;
  }
  return stats;
}

ObservationalDataset apply_normalization(const ObservationalDataset& ds,
                                         const NormalizationStats& stats) {
  if (stats.x_mean.size() != ds.covariate_dim()) {
    throw ShapeError("apply_normalization: dimension mismatch");
  }
  ObservationalDataset out = ds;
  std::vector<double> xv = ds.x.values();
  std::size_t n0 = ds.covariate_dim();
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t j = 0; j < n0; ++j) {
      xv[i * n0 + j] = (xv[i * n0 + j] - stats.x_mean[j]) / stats.x_std[j];
    }
  }
  out.x = Tensor(ds.x.shape(), std::move(xv));
  if (stats.y_standardized) {
    for (auto& v : out.y) v = (v - stats.y_mean) / stats.y_std;
  }
  return out;
}

namespace {

struct SyntheticDraws {
  ObservationalDataset ds;
  std::vector<std::vector<double>> probabilities;
};

SyntheticDraws generate_internal(const GeneratorConfig& cfg) {
  if (cfg.n_treatments < 2) throw DataError("generate_synthetic: need K >= 2");
  if (cfg.n < 10 * cfg.n_treatments) {
    throw DataError("generate_synthetic: need n >= 10*K");
  }
  if (cfg.covariate_dim == 0) throw DataError("generate_synthetic: need n0 >= 1");
  if (cfg.sigma < 0.0) throw DataError("generate_synthetic: sigma < 0");

  std::size_t n = cfg.n, n0 = cfg.covariate_dim, k = cfg.n_treatments;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  auto draw_unit = [&]() {
    std::vector<double> v(n0);
    double norm = 0.0;
    for (auto& e : v) {
      e = gauss(rng);
      norm += e * e;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) norm = 1.0;
    for (auto& e : v) e /= norm;
    return v;
  };

  // 1. assignment directions
  std::vector<std::vector<double>> w(k);
  for (auto& wt : w) {
    wt.resize(n0);
    for (auto& e : wt) e = gauss(rng);
  }
  // 2. outcome surfaces f_t
  std::vector<std::vector<double>> u(k), v(k), r(k);
  std::vector<double> fa(k), fb(k), fc(k), fd(k);
  for (std::size_t t = 0; t < k; ++t) {
    u[t] = draw_unit();
    v[t] = draw_unit();
    r[t] = draw_unit();
    fa[t] = 0.5 + unif(rng);
    fb[t] = 0.2 + 0.4 * unif(rng);
    fc[t] = 0.5 + unif(rng);
    fd[t] = 2.0 * unif(rng) - 1.0;
  }
  // 3. covariates
  std::vector<double> xv(n * n0);
  for (auto& e : xv) e = gauss(rng);

  auto dot_row = [&](const std::vector<double>& a, std::size_t i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n0; ++j) acc += a[j] * xv[i * n0 + j];
    return acc;
  };

  std::vector<std::vector<double>> probs(n, std::vector<double>(k));
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -1e300;
    std::vector<double> logits(k);
    for (std::size_t t = 0; t < k; ++t) {
      logits[t] = cfg.gamma * dot_row(w[t], i);
      mx = std::max(mx, logits[t]);
    }
    double z = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      probs[i][t] = std::exp(logits[t] - mx);
      z += probs[i][t];
    }
    for (std::size_t t = 0; t < k; ++t) probs[i][t] /= z;
  }

  // 4. assignment, resampled while any group comes out empty
  std::vector<int> assign(n);
  bool ok = false;
  for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
    std::vector<bool> seen(k, false);
    for (std::size_t i = 0; i < n; ++i) {
      double udraw = unif(rng);
      double acc = 0.0;
      int chosen = static_cast<int>(k) - 1;
      for (std::size_t t = 0; t < k; ++t) {
        acc += probs[i][t];
        if (udraw <= acc) {
          chosen = static_cast<int>(t);
          break;
        }
      }
      assign[i] = chosen;
      seen[static_cast<std::size_t>(chosen)] = true;
    }
    ok = std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
  }
  if (!ok) {
    throw DataError(
        "generate_synthetic: a treatment group stayed empty after 10 "
        "assignment attempts; increase n or reduce gamma");
  }

  std::vector<double> mv(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      double su = dot_row(u[t], i);
      double sv = dot_row(v[t], i);
      double sr = dot_row(r[t], i);
      mv[i * k + t] = fa[t] * std::sin(su) + fb[t] * sv * sv + fc[t] * sr + fd[t];
    }
  }

  // 5. factual outcomes
  std::vector<double> yv(n);
  for (std::size_t i = 0; i < n; ++i) {
    double noise = cfg.sigma > 0.0 ? cfg.sigma * gauss(rng) : 0.0;
    yv[i] = mv[i * k + static_cast<std::size_t>(assign[i])] + noise;
  }

  SyntheticDraws out;
  out.ds.x = Tensor(Shape{n, n0}, std::move(xv));
  out.ds.t = std::move(assign);
  out.ds.y = std::move(yv);
  out.ds.mu = Tensor(Shape{n, k}, std::move(mv));
  out.ds.n_treatments = k;
  out.ds.validate();
  out.probabilities = std::move(probs);
  return out;
}

}  // namespace

ObservationalDataset generate_synthetic(const GeneratorConfig& config) {
  return generate_internal(config).ds;
}

std::vector<std::vector<double>> synthetic_assignment_probabilities(
    const GeneratorConfig& config) {
  return generate_internal(config).probabilities;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_cell(const std::string& cell, std::size_t row,
                  const std::string& column) {
  try {
    std::size_t pos = 0;
    double v = std::stod(cell, &pos);
    if (pos != cell.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw DataError("csv: non-numeric cell '" + cell + "' at row " +
                    std::to_string(row) + ", column " + column);
  }
}

void append_number(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace

ObservationalDataset dataset_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv: empty file");
  auto header = split_line(line);

  std::size_t n0 = 0;
  while (n0 < header.size() && header[n0] == "x" + std::to_string(n0)) ++n0;
  if (n0 == 0) throw DataError("csv: header must start with x0");
  std::size_t pos = n0;
  if (pos >= header.size() || header[pos] != "t") {
    throw DataError("csv: missing 't' column after covariates");
  }
  ++pos;
  if (pos >= header.size() || header[pos] != "y") {
    throw DataError("csv: missing 'y' column after 't'");
  }
  ++pos;
  std::size_t n_mu = 0;
  while (pos < header.size() && header[pos] == "mu" + std::to_string(n_mu)) {
    ++n_mu;
    ++pos;
  }
  if (pos != header.size()) {
    throw DataError("csv: unexpected column '" + header[pos] + "'");
  }

  std::vector<double> xv, yv, mv;
  std::vector<int> tv;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw DataError("csv: row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    }
    for (std::size_t j = 0; j < n0; ++j) {
      xv.push_back(parse_cell(cells[j], row, header[j]));
    }
    double traw = parse_cell(cells[n0], row, "t");
    if (traw != std::floor(traw) || traw < 1.0) {
      throw DataError("csv: treatment id must be a positive integer at row " +
                      std::to_string(row));
    }
    tv.push_back(static_cast<int>(traw) - 1);
    yv.push_back(parse_cell(cells[n0 + 1], row, "y"));
    for (std::size_t j = 0; j < n_mu; ++j) {
      mv.push_back(parse_cell(cells[n0 + 2 + j], row, header[n0 + 2 + j]));
    }
  }
  if (row == 0) throw DataError("csv: no data rows");

  ObservationalDataset ds;
  std::size_t k = n_mu;
  if (k == 0) {
    int mx = 0;
    for (int t : tv) mx = std::max(mx, t);
    k = static_cast<std::size_t>(mx) + 1;
  }
  for (std::size_t i = 0; i < tv.size(); ++i) {
    if (static_cast<std::size_t>(tv[i]) >= k) {
      throw DataError("csv: treatment id " + std::to_string(tv[i] + 1) +
                      " at row " + std::to_string(i + 1) + " exceeds K=" +
                      std::to_string(k) + " implied by the mu columns");
    }
  }
  ds.x = Tensor(Shape{row, n0}, std::move(xv));
  ds.t = std::move(tv);
  ds.y = std::move(yv);
  if (n_mu > 0) ds.mu = Tensor(Shape{row, n_mu}, std::move(mv));
  ds.n_treatments = k;
  ds.validate();
  return ds;
}

std::string dataset_to_csv(const ObservationalDataset& ds) {
  std::string out;
  std::size_t n0 = ds.covariate_dim();
  for (std::size_t j = 0; j < n0; ++j) {
    out += "x" + std::to_string(j) + ",";
  }
  out += "t,y";
  if (ds.has_ground_truth()) {
    for (std::size_t j = 0; j < ds.n_treatments; ++j) {
      out += ",mu" + std::to_string(j);
    }
  }
  out += "\n";
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t j = 0; j < n0; ++j) {
      append_number(out, ds.x.at(i, j));
      out += ",";
    }
    out += std::to_string(ds.t[i] + 1);
    out += ",";
    append_number(out, ds.y[i]);
    if (ds.has_ground_truth()) {
      for (std::size_t j = 0; j < ds.n_treatments; ++j) {
        out += ",";
        append_number(out, ds.mu.at(i, j));
      }
    }
    out += "\n";
  }
  return out;
}

ObservationalDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_csv: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return dataset_from_csv(buf.str());
}

void save_csv(const ObservationalDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_csv: cannot open " + path);
  out << dataset_to_csv(ds);
}

}  // namespace kanite
