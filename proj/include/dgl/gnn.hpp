#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgl/diagnostics.hpp"
#include "dgl/graph.hpp"
#include "dgl/program.hpp"
#include "dgl/rng.hpp"

namespace dgl {

struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> a;  // row-major

  Matrix() = default;
  Matrix(int rows, int cols) : rows(rows), cols(cols), a(rows * cols, 0.0) {}

  double& at(int r, int c) { return a[r * cols + c]; }
  double at(int r, int c) const { return a[r * cols + c]; }

  void mul_add(const std::vector<double>& x, double scale, std::vector<double>& out) const {
    for (int r = 0; r < rows; ++r) {
      double acc = 0;
      const double* row = a.data() + r * cols;
      for (int c = 0; c < cols; ++c) acc += row[c] * x[c];
      out[r] += scale * acc;
    }
  }

  void tmul_add(const std::vector<double>& y, double scale, std::vector<double>& out) const {
    for (int r = 0; r < rows; ++r) {
      const double* row = a.data() + r * cols;
      double yr = scale * y[r];
      for (int c = 0; c < cols; ++c) out[c] += row[c] * yr;
    }
  }

  /// grad += scale * y xT  (outer product accumulate)
  void outer_add(const std::vector<double>& y, const std::vector<double>& x, double scale) {
    for (int r = 0; r < rows; ++r) {
      double yr = scale * y[r];
      double* row = a.data() + r * cols;
      for (int c = 0; c < cols; ++c) row[c] += yr * x[c];
    }
  }
};

struct LayerParams {
  Matrix self_weight;
  std::map<std::string, Matrix> relation_weights;
};

struct ParamTensors {
  std::vector<LayerParams> layers;
  Matrix readout_weight;
  std::vector<double> readout_bias;

  template <typename Fn>
  void for_each_scalar(Fn&& fn) {
    for (auto& layer : layers) {
      for (double& v : layer.self_weight.a) fn(v);
      for (auto& [rel, m] : layer.relation_weights)
        for (double& v : m.a) fn(v);
    }
    for (double& v : readout_weight.a) fn(v);
    for (double& v : readout_bias) fn(v);
  }

  template <typename Fn>
  void zip_scalars(ParamTensors& other, Fn&& fn) {
    for (size_t l = 0; l < layers.size(); ++l) {
      auto& mine = layers[l];
      auto& theirs = other.layers[l];
      for (size_t i = 0; i < mine.self_weight.a.size(); ++i)
        fn(mine.self_weight.a[i], theirs.self_weight.a[i]);
      auto jt = theirs.relation_weights.begin();
      for (auto it = mine.relation_weights.begin(); it != mine.relation_weights.end();
           ++it, ++jt)
        for (size_t i = 0; i < it->second.a.size(); ++i)
          fn(it->second.a[i], jt->second.a[i]);
    }
    for (size_t i = 0; i < readout_weight.a.size(); ++i)
      fn(readout_weight.a[i], other.readout_weight.a[i]);
    for (size_t i = 0; i < readout_bias.size(); ++i)
      fn(readout_bias[i], other.readout_bias[i]);
  }
};

inline int feature_dim(const GnnConfig& cfg) {
  return static_cast<int>(cfg.vertex_labels.size()) + 1;  // multi-hot + bias slot
}

inline int readout_dim(const GnnConfig& cfg) {
  return cfg.readout == Readout::Edge ? 2 * cfg.hidden_dim : cfg.hidden_dim;
}

/// Zero-initialized tensors with the shapes the config demands.
inline ParamTensors zero_params(const GnnConfig& cfg) {
  ParamTensors p;
  p.layers.resize(cfg.num_layers);
  for (int l = 0; l < cfg.num_layers; ++l) {
    int in = l == 0 ? feature_dim(cfg) : cfg.hidden_dim;
    p.layers[l].self_weight = Matrix(cfg.hidden_dim, in);
    for (const std::string& rel : cfg.relations)
      p.layers[l].relation_weights.emplace(rel, Matrix(cfg.hidden_dim, in));
  }
  p.readout_weight = Matrix(cfg.output_arity, readout_dim(cfg));
  p.readout_bias.assign(cfg.output_arity, 0.0);
  return p;
}

/// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from a seeded stream.
inline ParamTensors init_params(const GnnConfig& cfg, Rng& rng) {
  ParamTensors p = zero_params(cfg);
  auto fill = [&](Matrix& m) {
    double bound = 1.0 / std::sqrt(static_cast<double>(m.cols));
    for (double& v : m.a) v = rng.uniform(-bound, bound);
  };
  for (auto& layer : p.layers) {
    fill(layer.self_weight);
    for (auto& [rel, m] : layer.relation_weights) fill(m);
  }
  fill(p.readout_weight);
  return p;
}

/// Multi-hot label encoding plus a constant bias slot, so unlabeled vertices
/// still produce a non-zero input.
inline std::vector<std::vector<double>> encode_features(const LabelledGraph& g,
                                                        const GnnConfig& cfg) {
  int dim = feature_dim(cfg);
  std::vector<std::vector<double>> feats(g.vertices.size(), std::vector<double>(dim, 0.0));
  for (size_t v = 0; v < g.vertices.size(); ++v) {
    for (const std::string& label : g.vertex_labels[v]) {
      auto it = std::find(cfg.vertex_labels.begin(), cfg.vertex_labels.end(), label);
      if (it == cfg.vertex_labels.end())
        throw DglError(ErrorKind::Validation,
                       "label '" + label + "' not in the model's vertex label set");
      feats[v][it - cfg.vertex_labels.begin()] = 1.0;
    }
    feats[v][dim - 1] = 1.0;
  }
  return feats;
}

struct ForwardTrace {
  // activations[0] = input features, activations[l] = hidden state after layer l
  std::vector<std::vector<std::vector<double>>> activations;
  std::vector<std::vector<std::vector<double>>> preacts;  // per layer, per vertex
  std::vector<double> readout_input;
  std::vector<double> logits;
  std::vector<double> output;  // sigmoid prob (size 1) or softmax distribution
  std::vector<int> target_indices;
};

namespace detail {

// in-degree of each vertex per relation, floored at 1 for normalization
inline std::map<std::string, std::vector<int>> in_degrees(const LabelledGraph& g) {
  std::map<std::string, std::vector<int>> deg;
  for (const auto& e : g.edges) {
    auto [it, fresh] = deg.emplace(e.label, std::vector<int>(g.vertices.size(), 0));
    (void)fresh;
    it->second[e.dst] += 1;
  }
  return deg;
}

}  // namespace detail

/// Relational graph convolution: L rounds of
///   h_v <- relu(W0 h_v + sum_rel sum_{(u,rel,v)} (1/c) W_rel h_u)
/// with messages flowing source -> target, then a perceptron readout over the
/// target vertex, the concatenated edge pair, or the vertex mean.
inline ForwardTrace forward(const GnnConfig& cfg, const ParamTensors& params,
                            const LabelledGraph& g,
                            const std::vector<std::string>& targets) {
  if (static_cast<int>(params.layers.size()) != cfg.num_layers ||
      params.readout_weight.rows != cfg.output_arity)
    throw DglError(ErrorKind::Validation, "parameter shapes do not match the model config");

  ForwardTrace trace;
  for (const std::string& t : targets) {
    int idx = g.vertex_index(t);
    if (idx < 0)
      throw DglError(ErrorKind::Validation, "target vertex '" + t + "' missing from graph");
    trace.target_indices.push_back(idx);
  }

  size_t n = g.vertices.size();
  trace.activations.push_back(encode_features(g, cfg));
  auto degrees = detail::in_degrees(g);

  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& prev = trace.activations.back();
    const LayerParams& lp = params.layers[l];
    std::vector<std::vector<double>> z(n, std::vector<double>(cfg.hidden_dim, 0.0));
    for (size_t v = 0; v < n; ++v) lp.self_weight.mul_add(prev[v], 1.0, z[v]);
    for (const auto& e : g.edges) {
      auto it = lp.relation_weights.find(e.label);
      if (it == lp.relation_weights.end())
        throw DglError(ErrorKind::Validation, "edge label '" + e.label + "' unknown to model");
      double c = std::max(1, degrees.at(e.label)[e.dst]);
      it->second.mul_add(prev[e.src], 1.0 / c, z[e.dst]);
    }
    std::vector<std::vector<double>> h(n, std::vector<double>(cfg.hidden_dim, 0.0));
    for (size_t v = 0; v < n; ++v)
      for (int i = 0; i < cfg.hidden_dim; ++i) h[v][i] = z[v][i] > 0 ? z[v][i] : 0.0;
    trace.preacts.push_back(std::move(z));
    trace.activations.push_back(std::move(h));
  }

  const auto& last = trace.activations.back();
  std::vector<double> r;
  switch (cfg.readout) {
    case Readout::Node:
      r = last[trace.target_indices[0]];
      break;
    case Readout::Edge:
      r = last[trace.target_indices[0]];
      r.insert(r.end(), last[trace.target_indices[1]].begin(),
               last[trace.target_indices[1]].end());
      break;
    case Readout::Graph: {
      r.assign(cfg.hidden_dim, 0.0);
      for (size_t v = 0; v < n; ++v)
        for (int i = 0; i < cfg.hidden_dim; ++i) r[i] += last[v][i];
      for (double& x : r) x /= static_cast<double>(n);
      break;
    }
  }

  std::vector<double> o(cfg.output_arity, 0.0);
  params.readout_weight.mul_add(r, 1.0, o);
  for (int i = 0; i < cfg.output_arity; ++i) o[i] += params.readout_bias[i];

  std::vector<double> out(cfg.output_arity, 0.0);
  if (cfg.output_arity == 1) {
    out[0] = 1.0 / (1.0 + std::exp(-o[0]));
  } else {
    double mx = o[0];
    for (double v : o) mx = std::max(mx, v);
    double total = 0;
    for (int i = 0; i < cfg.output_arity; ++i) {
      out[i] = std::exp(o[i] - mx);
      total += out[i];
    }
    for (double& v : out) v /= total;
  }
  trace.readout_input = std::move(r);
  trace.logits = std::move(o);
  trace.output = std::move(out);
  return trace;
}

/// Exact gradients of (upstream . output) with respect to every parameter,
/// replayed from the forward trace.
inline ParamTensors backward(const GnnConfig& cfg, const ParamTensors& params,
                             const LabelledGraph& g, const ForwardTrace& trace,
                             const std::vector<double>& upstream) {
  if (trace.activations.size() != static_cast<size_t>(cfg.num_layers) + 1 ||
      static_cast<int>(upstream.size()) != cfg.output_arity ||
      params.readout_weight.rows != cfg.output_arity)
    throw DglError(ErrorKind::Validation, "trace does not match the model config");

  ParamTensors grads = zero_params(cfg);
  size_t n = g.vertices.size();

  std::vector<double> dlogits(cfg.output_arity, 0.0);
  if (cfg.output_arity == 1) {
    double p = trace.output[0];
    dlogits[0] = upstream[0] * p * (1.0 - p);
  } else {
    double dot = 0;
    for (int i = 0; i < cfg.output_arity; ++i) dot += upstream[i] * trace.output[i];
    for (int i = 0; i < cfg.output_arity; ++i)
      dlogits[i] = trace.output[i] * (upstream[i] - dot);
  }

  grads.readout_weight.outer_add(dlogits, trace.readout_input, 1.0);
  for (int i = 0; i < cfg.output_arity; ++i) grads.readout_bias[i] += dlogits[i];

  std::vector<double> dr(readout_dim(cfg), 0.0);
  params.readout_weight.tmul_add(dlogits, 1.0, dr);

  std::vector<std::vector<double>> dh(n, std::vector<double>(cfg.hidden_dim, 0.0));
  switch (cfg.readout) {
    case Readout::Node:
      dh[trace.target_indices[0]] = dr;
      break;
    case Readout::Edge:
      for (int i = 0; i < cfg.hidden_dim; ++i) {
        dh[trace.target_indices[0]][i] += dr[i];
        dh[trace.target_indices[1]][i] += dr[cfg.hidden_dim + i];
      }
      break;
    case Readout::Graph:
      for (size_t v = 0; v < n; ++v)
        for (int i = 0; i < cfg.hidden_dim; ++i)
          dh[v][i] = dr[i] / static_cast<double>(n);
      break;
  }

  auto degrees = detail::in_degrees(g);
  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const auto& prev = trace.activations[l];
    const auto& z = trace.preacts[l];
    const LayerParams& lp = params.layers[l];
    LayerParams& lg = grads.layers[l];

    std::vector<std::vector<double>> dz(n, std::vector<double>(cfg.hidden_dim, 0.0));
    for (size_t v = 0; v < n; ++v)
      for (int i = 0; i < cfg.hidden_dim; ++i) dz[v][i] = z[v][i] > 0 ? dh[v][i] : 0.0;

    std::vector<std::vector<double>> dprev(n, std::vector<double>(prev[0].size(), 0.0));
    for (size_t v = 0; v < n; ++v) {
      lg.self_weight.outer_add(dz[v], prev[v], 1.0);
      lp.self_weight.tmul_add(dz[v], 1.0, dprev[v]);
    }
    for (const auto& e : g.edges) {
      double c = std::max(1, degrees.at(e.label)[e.dst]);
      lg.relation_weights.at(e.label).outer_add(dz[e.dst], prev[e.src], 1.0 / c);
      lp.relation_weights.at(e.label).tmul_add(dz[e.dst], 1.0 / c, dprev[e.src]);
    }
    dh = std::move(dprev);
  }
  return grads;
}

/// Scalar-upstream convenience overload for sigmoid heads.
inline ParamTensors backward(const GnnConfig& cfg, const ParamTensors& params,
                             const LabelledGraph& g, const ForwardTrace& trace,
                             double upstream) {
  return backward(cfg, params, g, trace, std::vector<double>{upstream});
}

// ---- snapshot format ------------------------------------------------------

inline nlohmann::ordered_json matrix_to_json(const Matrix& m) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (int r = 0; r < m.rows; ++r) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (int c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::ordered_json& j) {
  Matrix m(static_cast<int>(j.size()), j.empty() ? 0 : static_cast<int>(j[0].size()));
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) m.at(r, c) = j[r][c].get<double>();
  return m;
}

inline nlohmann::ordered_json params_to_json(const ParamTensors& p) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const auto& layer : p.layers) {
    nlohmann::ordered_json lj;
    lj["self"] = matrix_to_json(layer.self_weight);
    nlohmann::ordered_json rels;
    for (const auto& [name, m] : layer.relation_weights) rels[name] = matrix_to_json(m);
    lj["relations"] = std::move(rels);
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  j["readout"]["weight"] = matrix_to_json(p.readout_weight);
  j["readout"]["bias"] = p.readout_bias;
  return j;
}

inline ParamTensors params_from_json(const nlohmann::ordered_json& j) {
  ParamTensors p;
  for (const auto& lj : j.at("layers")) {
    LayerParams layer;
    layer.self_weight = matrix_from_json(lj.at("self"));
    if (lj.contains("relations"))
      for (auto it = lj.at("relations").begin(); it != lj.at("relations").end(); ++it)
        layer.relation_weights.emplace(it.key(), matrix_from_json(it.value()));
    p.layers.push_back(std::move(layer));
  }
  p.readout_weight = matrix_from_json(j.at("readout").at("weight"));
  p.readout_bias = j.at("readout").at("bias").get<std::vector<double>>();
  return p;
}

}  // namespace dgl
