#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "dgl/diagnostics.hpp"
#include "dgl/gnn.hpp"
#include "dgl/program.hpp"
#include "dgl/rng.hpp"

namespace dgl {

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Every learnable quantity: fact logits (probability = logistic(logit)) and
/// per-model layer tensors. Doubles as the gradient container, since
/// gradients have exactly this shape.
struct ParamStore {
  std::map<std::string, double> fact_logits;
  std::map<std::string, ParamTensors> models;

  double fact_prob(const std::string& param_id) const {
    return logistic(fact_logits.at(param_id));
  }

  template <typename Fn>
  void for_each_scalar(Fn&& fn) {
    for (auto& [id, v] : fact_logits) fn(v);
    for (auto& [id, m] : models) m.for_each_scalar(fn);
  }

  template <typename Fn>
  void zip_scalars(ParamStore& other, Fn&& fn) {
    auto jt = other.fact_logits.begin();
    for (auto it = fact_logits.begin(); it != fact_logits.end(); ++it, ++jt)
      fn(it->second, jt->second);
    auto mj = other.models.begin();
    for (auto mi = models.begin(); mi != models.end(); ++mi, ++mj)
      mi->second.zip_scalars(mj->second, fn);
  }

  bool all_finite() {
    bool ok = true;
    for_each_scalar([&](double v) { ok = ok && std::isfinite(v); });
    return ok;
  }
};

/// Fresh store for a validated program: logits from the declared initial
/// probabilities, network weights from the seeded initializer.
inline ParamStore init_param_store(const Program& program, std::uint64_t seed) {
  ParamStore store;
  for (const ProbFact& f : program.prob_facts)
    if (f.learnable) store.fact_logits[f.param_id] = logit(f.prob);
  Rng rng(seed);
  std::uint64_t tag = 0;
  for (const auto& [id, cfg] : program.model_configs) {
    Rng sub = rng.split(tag++);
    store.models.emplace(id, init_params(cfg, sub));
  }
  return store;
}

inline ParamStore zero_like(const Program& program, const ParamStore& store) {
  ParamStore z;
  for (const auto& [id, v] : store.fact_logits) z.fact_logits[id] = 0.0;
  for (const auto& [id, cfg] : program.model_configs) z.models.emplace(id, zero_params(cfg));
  return z;
}

inline nlohmann::ordered_json store_to_json(const ParamStore& store) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json models;
  for (const auto& [id, params] : store.models) models[id] = params_to_json(params);
  j["models"] = std::move(models);
  nlohmann::ordered_json logits;
  for (const auto& [id, v] : store.fact_logits) logits[id] = v;
  j["fact_logits"] = std::move(logits);
  return j;
}

inline ParamStore store_from_json(const nlohmann::ordered_json& j) {
  ParamStore store;
  if (j.contains("models"))
    for (auto it = j.at("models").begin(); it != j.at("models").end(); ++it)
      store.models.emplace(it.key(), params_from_json(it.value()));
  if (j.contains("fact_logits"))
    for (auto it = j.at("fact_logits").begin(); it != j.at("fact_logits").end(); ++it)
      store.fact_logits.emplace(it.key(), it.value().get<double>());
  return store;
}

inline void save_store(const ParamStore& store, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DglError(ErrorKind::Io, "cannot write '" + path + "'");
  out << store_to_json(store).dump(2) << "\n";
}

inline ParamStore load_store(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DglError(ErrorKind::Io, "cannot read '" + path + "'");
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DglError(ErrorKind::Data, "malformed parameter file '" + path + "': " + e.what());
  }
  return store_from_json(j);
}

}  // namespace dgl
