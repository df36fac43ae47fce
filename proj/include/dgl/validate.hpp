#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "dgl/diagnostics.hpp"
#include "dgl/program.hpp"

namespace dgl {

namespace detail {

class ArityCheck {
public:
  void see(const std::string& pred, int arity, int line, int col) {
    auto [it, fresh] = arities_.emplace(pred, arity);
    if (!fresh && it->second != arity)
      throw DglError(ErrorKind::ArityConflict,
                     "predicate '" + pred + "' used with arity " +
                         std::to_string(arity) + " and " + std::to_string(it->second),
                     line, col);
  }
  void see(const Atom& a, int line, int col) { see(a.predicate, a.arity(), line, col); }

private:
  std::map<std::string, int> arities_;
};

inline void reject_compound_args(const Atom& a, int line, int col) {
  for (const Term& t : a.args)
    if (t.kind() == TermKind::Compound)
      throw DglError(ErrorKind::Validation,
                     "function symbols are not supported in '" + a.text() + "'",
                     line, col);
}

// Backward closure over rules: starting from `preds`, add every predicate
// that can appear in a derivation of one of them.
inline std::set<std::string> derivation_closure(
    std::set<std::string> preds, const std::vector<Rule>& rules) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (const Rule& r : rules) {
      if (!preds.count(r.head.pred_key())) continue;
      for (const Atom& b : r.body)
        if (preds.insert(b.pred_key()).second) changed = true;
    }
  }
  return preds;
}

}  // namespace detail

/// Verifies all Program invariants and resolves validation-time fields
/// (param ids, per-model label/relation alphabets, output arities). Returns a
/// checked copy with validated set.
inline Program validate(const Program& input) {
  Program p = input;
  detail::ArityCheck arities;

  for (const ProbFact& f : p.prob_facts) arities.see(f.atom, f.line, f.col);
  for (const Rule& r : p.rules) {
    arities.see(r.head, 0, 0);
    for (const Atom& b : r.body) arities.see(b, 0, 0);
  }
  for (const GnnFactSchema& s : p.gnn_schemas) {
    for (const Atom& h : s.head_group) arities.see(h, s.line, s.col);
    for (const Atom& g : s.guard) arities.see(g, s.line, s.col);
    for (const GammaItem& item : s.gamma) {
      if (item.is_indicator)
        arities.see(item.pred, item.arity, s.line, s.col);
      else
        arities.see(item.atom, s.line, s.col);
    }
  }
  for (const Atom& q : p.queries) arities.see(q, 0, 0);
  for (const Atom& e : p.evidence) arities.see(e, 0, 0);

  // Probabilistic facts: ground atoms, probabilities in range, unique.
  std::set<Atom> declared_prob;
  for (ProbFact& f : p.prob_facts) {
    detail::reject_compound_args(f.atom, f.line, f.col);
    if (!f.atom.is_ground())
      throw DglError(ErrorKind::UnboundVariable,
                     "probabilistic fact '" + f.atom.text() + "' must be ground",
                     f.line, f.col);
    if (f.prob < 0.0 || f.prob > 1.0)
      throw DglError(ErrorKind::Validation,
                     "probability " + std::to_string(f.prob) + " outside [0,1] for '" +
                         f.atom.text() + "'",
                     f.line, f.col);
    if (f.learnable && (f.prob <= 0.0 || f.prob >= 1.0))
      throw DglError(ErrorKind::Validation,
                     "learnable fact '" + f.atom.text() +
                         "' needs an initial probability strictly inside (0,1)",
                     f.line, f.col);
    if (!declared_prob.insert(f.atom).second)
      throw DglError(ErrorKind::Duplicate,
                     "fact '" + f.atom.text() + "' declared twice", f.line, f.col);
    if (f.learnable) f.param_id = f.atom.text();
  }

  for (const Rule& r : p.rules) {
    detail::reject_compound_args(r.head, 0, 0);
    for (const Atom& b : r.body) detail::reject_compound_args(b, 0, 0);
    if (r.is_fact() && declared_prob.count(r.head))
      throw DglError(ErrorKind::Duplicate,
                     "'" + r.head.text() + "' is both a deterministic and a probabilistic fact");
  }

  // Graph-neural schemas.
  std::set<Atom> declared_heads;
  std::set<std::string> arity_fixed;
  for (const GnnFactSchema& s : p.gnn_schemas) {
    auto it = p.model_configs.find(s.model_id);
    if (it == p.model_configs.end())
      throw DglError(ErrorKind::UnknownModel,
                     "no #model declaration for '" + s.model_id + "'", s.line, s.col);
    GnnConfig& cfg = it->second;

    if (s.head_group.empty())
      throw DglError(ErrorKind::Validation, "empty head group", s.line, s.col);
    int arity = static_cast<int>(s.head_group.size());
    if (arity_fixed.insert(s.model_id).second)
      cfg.output_arity = arity;  // first schema for this model fixes the arity
    else if (cfg.output_arity != arity)
      throw DglError(ErrorKind::Validation,
                     "model '" + s.model_id + "' used with head groups of size " +
                         std::to_string(cfg.output_arity) + " and " + std::to_string(arity),
                     s.line, s.col);

    int want_targets = cfg.readout == Readout::Node ? 1 : cfg.readout == Readout::Edge ? 2 : 0;
    if (static_cast<int>(s.targets.size()) != want_targets)
      throw DglError(ErrorKind::Validation,
                     std::string("readout '") + readout_name(cfg.readout) + "' expects " +
                         std::to_string(want_targets) + " target(s), got " +
                         std::to_string(s.targets.size()),
                     s.line, s.col);

    std::set<std::string> binding_vars;  // variables available to heads
    for (const Atom& g : s.guard) {
      detail::reject_compound_args(g, s.line, s.col);
      g.collect_variables(binding_vars);
    }
    for (const GammaItem& item : s.gamma) {
      int item_arity = item.is_indicator ? item.arity : item.atom.arity();
      if (item_arity < 1 || item_arity > 2)
        throw DglError(ErrorKind::Validation,
                       "gamma item '" + item.text() +
                           "' must be unary (vertex label) or binary (edge)",
                       s.line, s.col);
      if (!item.is_indicator) {
        detail::reject_compound_args(item.atom, s.line, s.col);
        item.atom.collect_variables(binding_vars);
      }
    }
    // Target variables outside guard/gamma are legal: they expand over the
    // constants of the grounded gamma. Head variables must come from somewhere.
    std::set<std::string> head_vars;
    for (const Atom& h : s.head_group) {
      detail::reject_compound_args(h, s.line, s.col);
      h.collect_variables(head_vars);
    }
    std::set<std::string> target_vars;
    for (const Term& t : s.targets) {
      if (t.kind() == TermKind::Compound)
        throw DglError(ErrorKind::Validation, "targets must be constants or variables",
                       s.line, s.col);
      t.collect_variables(target_vars);
    }
    for (const std::string& v : head_vars)
      if (!binding_vars.count(v) && !target_vars.count(v))
        throw DglError(ErrorKind::UnboundVariable,
                       "head variable '" + v + "' bound by neither guard, gamma, nor targets",
                       s.line, s.col);

    for (const Atom& h : s.head_group) {
      if (h.is_ground()) {
        if (declared_prob.count(h))
          throw DglError(ErrorKind::Duplicate,
                         "'" + h.text() + "' is both a probabilistic fact and a gnn head",
                         s.line, s.col);
        if (!declared_heads.insert(h).second)
          throw DglError(ErrorKind::Duplicate,
                         "gnn head '" + h.text() + "' declared twice", s.line, s.col);
      }
    }
  }

  // Per-model edge/label alphabets from the owning schemas' gamma specs.
  for (auto& [id, cfg] : p.model_configs) {
    std::set<std::string> rels, labels;
    for (const GnnFactSchema& s : p.gnn_schemas) {
      if (s.model_id != id) continue;
      for (const GammaItem& item : s.gamma) {
        const std::string& pred = item.is_indicator ? item.pred : item.atom.predicate;
        int arity = item.is_indicator ? item.arity : item.atom.arity();
        (arity == 2 ? rels : labels).insert(pred);
      }
    }
    cfg.relations.assign(rels.begin(), rels.end());
    cfg.vertex_labels.assign(labels.begin(), labels.end());
    if (cfg.num_layers < 1 || cfg.hidden_dim < 1)
      throw DglError(ErrorKind::Validation,
                     "model '" + id + "' needs layers >= 1 and hidden >= 1",
                     cfg.line, cfg.col);
  }

  // Predicate-level stratification of the gnn dependency relation. Schema s
  // depends on schema t when some gamma predicate of s is derivable from a
  // head predicate of t; cycles would make the layered semantics circular.
  {
    size_t n = p.gnn_schemas.size();
    std::vector<std::set<std::string>> gamma_closure(n);
    std::vector<std::set<std::string>> head_preds(n);
    for (size_t i = 0; i < n; ++i) {
      std::set<std::string> preds;
      for (const GammaItem& item : p.gnn_schemas[i].gamma)
        preds.insert(item.is_indicator
                         ? item.pred + "/" + std::to_string(item.arity)
                         : item.atom.pred_key());
      gamma_closure[i] = detail::derivation_closure(std::move(preds), p.rules);
      for (const Atom& h : p.gnn_schemas[i].head_group)
        head_preds[i].insert(h.pred_key());
    }
    std::vector<std::vector<size_t>> deps(n);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j)
        for (const std::string& hp : head_preds[j])
          if (gamma_closure[i].count(hp)) {
            deps[i].push_back(j);
            break;
          }
    // Depth-first cycle search with an explicit path for the diagnostic.
    std::vector<int> state(n, 0);
    std::vector<size_t> path;
    auto describe = [&](size_t from) {
      std::string msg = "gnn dependency cycle: ";
      bool in_cycle = false;
      for (size_t k : path) {
        if (k == from) in_cycle = true;
        if (in_cycle) msg += p.gnn_schemas[k].head_group[0].predicate + " -> ";
      }
      msg += p.gnn_schemas[from].head_group[0].predicate;
      return msg;
    };
    auto dfs = [&](auto&& self, size_t i) -> void {
      state[i] = 1;
      path.push_back(i);
      for (size_t j : deps[i]) {
        if (state[j] == 1)
          throw DglError(ErrorKind::StratificationCycle, describe(j),
                         p.gnn_schemas[i].line, p.gnn_schemas[i].col);
        if (state[j] == 0) self(self, j);
      }
      path.pop_back();
      state[i] = 2;
    };
    for (size_t i = 0; i < n; ++i)
      if (state[i] == 0) dfs(dfs, i);
  }

  for (const Atom& q : p.queries)
    if (!q.is_ground())
      throw DglError(ErrorKind::UnboundVariable, "query '" + q.text() + "' must be ground");
  for (const Atom& e : p.evidence)
    if (!e.is_ground())
      throw DglError(ErrorKind::UnboundVariable, "evidence '" + e.text() + "' must be ground");

  p.validated = true;
  return p;
}

}  // namespace dgl
