// Shared test helpers: a brute-force inference oracle independent of the
// engine's enumeration/grounding path, and a random-program generator.
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "dgl/engine.hpp"
#include "dgl/parser.hpp"
#include "dgl/rng.hpp"

namespace test_support {

using namespace dgl;

/// Naive grounder: every substitution of every rule over all constants.
/// Deliberately different from the engine's seeded bottom-up grounding.
inline std::vector<Rule> naive_ground(const std::vector<Rule>& rules,
                                      const std::set<std::string>& constants) {
  std::vector<Rule> out;
  for (const Rule& rule : rules) {
    std::set<std::string> vars;
    rule.head.collect_variables(vars);
    for (const Atom& b : rule.body) b.collect_variables(vars);
    std::vector<std::string> var_list(vars.begin(), vars.end());

    std::vector<Substitution> subs{Substitution{}};
    for (const std::string& v : var_list) {
      std::vector<Substitution> next;
      for (const Substitution& s : subs)
        for (const std::string& c : constants) {
          Substitution e = s;
          e.bind(v, Term::constant(c));
          next.push_back(e);
        }
      subs = std::move(next);
    }
    for (const Substitution& s : subs) {
      Rule g;
      g.head = s.apply(rule.head);
      for (const Atom& b : rule.body) g.body.push_back(s.apply(b));
      out.push_back(std::move(g));
    }
  }
  return out;
}

/// Naive fixpoint: scan all rules until nothing changes.
inline std::set<Atom> naive_model(std::set<Atom> truths, const std::vector<Rule>& ground) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (const Rule& r : ground) {
      bool fire = true;
      for (const Atom& b : r.body) fire = fire && truths.count(b);
      if (fire && truths.insert(r.head).second) changed = true;
    }
  }
  return truths;
}

/// Brute-force marginal: enumerates every assignment over every base fact
/// (probabilistic facts, sigmoid gnn facts, and softmax groups as categorical
/// outcomes), recomputing minimal models from scratch. Only forward() is
/// shared with the engine.
inline double oracle_marginal(const Atom& query, const Program& program,
                              const ParamStore& store) {
  std::set<std::string> constants;
  for (const ProbFact& f : program.prob_facts) f.atom.collect_constants(constants);
  for (const Rule& r : program.rules) {
    r.head.collect_constants(constants);
    for (const Atom& b : r.body) b.collect_constants(constants);
  }
  for (const GnnFactSchema& s : program.gnn_schemas) {
    for (const Atom& h : s.head_group) h.collect_constants(constants);
    for (const GammaItem& item : s.gamma)
      if (!item.is_indicator) item.atom.collect_constants(constants);
  }
  std::vector<Rule> ground = naive_ground(program.rules, constants);

  struct OracleUnit {
    bool is_gnn;
    int index;
    int radix;
  };
  std::vector<OracleUnit> units;
  for (size_t i = 0; i < program.prob_facts.size(); ++i)
    units.push_back({false, static_cast<int>(i), 2});
  for (size_t i = 0; i < program.gnn_schemas.size(); ++i) {
    int k = static_cast<int>(program.gnn_schemas[i].head_group.size());
    units.push_back({true, static_cast<int>(i), k == 1 ? 2 : k});
  }

  std::set<Atom> det;
  for (const Rule& r : program.rules)
    if (r.is_fact() && r.head.is_ground()) det.insert(r.head);

  long long worlds = 1;
  for (const auto& u : units) worlds *= u.radix;

  double total = 0.0;
  for (long long w = 0; w < worlds; ++w) {
    std::set<Atom> truths = det;
    long long rest = w;
    std::vector<int> values(units.size());
    for (size_t k = 0; k < units.size(); ++k) {
      values[k] = static_cast<int>(rest % units[k].radix);
      rest /= units[k].radix;
      const OracleUnit& u = units[k];
      if (!u.is_gnn) {
        if (values[k]) truths.insert(program.prob_facts[u.index].atom);
      } else {
        const GnnFactSchema& s = program.gnn_schemas[u.index];
        if (s.head_group.size() == 1) {
          if (values[k]) truths.insert(s.head_group[0]);
        } else {
          truths.insert(s.head_group[values[k]]);
        }
      }
    }
    std::set<Atom> model = naive_model(truths, ground);

    double weight = 1.0;
    for (size_t k = 0; k < units.size(); ++k) {
      const OracleUnit& u = units[k];
      if (!u.is_gnn) {
        const ProbFact& f = program.prob_facts[u.index];
        double p = f.learnable ? store.fact_prob(f.param_id) : f.prob;
        weight *= values[k] ? p : 1.0 - p;
        continue;
      }
      const GnnFactSchema& s = program.gnn_schemas[u.index];
      // gamma intersection with this world's model, fixed vertex set
      std::set<std::string> nodes;
      std::vector<Atom> present;
      for (const GammaItem& item : s.gamma) {
        item.atom.collect_constants(nodes);
        if (model.count(item.atom)) present.push_back(item.atom);
      }
      std::vector<std::string> targets;
      for (const Term& t : s.targets) {
        targets.push_back(t.symbol());
        nodes.insert(t.symbol());
      }
      LabelledGraph g = LabelledGraph::over({nodes.begin(), nodes.end()});
      for (const Atom& a : present) {
        if (a.arity() == 1)
          g.add_label(a.args[0].symbol(), a.predicate);
        else
          g.add_edge(a.args[0].symbol(), a.predicate, a.args[1].symbol());
      }
      const GnnConfig& cfg = program.model_configs.at(s.model_id);
      auto trace = forward(cfg, store.models.at(s.model_id), g, targets);
      if (s.head_group.size() == 1)
        weight *= values[k] ? trace.output[0] : 1.0 - trace.output[0];
      else
        weight *= trace.output[values[k]];
    }
    if (model.count(query)) total += weight;
  }
  return total;
}

/// Random mixed program: a handful of probabilistic facts, derived rules, and
/// up to two ground gnn facts whose gammas mix base and derived atoms.
struct RandomProgram {
  std::string source;
  std::vector<Atom> derivable;  // candidate queries
};

inline RandomProgram random_program(Rng& rng, bool allow_gnn = true) {
  RandomProgram out;
  std::vector<std::string> consts = {"a", "b", "c", "d"};
  auto c = [&] { return consts[rng.uniform_int(0, 3)]; };

  int n_facts = rng.uniform_int(2, 6);
  std::set<std::string> fact_texts;
  std::vector<Atom> facts;
  for (int i = 0; i < n_facts; ++i) {
    std::string pred = "u" + std::to_string(rng.uniform_int(0, 1));
    Atom a = rng.bernoulli(0.5) ? Atom(pred, {Term::constant(c())})
                                : Atom("w" + std::to_string(rng.uniform_int(0, 1)),
                                       {Term::constant(c()), Term::constant(c())});
    if (!fact_texts.insert(a.text()).second) continue;
    facts.push_back(a);
    double p = 0.05 + 0.9 * rng.uniform();
    out.source += detail::format_double(p) + "::" + a.text() + ".\n";
  }

  int n_rules = rng.uniform_int(1, 4);
  for (int i = 0; i < n_rules; ++i) {
    std::string head_pred = "d" + std::to_string(rng.uniform_int(0, 1));
    std::string var = rng.bernoulli(0.5) ? "X" : "Y";
    Atom head(head_pred, {Term::variable(var)});
    std::vector<Atom> body;
    if (rng.bernoulli(0.5)) {
      body.push_back(Atom("u" + std::to_string(rng.uniform_int(0, 1)), {Term::variable(var)}));
    } else {
      body.push_back(Atom("w" + std::to_string(rng.uniform_int(0, 1)),
                          {Term::variable(var), Term::constant(c())}));
    }
    if (rng.bernoulli(0.4))
      body.push_back(Atom("u" + std::to_string(rng.uniform_int(0, 1)), {Term::variable(var)}));
    Rule r(head, body);
    out.source += r.text() + "\n";
  }

  if (allow_gnn && rng.bernoulli(0.7) && !facts.empty()) {
    int n_gnn = rng.uniform_int(1, 2);
    for (int gi = 0; gi < n_gnn; ++gi) {
      std::string model = "m" + std::to_string(gi);
      bool softmax = rng.bernoulli(0.4);
      out.source += "#model(" + model + ", layers=" + std::to_string(rng.uniform_int(1, 2)) +
                    ", hidden=" + std::to_string(rng.uniform_int(2, 4)) +
                    ", readout=graph).\n";
      std::vector<std::string> gamma;
      int n_gamma = rng.uniform_int(1, std::min<int>(3, facts.size()));
      std::set<std::string> used;
      for (int k = 0; k < n_gamma; ++k) {
        const Atom& pick = facts[rng.uniform_int(0, static_cast<int>(facts.size()) - 1)];
        if (used.insert(pick.text()).second) gamma.push_back(pick.text());
      }
      if (rng.bernoulli(0.3)) {
        std::string derived = "d" + std::to_string(rng.uniform_int(0, 1));
        std::string atom = derived + "(" + c() + ")";
        if (used.insert(atom).second) gamma.push_back(atom);
      }
      if (gi == 1 && rng.bernoulli(0.5)) {
        // layer on the first fact's head: two strata
        std::string atom = "h0(" + std::string("a") + ")";
        if (used.insert(atom).second) gamma.push_back(atom);
      }
      std::string gamma_text;
      for (size_t k = 0; k < gamma.size(); ++k) {
        if (k) gamma_text += ", ";
        gamma_text += gamma[k];
      }
      if (softmax)
        out.source += "gnn(" + model + ", [" + gamma_text + "], []) :: h" + std::to_string(gi) +
                      "(a); h" + std::to_string(gi) + "(b).\n";
      else
        out.source += "gnn(" + model + ", [" + gamma_text + "], []) :: h" + std::to_string(gi) +
                      "(" + c() + ").\n";
    }
    // rule consuming the first gnn head so queries can reach it; the fresh
    // head predicate keeps gammas from depending on their own facts
    out.source += "q0(X) :- h0(X).\n";
  }

  Program parsed = validate(parse(out.source));
  AtomUniverse universe = possible_atom_universe(parsed);
  out.derivable.assign(universe.atoms.begin(), universe.atoms.end());
  return out;
}

}  // namespace test_support
