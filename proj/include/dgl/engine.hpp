#pragma once

#include <atomic>
#include <deque>
#include <cstdlib>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dgl/diagnostics.hpp"
#include "dgl/gnn.hpp"
#include "dgl/graph.hpp"
#include "dgl/logic.hpp"
#include "dgl/params.hpp"
#include "dgl/program.hpp"
#include "dgl/validate.hpp"

namespace dgl {

/// A grounded graph-neural fact: the schema instantiated against the
/// possible-atom universe, with a fixed vertex set.
struct GroundGnnFact {
  std::string model_id;
  std::vector<Atom> gamma;             // sorted, deduplicated ground atoms
  std::vector<std::string> node_set;   // sorted constants of gamma plus targets
  std::vector<std::string> targets;
  std::vector<Atom> head_group;
  int schema_index = -1;

  std::string content_key() const {
    std::string key = model_id + "|";
    for (const Atom& a : gamma) key += a.text() + ",";
    key += "|";
    for (const std::string& t : targets) key += t + ",";
    key += "|";
    for (const Atom& h : head_group) key += h.text() + ",";
    return key;
  }
};

struct InferenceResult {
  double probability = 0.0;
  long long worlds_enumerated = 0;
  long long distinct_gnn_evaluations = 0;
  int relevant_fact_count = 0;
};

inline nlohmann::ordered_json result_to_json(const std::string& query,
                                             const InferenceResult& r) {
  nlohmann::ordered_json j;
  j["query"] = query;
  j["probability"] = r.probability;
  j["worlds_enumerated"] = r.worlds_enumerated;
  j["distinct_gnn_evaluations"] = r.distinct_gnn_evaluations;
  j["relevant_fact_count"] = r.relevant_fact_count;
  return j;
}

struct EngineOptions {
  int cap = 24;             // refuse enumeration beyond this many relevant facts
  bool use_cache = true;    // gnn evaluation memo; never changes probabilities
  int threads = 0;          // 0 = DGL_THREADS (0/unset = hardware)
  long long materialize_limit = 1LL << 16;
};

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  const char* env = std::getenv("DGL_THREADS");
  if (!env) return hw;
  int n = std::atoi(env);
  return n > 0 ? n : hw;
}

// ---------------------------------------------------------------------------
// Universe and schema grounding
// ---------------------------------------------------------------------------

/// Expands every schema against the universe: guards are solved, predicate
/// indicators and non-ground gamma atoms are matched against universe atoms,
/// and unbound target variables range over the grounded gamma's constants.
inline std::vector<GroundGnnFact> ground_gnn_schemas(const Program& p,
                                                     const AtomUniverse& universe) {
  std::map<std::string, std::vector<const Atom*>> by_pred;
  for (const Atom& a : universe.atoms) by_pred[a.pred_key()].push_back(&a);

  std::vector<GroundGnnFact> facts;
  std::set<std::string> seen;
  std::map<Atom, std::string> head_owner;

  detail::BodyMatcher matcher(universe.atoms);
  for (size_t si = 0; si < p.gnn_schemas.size(); ++si) {
    const GnnFactSchema& schema = p.gnn_schemas[si];
    matcher.for_each_solution(schema.guard, [&](const Substitution& guard_subst) {
      std::set<Atom> gamma;
      for (const GammaItem& item : schema.gamma) {
        if (item.is_indicator) {
          auto it = by_pred.find(item.pred + "/" + std::to_string(item.arity));
          if (it != by_pred.end())
            for (const Atom* a : it->second) gamma.insert(*a);
          continue;
        }
        Atom pattern = guard_subst.apply(item.atom);
        if (pattern.is_ground()) {
          gamma.insert(pattern);  // listed literally, kept even outside the universe
          continue;
        }
        auto it = by_pred.find(pattern.pred_key());
        if (it == by_pred.end()) continue;
        for (const Atom* a : it->second)
          if (unify(pattern, *a)) gamma.insert(*a);
      }

      std::set<std::string> gamma_constants;
      for (const Atom& a : gamma) a.collect_constants(gamma_constants);

      // Unbound target variables default to the grounded gamma's constants.
      std::vector<Substitution> bindings{guard_subst};
      for (const Term& t : schema.targets) {
        if (t.kind() != TermKind::Variable) continue;
        std::vector<Substitution> next;
        for (const Substitution& b : bindings) {
          if (b.apply(t).kind() != TermKind::Variable) {
            next.push_back(b);
            continue;
          }
          for (const std::string& c : gamma_constants) {
            Substitution extended = b;
            extended.bind(t.symbol(), Term::constant(c));
            next.push_back(std::move(extended));
          }
        }
        bindings = std::move(next);
      }

      for (const Substitution& binding : bindings) {
        GroundGnnFact fact;
        fact.model_id = schema.model_id;
        fact.schema_index = static_cast<int>(si);
        fact.gamma.assign(gamma.begin(), gamma.end());
        std::set<std::string> nodes = gamma_constants;
        for (const Term& t : schema.targets) {
          Term bound = binding.apply(t);
          if (!bound.is_ground())
            throw DglError(ErrorKind::UnboundVariable,
                           "target '" + t.text() + "' unbound after grounding",
                           schema.line, schema.col);
          fact.targets.push_back(bound.symbol());
          nodes.insert(bound.symbol());
        }
        fact.node_set.assign(nodes.begin(), nodes.end());
        for (const Atom& h : schema.head_group) {
          Atom head = binding.apply(h);
          if (!head.is_ground())
            throw DglError(ErrorKind::UnboundVariable,
                           "head '" + h.text() + "' unbound after grounding",
                           schema.line, schema.col);
          if (gamma.count(head))
            throw DglError(ErrorKind::Validation,
                           "head '" + head.text() + "' occurs in its own gamma",
                           schema.line, schema.col);
          fact.head_group.push_back(std::move(head));
        }

        std::string key = fact.content_key();
        if (!seen.insert(key).second) continue;
        for (const Atom& h : fact.head_group) {
          auto [it, fresh] = head_owner.emplace(h, key);
          if (!fresh && it->second != key)
            throw DglError(ErrorKind::Duplicate,
                           "gnn head '" + h.text() + "' claimed by two ground facts",
                           schema.line, schema.col);
        }
        facts.push_back(std::move(fact));
      }
    });
  }
  return facts;
}

/// Minimal model with every base fact assumed true. Schema heads join the
/// universe, which can enable further guards, so the two grounding steps
/// iterate to a fixpoint (stratification bounds the iteration count).
inline AtomUniverse possible_atom_universe(const Program& p) {
  if (!p.validated)
    throw DglError(ErrorKind::Validation, "program must be validated first");
  AtomUniverse universe;
  for (const ProbFact& f : p.prob_facts) universe.insert(f.atom);
  for (const Rule& r : p.rules)
    if (r.is_fact() && r.head.is_ground()) universe.insert(r.head);

  while (true) {
    std::vector<Rule> grules = ground_program(p.rules, universe);
    std::set<Atom> model = minimal_model(universe.atoms, grules);
    AtomUniverse next;
    for (const Atom& a : model) next.insert(a);
    for (const GroundGnnFact& f : ground_gnn_schemas(p, next))
      for (const Atom& h : f.head_group) next.insert(h);
    if (next.size() == universe.size()) return next;
    universe = std::move(next);
  }
}

/// Intersection gamma ∩ model over the fact's fixed vertex set: binary atoms
/// true in the model become directed labelled edges, unary ones vertex labels.
inline LabelledGraph induced_graph(const GroundGnnFact& fact,
                                   const std::set<Atom>& model_of_world) {
  LabelledGraph g = LabelledGraph::over(fact.node_set);
  for (const Atom& a : fact.gamma) {
    if (!model_of_world.count(a)) continue;
    if (a.arity() == 1)
      g.add_label(a.args[0].symbol(), a.predicate);
    else if (a.arity() == 2)
      g.add_edge(a.args[0].symbol(), a.predicate, a.args[1].symbol());
    else
      throw DglError(ErrorKind::Validation,
                     "gamma atom '" + a.text() + "' is neither unary nor binary");
  }
  return g;
}

// ---------------------------------------------------------------------------
// Grounding: interned rules, base-fact units, stratification
// ---------------------------------------------------------------------------

class Grounding {
public:
  struct IRule {
    int head;
    std::vector<int> body;
  };

  /// One enumeration variable: a Bernoulli probabilistic fact, a Bernoulli
  /// sigmoid gnn fact, or a categorical softmax head group.
  struct Unit {
    bool is_gnn = false;
    int source_index = -1;  // index into prob_facts or gnn_facts
    int radix = 2;          // 2 for Bernoulli, k for a k-way softmax group
    int fact_count = 1;     // base facts this unit contributes to the cap
    std::vector<int> head_ids;
    std::vector<int> gamma_ids;  // gnn only
  };

  Program program;
  AtomUniverse universe;
  std::vector<GroundGnnFact> gnn_facts;
  std::vector<int> strat_order;  // gnn fact indices, dependencies first

  std::vector<Atom> atom_list;
  std::map<Atom, int> atom_ids;
  std::vector<IRule> irules;
  std::vector<std::vector<int>> watchers;       // atom -> rules watching it
  std::vector<std::vector<int>> rules_by_head;  // atom -> rules deriving it
  std::vector<Unit> units;                      // prob facts, then gnn (strat order)
  std::vector<int> unit_of_atom;                // atom -> owning unit or -1

  explicit Grounding(const Program& validated) : program(validated) {
    if (!program.validated)
      throw DglError(ErrorKind::Validation, "program must be validated first");
    universe = possible_atom_universe(program);
    gnn_facts = ground_gnn_schemas(program, universe);

    for (const Atom& a : universe.atoms) intern(a);
    std::vector<Rule> grules = ground_program(program.rules, universe);
    for (const Rule& r : grules) {
      IRule ir;
      ir.head = intern(r.head);
      for (const Atom& b : r.body) ir.body.push_back(intern(b));
      irules.push_back(std::move(ir));
    }
    for (const GroundGnnFact& f : gnn_facts) {
      for (const Atom& h : f.head_group) intern(h);
      for (const Atom& a : f.gamma) intern(a);
    }

    watchers.assign(atom_list.size(), {});
    rules_by_head.assign(atom_list.size(), {});
    for (size_t i = 0; i < irules.size(); ++i) {
      for (int b : irules[i].body) watchers[b].push_back(static_cast<int>(i));
      rules_by_head[irules[i].head].push_back(static_cast<int>(i));
    }

    compute_stratification();
    build_units();
  }

  int intern(const Atom& a) {
    auto [it, fresh] = atom_ids.emplace(a, static_cast<int>(atom_list.size()));
    if (fresh) atom_list.push_back(a);
    return it->second;
  }

  int find(const Atom& a) const {
    auto it = atom_ids.find(a);
    return it == atom_ids.end() ? -1 : it->second;
  }

  /// Backward reachability from `seeds` through the ground rules; every rule
  /// here is viable (its body lies in the all-true closure by construction).
  /// Marks atoms and collects visited rule indices.
  void backward_reach(const std::vector<int>& seeds, std::vector<char>& atom_mark,
                      std::vector<char>& rule_mark) const {
    std::vector<int> stack;
    for (int s : seeds)
      if (s >= 0 && !atom_mark[s]) {
        atom_mark[s] = 1;
        stack.push_back(s);
      }
    while (!stack.empty()) {
      int a = stack.back();
      stack.pop_back();
      for (int ri : rules_by_head[a]) {
        if (rule_mark[ri]) continue;
        rule_mark[ri] = 1;
        for (int b : irules[ri].body)
          if (!atom_mark[b]) {
            atom_mark[b] = 1;
            stack.push_back(b);
          }
      }
    }
  }

private:
  void compute_stratification() {
    size_t n = gnn_facts.size();
    // Mark base atoms per owning fact so reachability can report dependencies.
    std::map<int, int> owner;  // atom id -> gnn fact index
    for (size_t i = 0; i < n; ++i)
      for (const Atom& h : gnn_facts[i].head_group) owner[intern(h)] = static_cast<int>(i);

    std::vector<std::set<int>> deps(n);
    for (size_t i = 0; i < n; ++i) {
      std::vector<char> atom_mark(atom_list.size(), 0);
      std::vector<char> rule_mark(irules.size(), 0);
      std::vector<int> seeds;
      for (const Atom& a : gnn_facts[i].gamma) seeds.push_back(find(a));
      backward_reach(seeds, atom_mark, rule_mark);
      for (const auto& [atom, fact] : owner)
        if (atom_mark[atom] && fact != static_cast<int>(i)) deps[i].insert(fact);
        else if (atom_mark[atom] && fact == static_cast<int>(i))
          throw DglError(ErrorKind::StratificationCycle,
                         "gnn fact '" + gnn_facts[i].head_group[0].text() +
                             "' depends on its own head");
    }

    std::vector<int> indegree(n, 0);
    std::vector<std::vector<int>> fwd(n);
    for (size_t i = 0; i < n; ++i)
      for (int j : deps[i]) {
        fwd[j].push_back(static_cast<int>(i));
        ++indegree[i];
      }
    std::set<int> ready;
    for (size_t i = 0; i < n; ++i)
      if (indegree[i] == 0) ready.insert(static_cast<int>(i));
    while (!ready.empty()) {
      int i = *ready.begin();
      ready.erase(ready.begin());
      strat_order.push_back(i);
      for (int j : fwd[i])
        if (--indegree[j] == 0) ready.insert(j);
    }
    if (strat_order.size() != n) {
      std::string cycle = "gnn dependency cycle among:";
      for (size_t i = 0; i < n; ++i)
        if (indegree[i] > 0) cycle += " " + gnn_facts[i].head_group[0].text();
      throw DglError(ErrorKind::StratificationCycle, cycle);
    }
  }

  void build_units() {
    unit_of_atom.assign(atom_list.size(), -1);
    for (size_t i = 0; i < program.prob_facts.size(); ++i) {
      Unit u;
      u.is_gnn = false;
      u.source_index = static_cast<int>(i);
      u.radix = 2;
      u.fact_count = 1;
      int id = intern(program.prob_facts[i].atom);
      u.head_ids.push_back(id);
      if (unit_of_atom.size() < atom_list.size()) unit_of_atom.resize(atom_list.size(), -1);
      unit_of_atom[id] = static_cast<int>(units.size());
      units.push_back(std::move(u));
    }
    for (int fi : strat_order) {
      const GroundGnnFact& f = gnn_facts[fi];
      Unit u;
      u.is_gnn = true;
      u.source_index = fi;
      int k = static_cast<int>(f.head_group.size());
      u.radix = k == 1 ? 2 : k;
      u.fact_count = k;
      for (const Atom& h : f.head_group) {
        int id = intern(h);
        u.head_ids.push_back(id);
        if (unit_of_atom.size() < atom_list.size()) unit_of_atom.resize(atom_list.size(), -1);
        unit_of_atom[id] = static_cast<int>(units.size());
      }
      for (const Atom& a : f.gamma) u.gamma_ids.push_back(intern(a));
      if (unit_of_atom.size() < atom_list.size()) unit_of_atom.resize(atom_list.size(), -1);
      units.push_back(std::move(u));
    }
  }
};

/// Topological evaluation order over ground gnn facts under the relation
/// "f depends on g when some gamma atom of f is derivable from a head of g".
inline std::vector<int> stratify(const std::vector<GroundGnnFact>& facts,
                                 const Program& validated) {
  Grounding g(validated);
  // Map the caller's facts onto the grounding's by content.
  std::map<std::string, int> position;
  for (size_t i = 0; i < facts.size(); ++i) position[facts[i].content_key()] = static_cast<int>(i);
  std::vector<int> order;
  for (int gi : g.strat_order) {
    auto it = position.find(g.gnn_facts[gi].content_key());
    if (it != position.end()) order.push_back(it->second);
  }
  if (order.size() != facts.size())
    throw DglError(ErrorKind::Validation, "facts do not match the program's grounding");
  return order;
}

// ---------------------------------------------------------------------------
// World enumeration
// ---------------------------------------------------------------------------

/// Memo table for gnn evaluations, keyed by (model, canonical graph, targets).
/// Presence or absence never changes probabilities, only evaluation counts.
class EvalCache {
public:
  explicit EvalCache(bool enabled = true) : enabled_(enabled) {}

  bool enabled() const { return enabled_; }

  struct Entry {
    std::vector<double> probs;
    ForwardTrace trace;      // retained only when built with gradients
    LabelledGraph graph;     // retained only for streamed gradient sweeps
    bool has_trace = false;
  };

  template <typename ComputeFn>
  const Entry& lookup(const std::string& key, ComputeFn&& compute) {
    if (enabled_) {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = entries_.find(key);
      if (it != entries_.end()) return it->second;
      Entry e = compute();
      ++misses_;
      return entries_.emplace(key, std::move(e)).first->second;
    }
    std::lock_guard<std::mutex> lock(mutex_);
    ++misses_;
    scratch_.push_back(compute());
    return scratch_.back();
  }

  long long misses() const { return misses_; }
  void reset_miss_count() { misses_ = 0; }

private:
  bool enabled_;
  std::mutex mutex_;
  std::map<std::string, Entry> entries_;
  std::deque<Entry> scratch_;
  std::atomic<long long> misses_{0};
};

struct QueryPlan {
  std::vector<int> unit_idx;       // grounding unit indices, enumeration order
  std::vector<long long> strides;  // mixed-radix decode strides
  long long worlds = 1;
  int fact_count = 0;
  std::vector<int> target_atoms;   // first entry: query; rest: evidence atoms
  std::vector<int> sliced_rules;

  struct GnnSlot {
    int plan_pos;  // position within unit_idx
    int unit;      // grounding unit index
    std::vector<LabelledGraph> graphs;
    std::vector<std::string> keys;
    std::map<std::vector<char>, int> graph_of_truth;
  };
  std::vector<GnnSlot> gnn_slots;

  bool materialized = false;
  std::vector<unsigned char> world_truth;        // bit i = target_atoms[i] true
  std::vector<std::vector<int>> world_graph;     // [slot][world]
};

/// Gradient payload of one evaluated plan: dP/dp per Bernoulli unit and
/// upstream output gradients per gnn slot and distinct graph.
struct Evaluation {
  double p_query = 0.0;
  double p_evidence = 0.0;  // joint of evidence atoms; sums to 1 when unconditioned
  long long worlds = 0;
  long long distinct_evals = 0;
  int relevant_fact_count = 0;
  bool with_grad = false;
  std::vector<double> dp_unit;                                // per plan position
  std::vector<std::vector<std::vector<double>>> gnn_upstream; // [slot][graph][out]
};

class Engine {
public:
  explicit Engine(const Program& validated, EngineOptions opts = {})
      : opts_(opts), grounding_(validated) {}

  const Grounding& grounding() const { return grounding_; }
  const EngineOptions& options() const { return opts_; }

  /// Cached per query+evidence set; plans are parameter-independent.
  QueryPlan& plan_for(const Atom& query, const std::vector<Atom>& evidence = {}) {
    std::string key = query.text();
    for (const Atom& e : evidence) key += "|" + e.text();
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    return plans_.emplace(key, build_plan(query, evidence)).first->second;
  }

  InferenceResult marginal(const Atom& query, const ParamStore& store) {
    QueryPlan& plan = plan_for(query);
    EvalCache cache(opts_.use_cache);
    Evaluation eval = evaluate(plan, store, /*with_grad=*/false, cache);
    InferenceResult r;
    r.probability = eval.p_query;
    r.worlds_enumerated = eval.worlds;
    r.distinct_gnn_evaluations = eval.distinct_evals;
    r.relevant_fact_count = eval.relevant_fact_count;
    return r;
  }

  InferenceResult conditional(const Atom& query, const std::vector<Atom>& evidence,
                              const ParamStore& store) {
    QueryPlan& plan = plan_for(query, evidence);
    EvalCache cache(opts_.use_cache);
    Evaluation eval = evaluate(plan, store, /*with_grad=*/false, cache);
    if (eval.p_evidence <= 0.0)
      throw DglError(ErrorKind::UndefinedConditional,
                     "evidence has probability zero; conditional undefined");
    InferenceResult r;
    r.probability = eval.p_query / eval.p_evidence;
    r.worlds_enumerated = eval.worlds;
    r.distinct_gnn_evaluations = eval.distinct_evals;
    r.relevant_fact_count = eval.relevant_fact_count;
    return r;
  }

  InferenceResult conditional(const Atom& query, const Atom& evidence,
                              const ParamStore& store) {
    return conditional(query, std::vector<Atom>{evidence}, store);
  }

  QueryPlan build_plan(const Atom& query, const std::vector<Atom>& evidence) {
    QueryPlan plan;
    plan.target_atoms.push_back(grounding_.intern(query));
    for (const Atom& e : evidence) plan.target_atoms.push_back(grounding_.intern(e));
    if (plan.target_atoms.size() > 8)
      throw DglError(ErrorKind::Validation, "too many evidence atoms");
    refresh_sizes();

    // Relevant closure: base facts in proofs of the targets, closed under the
    // gamma dependencies of every relevant gnn fact. Without the closure the
    // summed-out facts would not telescope to one.
    std::vector<char> atom_mark(grounding_.atom_list.size(), 0);
    std::vector<char> rule_mark(grounding_.irules.size(), 0);
    std::vector<char> unit_mark(grounding_.units.size(), 0);
    std::vector<int> unit_queue;

    auto absorb = [&](const std::vector<int>& seeds) {
      grounding_.backward_reach(seeds, atom_mark, rule_mark);
      for (size_t a = 0; a < atom_mark.size(); ++a) {
        if (!atom_mark[a]) continue;
        int u = grounding_.unit_of_atom[a];
        if (u >= 0 && !unit_mark[u]) {
          unit_mark[u] = 1;
          unit_queue.push_back(u);
        }
      }
    };

    absorb(plan.target_atoms);
    for (size_t qi = 0; qi < unit_queue.size(); ++qi) {
      const Grounding::Unit& u = grounding_.units[unit_queue[qi]];
      if (u.is_gnn) absorb(u.gamma_ids);
    }

    for (size_t ui = 0; ui < grounding_.units.size(); ++ui) {
      if (!unit_mark[ui]) continue;
      plan.unit_idx.push_back(static_cast<int>(ui));
      plan.fact_count += grounding_.units[ui].fact_count;
    }
    if (plan.fact_count > opts_.cap)
      throw DglError(ErrorKind::CapExceeded,
                     "relevant fact count " + std::to_string(plan.fact_count) +
                         " exceeds the enumeration cap " + std::to_string(opts_.cap));

    plan.worlds = 1;
    plan.strides.resize(plan.unit_idx.size());
    for (size_t k = 0; k < plan.unit_idx.size(); ++k) {
      plan.strides[k] = plan.worlds;
      plan.worlds *= grounding_.units[plan.unit_idx[k]].radix;
      if (plan.worlds > (1LL << 62) / 64)
        throw DglError(ErrorKind::CapExceeded, "world count overflow");
    }

    for (size_t ri = 0; ri < rule_mark.size(); ++ri)
      if (rule_mark[ri]) plan.sliced_rules.push_back(static_cast<int>(ri));

    for (size_t k = 0; k < plan.unit_idx.size(); ++k) {
      if (!grounding_.units[plan.unit_idx[k]].is_gnn) continue;
      QueryPlan::GnnSlot slot;
      slot.plan_pos = static_cast<int>(k);
      slot.unit = plan.unit_idx[k];
      plan.gnn_slots.push_back(std::move(slot));
    }

    if (plan.worlds <= opts_.materialize_limit) materialize(plan);
    return plan;
  }

  /// Sweeps all worlds: probabilities always, per-unit derivative payloads on
  /// request. Cache entries are shared across calls that pass the same cache.
  Evaluation evaluate(QueryPlan& plan, const ParamStore& store, bool with_grad,
                      EvalCache& cache) {
    if (with_grad && !plan.materialized) {
      // Gradients need the per-world graph table; the one-off precomputation
      // pays for itself over training epochs.
      if (plan.worlds > (1LL << 22))
        throw DglError(ErrorKind::CapExceeded,
                       "gradient computation over " + std::to_string(plan.worlds) +
                           " worlds is not supported");
      materialize(plan);
    }

    Evaluation eval;
    eval.worlds = plan.worlds;
    eval.relevant_fact_count = plan.fact_count;
    eval.with_grad = with_grad;
    long long miss_base = cache.misses();

    std::vector<double> unit_prob(plan.unit_idx.size(), 0.0);
    for (size_t k = 0; k < plan.unit_idx.size(); ++k) {
      const Grounding::Unit& u = grounding_.units[plan.unit_idx[k]];
      if (!u.is_gnn) unit_prob[k] = fact_probability(u.source_index, store);
    }

    // Distributions per slot and distinct graph. With the memo disabled the
    // sweep re-evaluates per world-use instead, so the evaluation count
    // reflects the absence of the cache while probabilities stay identical.
    std::vector<std::vector<std::vector<double>>> slot_dist(plan.gnn_slots.size());
    if (plan.materialized && cache.enabled())
      for (size_t s = 0; s < plan.gnn_slots.size(); ++s) {
        const auto& slot = plan.gnn_slots[s];
        slot_dist[s].resize(slot.graphs.size());
        for (size_t gi = 0; gi < slot.graphs.size(); ++gi)
          slot_dist[s][gi] =
              evaluate_graph(slot.unit, slot.graphs[gi], slot.keys[gi], store, with_grad, cache)
                  .probs;
      }

    if (with_grad) {
      eval.dp_unit.assign(plan.unit_idx.size(), 0.0);
      eval.gnn_upstream.resize(plan.gnn_slots.size());
      for (size_t s = 0; s < plan.gnn_slots.size(); ++s)
        eval.gnn_upstream[s].resize(plan.gnn_slots[s].graphs.size());
    }

    if (plan.materialized) {
      auto dist_for = [&](size_t s, long long w) -> const std::vector<double>& {
        int gi = plan.world_graph[s][w];
        if (cache.enabled()) return slot_dist[s][gi];
        const auto& slot = plan.gnn_slots[s];
        return evaluate_graph(slot.unit, slot.graphs[gi], slot.keys[gi], store, with_grad, cache)
            .probs;
      };
      sweep_materialized(plan, unit_prob, dist_for, with_grad, eval);
    } else {
      sweep_streaming(plan, unit_prob, store, with_grad, cache, eval);
    }

    eval.distinct_evals = cache.misses() - miss_base;
    return eval;
  }

  /// Adds chain * dP/dtheta into `grads` for every parameter the plan's
  /// evaluation touched. `eval` must come from a with_grad evaluate() using
  /// the same cache.
  void accumulate_gradients(const QueryPlan& plan, const Evaluation& eval, double chain,
                            const ParamStore& store, EvalCache& cache, ParamStore& grads) {
    for (size_t k = 0; k < plan.unit_idx.size(); ++k) {
      const Grounding::Unit& u = grounding_.units[plan.unit_idx[k]];
      if (u.is_gnn) continue;
      const ProbFact& f = grounding_.program.prob_facts[u.source_index];
      if (!f.learnable) continue;
      double p = store.fact_prob(f.param_id);
      grads.fact_logits[f.param_id] += chain * eval.dp_unit[k] * p * (1.0 - p);
    }
    for (size_t s = 0; s < plan.gnn_slots.size(); ++s) {
      const auto& slot = plan.gnn_slots[s];
      const GroundGnnFact& fact = grounding_.gnn_facts[grounding_.units[slot.unit].source_index];
      const GnnConfig& cfg = grounding_.program.model_configs.at(fact.model_id);
      const ParamTensors& params = store.models.at(fact.model_id);
      for (size_t gi = 0; gi < eval.gnn_upstream[s].size() && gi < slot.graphs.size(); ++gi) {
        const std::vector<double>& up = eval.gnn_upstream[s][gi];
        if (up.empty()) continue;
        bool nonzero = false;
        for (double v : up) nonzero = nonzero || v != 0.0;
        if (!nonzero) continue;
        std::vector<double> scaled(up.size());
        for (size_t i = 0; i < up.size(); ++i) scaled[i] = chain * up[i];
        const EvalCache::Entry& entry =
            evaluate_graph(slot.unit, slot.graphs[gi], slot.keys[gi], store, true, cache);
        ParamTensors g = backward(cfg, params, slot.graphs[gi], entry.trace, scaled);
        auto& acc = grads.models.at(fact.model_id);
        acc.zip_scalars(g, [](double& a, double& b) { a += b; });
      }
    }
  }

private:
  void refresh_sizes() {
    // intern() during planning may have grown the atom table
    if (grounding_.unit_of_atom.size() < grounding_.atom_list.size())
      grounding_.unit_of_atom.resize(grounding_.atom_list.size(), -1);
    if (grounding_.watchers.size() < grounding_.atom_list.size()) {
      grounding_.watchers.resize(grounding_.atom_list.size());
      grounding_.rules_by_head.resize(grounding_.atom_list.size());
    }
  }

  double fact_probability(int prob_index, const ParamStore& store) const {
    const ProbFact& f = grounding_.program.prob_facts[prob_index];
    return f.learnable ? store.fact_prob(f.param_id) : f.prob;
  }

  std::string graph_cache_key(const GroundGnnFact& fact, const LabelledGraph& g) const {
    std::string key = fact.model_id + "|" + g.canonical_key() + "|";
    for (const std::string& t : fact.targets) key += t + ",";
    return key;
  }

  const EvalCache::Entry& evaluate_graph(int unit, const LabelledGraph& graph,
                                         const std::string& key, const ParamStore& store,
                                         bool with_grad, EvalCache& cache) {
    const Grounding::Unit& u = grounding_.units[unit];
    const GroundGnnFact& fact = grounding_.gnn_facts[u.source_index];
    return cache.lookup(key, [&] {
      const GnnConfig& cfg = grounding_.program.model_configs.at(fact.model_id);
      auto it = store.models.find(fact.model_id);
      if (it == store.models.end())
        throw DglError(ErrorKind::UnknownModel,
                       "no parameters for model '" + fact.model_id + "'");
      EvalCache::Entry entry;
      ForwardTrace trace = forward(cfg, it->second, graph, fact.targets);
      entry.probs = trace.output;
      if (with_grad) {
        entry.trace = std::move(trace);
        entry.graph = graph;
        entry.has_trace = true;
      }
      return entry;
    });
  }

  struct Chainer {
    std::vector<char> truth;
    std::vector<int> remaining;
    std::vector<int> stack;

    void run(const Grounding& g, const QueryPlan& plan, const std::vector<int>& seeds) {
      truth.assign(g.atom_list.size(), 0);
      remaining.assign(g.irules.size(), -1);
      stack.clear();
      for (int ri : plan.sliced_rules) {
        remaining[ri] = static_cast<int>(g.irules[ri].body.size());
        if (remaining[ri] == 0) set_true(g.irules[ri].head);
      }
      for (int s : seeds) set_true(s);
      while (!stack.empty()) {
        int a = stack.back();
        stack.pop_back();
        for (int ri : g.watchers[a]) {
          if (remaining[ri] < 0) continue;  // rule outside the slice
          if (--remaining[ri] == 0) set_true(g.irules[ri].head);
        }
      }
    }

    void set_true(int atom) {
      if (atom < 0 || truth[atom]) return;
      truth[atom] = 1;
      stack.push_back(atom);
    }
  };

  void decode(const QueryPlan& plan, long long world, std::vector<int>& values) const {
    values.resize(plan.unit_idx.size());
    for (size_t k = 0; k < plan.unit_idx.size(); ++k)
      values[k] = static_cast<int>((world / plan.strides[k]) %
                                   grounding_.units[plan.unit_idx[k]].radix);
  }

  void seeds_for(const QueryPlan& plan, const std::vector<int>& values,
                 std::vector<int>& seeds) const {
    seeds.clear();
    for (size_t k = 0; k < plan.unit_idx.size(); ++k) {
      const Grounding::Unit& u = grounding_.units[plan.unit_idx[k]];
      if (u.radix == 2 && u.head_ids.size() == 1) {
        if (values[k] == 1) seeds.push_back(u.head_ids[0]);
      } else {
        seeds.push_back(u.head_ids[values[k]]);
      }
    }
  }

  void materialize(QueryPlan& plan) {
    plan.world_truth.resize(plan.worlds);
    plan.world_graph.assign(plan.gnn_slots.size(), std::vector<int>(plan.worlds, 0));
    Chainer chainer;
    std::vector<int> values, seeds;
    std::vector<char> gamma_truth;
    for (long long w = 0; w < plan.worlds; ++w) {
      decode(plan, w, values);
      seeds_for(plan, values, seeds);
      chainer.run(grounding_, plan, seeds);
      unsigned char bits = 0;
      for (size_t t = 0; t < plan.target_atoms.size(); ++t)
        if (chainer.truth[plan.target_atoms[t]]) bits |= (1u << t);
      plan.world_truth[w] = bits;
      for (size_t s = 0; s < plan.gnn_slots.size(); ++s) {
        auto& slot = plan.gnn_slots[s];
        const Grounding::Unit& u = grounding_.units[slot.unit];
        gamma_truth.resize(u.gamma_ids.size());
        for (size_t gi = 0; gi < u.gamma_ids.size(); ++gi)
          gamma_truth[gi] = chainer.truth[u.gamma_ids[gi]];
        auto [it, fresh] =
            slot.graph_of_truth.emplace(gamma_truth, static_cast<int>(slot.graphs.size()));
        if (fresh) {
          const GroundGnnFact& fact = grounding_.gnn_facts[u.source_index];
          std::set<Atom> model;
          for (size_t gi = 0; gi < u.gamma_ids.size(); ++gi)
            if (gamma_truth[gi]) model.insert(grounding_.atom_list[u.gamma_ids[gi]]);
          LabelledGraph graph = induced_graph(fact, model);
          slot.keys.push_back(graph_cache_key(fact, graph));
          slot.graphs.push_back(std::move(graph));
        }
        plan.world_graph[s][w] = it->second;
      }
    }
    plan.materialized = true;
  }

  // world weight and per-unit factor bookkeeping shared by both sweeps
  struct WorldMath {
    std::vector<double> factor, prefix, suffix;

    template <typename FactorFn>
    double weight(size_t n, FactorFn&& f) {
      factor.resize(n);
      for (size_t k = 0; k < n; ++k) factor[k] = f(k);
      double w = 1.0;
      for (size_t k = 0; k < n; ++k) w *= factor[k];
      return w;
    }

    /// product of all factors except k, computed without division
    void except_products(size_t n) {
      prefix.assign(n + 1, 1.0);
      suffix.assign(n + 1, 1.0);
      for (size_t k = 0; k < n; ++k) prefix[k + 1] = prefix[k] * factor[k];
      for (size_t k = n; k-- > 0;) suffix[k] = suffix[k + 1] * factor[k];
    }
    double except(size_t k) const { return prefix[k] * suffix[k + 1]; }
  };

  template <typename DistFn>
  void sweep_materialized(const QueryPlan& plan, const std::vector<double>& unit_prob,
                          DistFn&& dist_for, bool with_grad, Evaluation& eval) {
    size_t n = plan.unit_idx.size();
    std::vector<int> slot_of_pos(n, -1);
    for (size_t s = 0; s < plan.gnn_slots.size(); ++s)
      slot_of_pos[plan.gnn_slots[s].plan_pos] = static_cast<int>(s);

    auto run_range = [&](long long begin, long long end, double& sum_q, double& sum_e,
                         Evaluation* grad_sink) {
      WorldMath math;
      std::vector<int> values;
      for (long long w = begin; w < end; ++w) {
        decode(plan, w, values);
        double weight = math.weight(n, [&](size_t k) {
          const Grounding::Unit& u = grounding_.units[plan.unit_idx[k]];
          int slot = slot_of_pos[k];
          if (slot < 0) return values[k] ? unit_prob[k] : 1.0 - unit_prob[k];
          const std::vector<double>& dist = dist_for(slot, w);
          if (u.radix == 2 && dist.size() == 1)
            return values[k] ? dist[0] : 1.0 - dist[0];
          return dist[values[k]];
        });
        unsigned char bits = plan.world_truth[w];
        bool qct = (bits & 1u) != 0;
        bool ect = true;
        for (size_t t = 1; t < plan.target_atoms.size(); ++t)
          ect = ect && (bits & (1u << t));
        if (qct && ect) sum_q += weight;
        if (ect) sum_e += weight;
        if (grad_sink && qct && ect) {
          math.except_products(n);
          for (size_t k = 0; k < n; ++k) {
            double rest = math.except(k);
            const Grounding::Unit& u = grounding_.units[plan.unit_idx[k]];
            int slot = slot_of_pos[k];
            if (slot < 0) {
              grad_sink->dp_unit[k] += values[k] ? rest : -rest;
            } else {
              auto& ups = grad_sink->gnn_upstream[slot][plan.world_graph[slot][w]];
              const std::vector<double>& dist = dist_for(slot, w);
              if (ups.empty()) ups.assign(dist.size(), 0.0);
              if (u.radix == 2 && dist.size() == 1)
                ups[0] += values[k] ? rest : -rest;
              else
                ups[values[k]] += rest;
            }
          }
        }
      }
    };

    if (with_grad) {
      double sq = 0, se = 0;
      run_range(0, plan.worlds, sq, se, &eval);
      eval.p_query = sq;
      eval.p_evidence = se;
      return;
    }

    const long long chunk = 16384;
    long long chunks = (plan.worlds + chunk - 1) / chunk;
    int threads = std::min<long long>(resolve_threads(opts_.threads), chunks);
    std::vector<double> part_q(chunks, 0.0), part_e(chunks, 0.0);
    if (threads <= 1) {
      for (long long c = 0; c < chunks; ++c)
        run_range(c * chunk, std::min(plan.worlds, (c + 1) * chunk), part_q[c], part_e[c],
                  nullptr);
    } else {
      std::atomic<long long> next{0};
      std::vector<std::thread> pool;
      for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
          long long c;
          while ((c = next.fetch_add(1)) < chunks)
            run_range(c * chunk, std::min(plan.worlds, (c + 1) * chunk), part_q[c], part_e[c],
                      nullptr);
        });
      for (auto& th : pool) th.join();
    }
    for (long long c = 0; c < chunks; ++c) {
      eval.p_query += part_q[c];
      eval.p_evidence += part_e[c];
    }
  }

  // Naive enumeration path for plans too large to materialize: each world
  // re-runs the chaining and rebuilds its induced graphs on the fly.
  void sweep_streaming(const QueryPlan& plan, const std::vector<double>& unit_prob,
                       const ParamStore& store, bool with_grad, EvalCache& cache,
                       Evaluation& eval) {
    (void)with_grad;  // gradients always use the materialized path
    size_t n = plan.unit_idx.size();
    std::vector<int> slot_of_pos(n, -1);
    for (size_t s = 0; s < plan.gnn_slots.size(); ++s)
      slot_of_pos[plan.gnn_slots[s].plan_pos] = static_cast<int>(s);

    auto run_range = [&](long long begin, long long end, double& sum_q, double& sum_e) {
      WorldMath math;
      Chainer chainer;
      std::vector<int> values, seeds;
      for (long long w = begin; w < end; ++w) {
        decode(plan, w, values);
        seeds_for(plan, values, seeds);
        chainer.run(grounding_, plan, seeds);
        std::vector<const std::vector<double>*> dists(plan.gnn_slots.size(), nullptr);
        for (size_t s = 0; s < plan.gnn_slots.size(); ++s) {
          const auto& slot = plan.gnn_slots[s];
          const Grounding::Unit& u = grounding_.units[slot.unit];
          const GroundGnnFact& fact = grounding_.gnn_facts[u.source_index];
          std::set<Atom> model;
          for (int gid : u.gamma_ids)
            if (chainer.truth[gid]) model.insert(grounding_.atom_list[gid]);
          LabelledGraph graph = induced_graph(fact, model);
          std::string key = graph_cache_key(fact, graph);
          dists[s] = &evaluate_graph(slot.unit, graph, key, store, false, cache).probs;
        }
        double weight = math.weight(n, [&](size_t k) {
          int slot = slot_of_pos[k];
          if (slot < 0) return values[k] ? unit_prob[k] : 1.0 - unit_prob[k];
          const std::vector<double>& dist = *dists[slot];
          const Grounding::Unit& u = grounding_.units[plan.unit_idx[k]];
          if (u.radix == 2 && dist.size() == 1)
            return values[k] ? dist[0] : 1.0 - dist[0];
          return dist[values[k]];
        });
        bool qct = chainer.truth[plan.target_atoms[0]];
        bool ect = true;
        for (size_t t = 1; t < plan.target_atoms.size(); ++t)
          ect = ect && chainer.truth[plan.target_atoms[t]];
        if (qct && ect) sum_q += weight;
        if (ect) sum_e += weight;
      }
    };

    const long long chunk = 16384;
    long long chunks = (plan.worlds + chunk - 1) / chunk;
    int threads = std::min<long long>(resolve_threads(opts_.threads), chunks);
    std::vector<double> part_q(chunks, 0.0), part_e(chunks, 0.0);
    if (threads <= 1) {
      for (long long c = 0; c < chunks; ++c)
        run_range(c * chunk, std::min(plan.worlds, (c + 1) * chunk), part_q[c], part_e[c]);
    } else {
      std::atomic<long long> next{0};
      std::vector<std::thread> pool;
      for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
          long long c;
          while ((c = next.fetch_add(1)) < chunks)
            run_range(c * chunk, std::min(plan.worlds, (c + 1) * chunk), part_q[c], part_e[c]);
        });
      for (auto& th : pool) th.join();
    }
    for (long long c = 0; c < chunks; ++c) {
      eval.p_query += part_q[c];
      eval.p_evidence += part_e[c];
    }
  }

  EngineOptions opts_;
  Grounding grounding_;
  std::map<std::string, QueryPlan> plans_;
};

/// Probability of one complete truth assignment over the base facts, given
/// the per-world conditional probabilities P(f | G_f) of every gnn head.
/// Softmax head groups contribute a categorical factor (exactly one head
/// true); assignments violating that are impossible and get probability zero.
inline double world_probability(const std::map<Atom, bool>& truth, const Program& validated,
                                const std::map<Atom, double>& gnn_eval,
                                const ParamStore* store = nullptr) {
  Grounding g(validated);
  size_t expected = 0;
  for (const auto& u : g.units) expected += u.head_ids.size();
  if (truth.size() != expected)
    throw DglError(ErrorKind::Validation,
                   "assignment domain does not match the program's base facts");

  double prob = 1.0;
  for (const auto& u : g.units) {
    if (!u.is_gnn) {
      const ProbFact& f = g.program.prob_facts[u.source_index];
      double p = f.learnable && store ? store->fact_prob(f.param_id) : f.prob;
      auto it = truth.find(f.atom);
      if (it == truth.end())
        throw DglError(ErrorKind::Validation, "assignment misses '" + f.atom.text() + "'");
      prob *= it->second ? p : 1.0 - p;
      continue;
    }
    const GroundGnnFact& fact = g.gnn_facts[u.source_index];
    if (fact.head_group.size() == 1) {
      const Atom& h = fact.head_group[0];
      double p = gnn_eval.at(h);
      prob *= truth.at(h) ? p : 1.0 - p;
    } else {
      int chosen = -1;
      for (size_t i = 0; i < fact.head_group.size(); ++i) {
        if (!truth.at(fact.head_group[i])) continue;
        if (chosen >= 0) return 0.0;  // two heads of one softmax group
        chosen = static_cast<int>(i);
      }
      if (chosen < 0) return 0.0;  // no head of the group
      prob *= gnn_eval.at(fact.head_group[chosen]);
    }
  }
  return prob;
}

}  // namespace dgl
