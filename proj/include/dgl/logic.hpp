#pragma once

#include <algorithm>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "dgl/term.hpp"

namespace dgl {

namespace detail {

// Joins body atoms left to right against an indexed atom set, emitting every
// substitution that grounds the whole body inside the set.
class BodyMatcher {
public:
  explicit BodyMatcher(const std::set<Atom>& atoms) {
    for (const Atom& a : atoms) index_[a.pred_key()].push_back(&a);
  }

  template <typename Fn>
  void for_each_solution(const std::vector<Atom>& body, Fn&& fn) const {
    Substitution subst;
    descend(body, 0, subst, fn);
  }

private:
  template <typename Fn>
  void descend(const std::vector<Atom>& body, size_t i, Substitution& subst,
               Fn& fn) const {
    if (i == body.size()) {
      fn(subst);
      return;
    }
    Atom goal = subst.apply(body[i]);
    auto it = index_.find(goal.pred_key());
    if (it == index_.end()) return;
    for (const Atom* candidate : it->second) {
      Substitution next = subst;
      if (!unify_goal(goal, *candidate, next)) continue;
      descend(body, i + 1, next, fn);
    }
  }

  static bool unify_goal(const Atom& goal, const Atom& ground, Substitution& s) {
    for (size_t i = 0; i < goal.args.size(); ++i)
      if (!unify_into(goal.args[i], ground.args[i], s)) return false;
    return true;
  }

  std::map<std::string, std::vector<const Atom*>> index_;
};

inline void expand_free_vars(const Rule& grounded_so_far,
                             const std::set<std::string>& constants,
                             std::vector<Rule>& out) {
  std::set<std::string> vars;
  grounded_so_far.head.collect_variables(vars);
  if (vars.empty()) {
    out.push_back(grounded_so_far);
    return;
  }
  // Head variables unconstrained by the body range over the universe constants.
  std::string var = *vars.begin();
  for (const std::string& c : constants) {
    Substitution s;
    s.bind(var, Term::constant(c));
    Rule next;
    next.head = s.apply(grounded_so_far.head);
    for (const Atom& a : grounded_so_far.body) next.body.push_back(s.apply(a));
    expand_free_vars(next, constants, out);
  }
}

}  // namespace detail

/// Bottom-up relevant grounding seeded from the universe: returns every ground
/// rule instance whose body atoms lie in the closure of the universe under the
/// rules. Derived heads join the closure until fixpoint.
inline std::vector<Rule> ground_program(const std::vector<Rule>& rules,
                                        const AtomUniverse& universe) {
  std::set<Atom> known = universe.atoms;
  std::set<std::string> constants = universe.constants;
  std::set<Rule> emitted;
  std::vector<Rule> out;

  bool changed = true;
  while (changed) {
    changed = false;
    detail::BodyMatcher matcher(known);
    std::vector<Rule> fresh;
    for (const Rule& rule : rules) {
      matcher.for_each_solution(rule.body, [&](const Substitution& subst) {
        Rule grounded;
        grounded.head = subst.apply(rule.head);
        for (const Atom& a : rule.body) grounded.body.push_back(subst.apply(a));
        if (grounded.is_ground()) {
          fresh.push_back(std::move(grounded));
        } else {
          detail::expand_free_vars(grounded, constants, fresh);
        }
      });
    }
    for (Rule& r : fresh) {
      if (!emitted.insert(r).second) continue;
      out.push_back(r);
      if (known.insert(r.head).second) {
        r.head.collect_constants(constants);
        changed = true;
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Least fixpoint of forward chaining over ground rules.
inline std::set<Atom> minimal_model(const std::set<Atom>& facts,
                                    const std::vector<Rule>& ground_rules) {
  std::set<Atom> model = facts;
  // Counter-based propagation: each rule fires once its body count hits zero.
  std::map<Atom, std::vector<size_t>> watchers;
  std::vector<int> remaining(ground_rules.size());
  std::queue<Atom> queue;

  for (size_t i = 0; i < ground_rules.size(); ++i) {
    const Rule& r = ground_rules[i];
    remaining[i] = static_cast<int>(r.body.size());
    for (const Atom& b : r.body) watchers[b].push_back(i);
    if (r.body.empty() && model.insert(r.head).second) queue.push(r.head);
  }
  for (const Atom& a : model) queue.push(a);

  while (!queue.empty()) {
    Atom current = queue.front();
    queue.pop();
    auto it = watchers.find(current);
    if (it == watchers.end()) continue;
    for (size_t ri : it->second) {
      if (--remaining[ri] == 0) {
        const Atom& head = ground_rules[ri].head;
        if (model.insert(head).second) queue.push(head);
      }
    }
    watchers.erase(it);  // each atom triggers its watchers once
  }
  return model;
}

struct RelevantFacts {
  std::set<Atom> facts;
  bool provable = false;
};

/// Base facts appearing in at least one proof of the query when every base
/// fact is assumed true. Computed as backward reachability over the viable
/// ground rules (bodies inside the all-true closure), with visited-goal
/// tabling so recursive programs terminate. Facts outside the returned set
/// can never flip the query in any world.
inline RelevantFacts relevant_facts(const Atom& query,
                                    const std::vector<Rule>& rules,
                                    const std::set<Atom>& base_facts) {
  AtomUniverse seed;
  for (const Atom& a : base_facts) seed.insert(a);
  std::vector<Rule> viable = ground_program(rules, seed);
  std::set<Atom> model = minimal_model(base_facts, viable);

  RelevantFacts result;
  if (!model.count(query)) return result;
  result.provable = true;

  std::map<Atom, std::vector<const Rule*>> by_head;
  for (const Rule& r : viable) by_head[r.head].push_back(&r);

  std::set<Atom> visited;
  std::queue<Atom> queue;
  queue.push(query);
  visited.insert(query);
  while (!queue.empty()) {
    Atom goal = queue.front();
    queue.pop();
    if (base_facts.count(goal)) result.facts.insert(goal);
    auto it = by_head.find(goal);
    if (it == by_head.end()) continue;
    for (const Rule* r : it->second) {
      bool derivable = true;
      for (const Atom& b : r->body)
        if (!model.count(b)) { derivable = false; break; }
      if (!derivable) continue;
      for (const Atom& b : r->body)
        if (visited.insert(b).second) queue.push(b);
    }
  }
  return result;
}

}  // namespace dgl
