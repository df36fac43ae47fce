#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace dgl {

enum class TermKind { Constant, Variable, Compound };

/// First-order term: constant, variable, or functor applied to subterms.
/// Terms are immutable values; all mutation happens through construction.
class Term {
public:
  Term() : kind_(TermKind::Constant), symbol_("?") {}

  static Term constant(std::string symbol) {
    return Term(TermKind::Constant, std::move(symbol), {});
  }
  static Term variable(std::string name) {
    return Term(TermKind::Variable, std::move(name), {});
  }
  static Term compound(std::string functor, std::vector<Term> args) {
    return Term(TermKind::Compound, std::move(functor), std::move(args));
  }

  TermKind kind() const { return kind_; }
  /// Constant symbol, variable name, or functor, depending on kind.
  const std::string& symbol() const { return symbol_; }
  const std::vector<Term>& args() const { return args_; }

  bool is_ground() const {
    if (kind_ == TermKind::Variable) return false;
    for (const Term& t : args_)
      if (!t.is_ground()) return false;
    return true;
  }

  bool contains_variable(const std::string& name) const {
    if (kind_ == TermKind::Variable) return symbol_ == name;
    for (const Term& t : args_)
      if (t.contains_variable(name)) return true;
    return false;
  }

  void collect_variables(std::set<std::string>& out) const {
    if (kind_ == TermKind::Variable) out.insert(symbol_);
    for (const Term& t : args_) t.collect_variables(out);
  }

  void collect_constants(std::set<std::string>& out) const {
    if (kind_ == TermKind::Constant) out.insert(symbol_);
    for (const Term& t : args_) t.collect_constants(out);
  }

  std::string text() const {
    if (kind_ != TermKind::Compound) return symbol_;
    std::string out = symbol_ + "(";
    for (size_t i = 0; i < args_.size(); ++i) {
      if (i) out += ",";
      out += args_[i].text();
    }
    return out + ")";
  }

  friend bool operator==(const Term& a, const Term& b) {
    return a.kind_ == b.kind_ && a.symbol_ == b.symbol_ && a.args_ == b.args_;
  }
  friend bool operator!=(const Term& a, const Term& b) { return !(a == b); }
  friend bool operator<(const Term& a, const Term& b) {
    if (a.kind_ != b.kind_) return a.kind_ < b.kind_;
    if (a.symbol_ != b.symbol_) return a.symbol_ < b.symbol_;
    return a.args_ < b.args_;
  }

private:
  Term(TermKind kind, std::string symbol, std::vector<Term> args)
      : kind_(kind), symbol_(std::move(symbol)), args_(std::move(args)) {}

  TermKind kind_;
  std::string symbol_;
  std::vector<Term> args_;
};

struct Atom {
  std::string predicate;
  std::vector<Term> args;

  Atom() = default;
  Atom(std::string predicate, std::vector<Term> args = {})
      : predicate(std::move(predicate)), args(std::move(args)) {}

  int arity() const { return static_cast<int>(args.size()); }

  /// Predicate identity is (name, arity).
  std::string pred_key() const { return predicate + "/" + std::to_string(arity()); }

  bool is_ground() const {
    for (const Term& t : args)
      if (!t.is_ground()) return false;
    return true;
  }

  void collect_variables(std::set<std::string>& out) const {
    for (const Term& t : args) t.collect_variables(out);
  }

  void collect_constants(std::set<std::string>& out) const {
    for (const Term& t : args) t.collect_constants(out);
  }

  std::string text() const {
    if (args.empty()) return predicate;
    std::string out = predicate + "(";
    for (size_t i = 0; i < args.size(); ++i) {
      if (i) out += ",";
      out += args[i].text();
    }
    return out + ")";
  }

  friend bool operator==(const Atom& a, const Atom& b) {
    return a.predicate == b.predicate && a.args == b.args;
  }
  friend bool operator!=(const Atom& a, const Atom& b) { return !(a == b); }
  friend bool operator<(const Atom& a, const Atom& b) {
    if (a.predicate != b.predicate) return a.predicate < b.predicate;
    return a.args < b.args;
  }
};

/// Idempotent variable binding: no bound term mentions a variable of the
/// domain, so applying twice equals applying once.
class Substitution {
public:
  bool empty() const { return bindings_.empty(); }
  size_t size() const { return bindings_.size(); }
  const std::map<std::string, Term>& bindings() const { return bindings_; }

  const Term* lookup(const std::string& var) const {
    auto it = bindings_.find(var);
    return it == bindings_.end() ? nullptr : &it->second;
  }

  Term apply(const Term& t) const {
    switch (t.kind()) {
      case TermKind::Constant:
        return t;
      case TermKind::Variable: {
        const Term* bound = lookup(t.symbol());
        return bound ? *bound : t;
      }
      case TermKind::Compound: {
        std::vector<Term> args;
        args.reserve(t.args().size());
        for (const Term& a : t.args()) args.push_back(apply(a));
        return Term::compound(t.symbol(), std::move(args));
      }
    }
    return t;
  }

  Atom apply(const Atom& a) const {
    std::vector<Term> args;
    args.reserve(a.args.size());
    for (const Term& t : a.args) args.push_back(apply(t));
    return Atom(a.predicate, std::move(args));
  }

  /// Binds var to term, keeping the substitution idempotent. Returns false
  /// when the occurs check rejects the binding.
  bool bind(const std::string& var, const Term& term) {
    Term resolved = apply(term);
    if (resolved.kind() == TermKind::Variable && resolved.symbol() == var) return true;
    if (resolved.contains_variable(var)) return false;
    Substitution point;
    point.bindings_.emplace(var, resolved);
    for (auto& [v, t] : bindings_) t = point.apply(t);
    bindings_.emplace(var, std::move(resolved));
    return true;
  }

  friend bool operator==(const Substitution& a, const Substitution& b) {
    return a.bindings_ == b.bindings_;
  }

private:
  std::map<std::string, Term> bindings_;
};

inline bool unify_into(const Term& lhs, const Term& rhs, Substitution& subst) {
  Term a = subst.apply(lhs);
  Term b = subst.apply(rhs);
  if (a.kind() == TermKind::Variable) return subst.bind(a.symbol(), b);
  if (b.kind() == TermKind::Variable) return subst.bind(b.symbol(), a);
  if (a.kind() != b.kind() || a.symbol() != b.symbol()) return false;
  if (a.args().size() != b.args().size()) return false;
  for (size_t i = 0; i < a.args().size(); ++i)
    if (!unify_into(a.args()[i], b.args()[i], subst)) return false;
  return true;
}

/// Most general unifier of two terms, if any.
inline std::optional<Substitution> unify(const Term& a, const Term& b) {
  Substitution subst;
  if (!unify_into(a, b, subst)) return std::nullopt;
  return subst;
}

/// Most general unifier of two atoms; fails on predicate or arity mismatch.
inline std::optional<Substitution> unify(const Atom& a, const Atom& b) {
  if (a.predicate != b.predicate || a.args.size() != b.args.size()) return std::nullopt;
  Substitution subst;
  for (size_t i = 0; i < a.args.size(); ++i)
    if (!unify_into(a.args[i], b.args[i], subst)) return std::nullopt;
  return subst;
}

inline Term apply_subst(const Term& t, const Substitution& s) { return s.apply(t); }
inline Atom apply_subst(const Atom& a, const Substitution& s) { return s.apply(a); }

struct Rule {
  Atom head;
  std::vector<Atom> body;

  Rule() = default;
  Rule(Atom head, std::vector<Atom> body = {})
      : head(std::move(head)), body(std::move(body)) {}

  bool is_fact() const { return body.empty(); }

  bool is_ground() const {
    if (!head.is_ground()) return false;
    for (const Atom& a : body)
      if (!a.is_ground()) return false;
    return true;
  }

  std::string text() const {
    std::string out = head.text();
    if (!body.empty()) {
      out += " :- ";
      for (size_t i = 0; i < body.size(); ++i) {
        if (i) out += ", ";
        out += body[i].text();
      }
    }
    return out + ".";
  }

  friend bool operator==(const Rule& a, const Rule& b) {
    return a.head == b.head && a.body == b.body;
  }
  friend bool operator<(const Rule& a, const Rule& b) {
    if (!(a.head == b.head)) return a.head < b.head;
    return a.body < b.body;
  }
};

/// Finite set of ground atoms plus every constant appearing in them.
struct AtomUniverse {
  std::set<Atom> atoms;
  std::set<std::string> constants;

  void insert(const Atom& a) {
    if (atoms.insert(a).second) a.collect_constants(constants);
  }
  bool contains(const Atom& a) const { return atoms.count(a) > 0; }
  size_t size() const { return atoms.size(); }
};

/// Renames every variable with a per-instance suffix so rule instances never
/// capture each other's variables during resolution.
inline Rule standardize_apart(const Rule& r, int index) {
  std::set<std::string> vars;
  r.head.collect_variables(vars);
  for (const Atom& a : r.body) a.collect_variables(vars);
  Substitution s;
  for (const std::string& v : vars)
    s.bind(v, Term::variable(v + "__" + std::to_string(index)));
  Rule out;
  out.head = s.apply(r.head);
  for (const Atom& a : r.body) out.body.push_back(s.apply(a));
  return out;
}

}  // namespace dgl
