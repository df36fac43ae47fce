#include <catch2/catch_amalgamated.hpp>

#include "dgl/logic.hpp"
#include "dgl/parser.hpp"
#include "dgl/rng.hpp"

using namespace dgl;

namespace {

Atom atom(const std::string& s) { return parse_atom(s); }

const char* kBlocksRules =
    "move(X) :- on(X,Y). move(X) :- next_to(X,Y). legal_move(X) :- move(X), light(X).";

std::vector<Rule> blocks_rules() { return parse(kBlocksRules).rules; }

Term random_term(Rng& rng, int depth) {
  int pick = rng.uniform_int(0, depth > 0 ? 3 : 1);
  switch (pick) {
    case 0: return Term::constant(std::string(1, static_cast<char>('a' + rng.uniform_int(0, 2))));
    case 1: return Term::variable(std::string(1, static_cast<char>('X' + rng.uniform_int(0, 2))));
    default: {
      int arity = rng.uniform_int(1, 2);
      std::vector<Term> args;
      for (int i = 0; i < arity; ++i) args.push_back(random_term(rng, depth - 1));
      return Term::compound(pick == 2 ? "f" : "g", std::move(args));
    }
  }
}

}  // namespace

TEST_CASE("unify computes textbook most general unifiers") {
  auto mgu = unify(atom("p(X,a)"), atom("p(b,Y)"));
  REQUIRE(mgu.has_value());
  CHECK(mgu->apply(atom("p(X,a)")) == atom("p(b,a)"));
  CHECK(mgu->apply(atom("p(b,Y)")) == atom("p(b,a)"));
  CHECK(mgu->bindings().size() == 2);
}

TEST_CASE("unify fails on predicate mismatch") {
  CHECK_FALSE(unify(atom("p(X)"), atom("q(a)")).has_value());
}

TEST_CASE("unify respects the occurs check") {
  Term x = Term::variable("X");
  Term fx = Term::compound("f", {Term::variable("X")});
  CHECK_FALSE(unify(Term::compound("p", {x}), Term::compound("p", {fx})).has_value());
}

TEST_CASE("unifiers actually unify on random term pairs") {
  Rng rng(7);
  int successes = 0;
  for (int i = 0; i < 2000; ++i) {
    Term a = random_term(rng, 2);
    Term b = random_term(rng, 2);
    auto mgu = unify(a, b);
    if (!mgu) continue;
    ++successes;
    CHECK(apply_subst(a, *mgu) == apply_subst(b, *mgu));
    // idempotence: applying the substitution twice changes nothing
    CHECK(apply_subst(apply_subst(a, *mgu), *mgu) == apply_subst(a, *mgu));
  }
  CHECK(successes > 100);
}

TEST_CASE("apply_subst replaces exactly the bound variables") {
  Substitution s;
  REQUIRE(s.bind("X", Term::constant("a")));
  CHECK(apply_subst(atom("move(X)"), s) == atom("move(a)"));
  CHECK(apply_subst(atom("p(a)"), Substitution{}) == atom("p(a)"));
  CHECK(apply_subst(atom("p(X,Y)"), s) == atom("p(a,Y)"));
}

TEST_CASE("ground_program grounds through the universe closure") {
  AtomUniverse u;
  u.insert(atom("on(a,b)"));
  auto grounded = ground_program(parse("move(X) :- on(X,Y).").rules, u);
  REQUIRE(grounded.size() == 1);
  CHECK(grounded[0].head == atom("move(a)"));
  REQUIRE(grounded[0].body.size() == 1);
  CHECK(grounded[0].body[0] == atom("on(a,b)"));
}

TEST_CASE("grounding an empty program yields nothing") {
  AtomUniverse u;
  u.insert(atom("on(a,b)"));
  CHECK(ground_program({}, u).empty());
}

TEST_CASE("blocks program grounding contains the legal_move instance") {
  AtomUniverse u;
  u.insert(atom("on(a,b)"));
  u.insert(atom("next_to(a,c)"));
  u.insert(atom("light(a)"));
  auto grounded = ground_program(blocks_rules(), u);
  Rule want(atom("legal_move(a)"), {atom("move(a)"), atom("light(a)")});
  CHECK(std::find(grounded.begin(), grounded.end(), want) != grounded.end());
}

TEST_CASE("minimal model derives the worked blocks world") {
  AtomUniverse u;
  u.insert(atom("on(a,b)"));
  u.insert(atom("light(a)"));
  auto grounded = ground_program(blocks_rules(), u);
  auto model = minimal_model(u.atoms, grounded);
  CHECK(model == std::set<Atom>{atom("on(a,b)"), atom("light(a)"), atom("move(a)"),
                                atom("legal_move(a)")});
}

TEST_CASE("nothing is derivable from no facts") {
  auto model = minimal_model({}, parse("p(a) :- q(a).").rules);
  CHECK(model.empty());
}

TEST_CASE("single rule firing from next_to") {
  AtomUniverse u;
  u.insert(atom("next_to(a,c)"));
  auto grounded = ground_program(blocks_rules(), u);
  auto model = minimal_model(u.atoms, grounded);
  CHECK(model == std::set<Atom>{atom("next_to(a,c)"), atom("move(a)")});
}

namespace {

struct RandomLogicProgram {
  std::vector<Rule> rules;
  std::vector<Atom> base_facts;
};

RandomLogicProgram random_logic_program(Rng& rng) {
  RandomLogicProgram p;
  std::vector<std::string> consts = {"a", "b", "c"};
  auto random_const = [&] { return consts[rng.uniform_int(0, 2)]; };
  auto random_atom = [&](bool allow_var) {
    int pred = rng.uniform_int(0, 3);
    std::string name = "p" + std::to_string(pred);
    int arity = pred % 2 == 0 ? 1 : 2;
    std::vector<Term> args;
    for (int i = 0; i < arity; ++i) {
      if (allow_var && rng.bernoulli(0.4))
        args.push_back(Term::variable(std::string(1, static_cast<char>('X' + rng.uniform_int(0, 1)))));
      else
        args.push_back(Term::constant(random_const()));
    }
    return Atom(name, std::move(args));
  };

  int facts = rng.uniform_int(2, 8);
  std::set<Atom> seen;
  for (int i = 0; i < facts; ++i) {
    Atom a = random_atom(false);
    if (seen.insert(a).second) p.base_facts.push_back(a);
  }
  int rules = rng.uniform_int(1, 6);
  for (int i = 0; i < rules; ++i) {
    Atom head = random_atom(true);
    std::vector<Atom> body;
    int len = rng.uniform_int(1, 3);
    for (int b = 0; b < len; ++b) body.push_back(random_atom(true));
    // keep rules range-restricted so grounding stays finite and natural
    std::set<std::string> head_vars, body_vars;
    head.collect_variables(head_vars);
    for (const Atom& b : body) b.collect_variables(body_vars);
    bool safe = true;
    for (const std::string& v : head_vars) safe = safe && body_vars.count(v);
    if (safe) p.rules.push_back(Rule(head, body));
  }
  return p;
}

std::set<Atom> truths(const std::vector<Atom>& base, unsigned mask) {
  std::set<Atom> out;
  for (size_t i = 0; i < base.size(); ++i)
    if (mask & (1u << i)) out.insert(base[i]);
  return out;
}

}  // namespace

TEST_CASE("minimal model is monotone and idempotent on random programs") {
  Rng rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    RandomLogicProgram p = random_logic_program(rng);
    AtomUniverse u;
    for (const Atom& a : p.base_facts) u.insert(a);
    auto grounded = ground_program(p.rules, u);

    unsigned full = (1u << p.base_facts.size()) - 1;
    unsigned m1 = rng.next_u64() & full;
    unsigned m2 = m1 | (rng.next_u64() & full);  // superset
    auto model1 = minimal_model(truths(p.base_facts, m1), grounded);
    auto model2 = minimal_model(truths(p.base_facts, m2), grounded);
    CHECK(std::includes(model2.begin(), model2.end(), model1.begin(), model1.end()));

    auto again = minimal_model(model1, grounded);
    CHECK(again == model1);
  }
}

TEST_CASE("relevant facts of the worked query") {
  std::set<Atom> base = {atom("on(a,b)"), atom("next_to(a,c)"), atom("light(a)")};
  auto r = relevant_facts(atom("legal_move(a)"), blocks_rules(), base);
  CHECK(r.provable);
  CHECK(r.facts == base);
}

TEST_CASE("a base fact is its own relevant set") {
  std::set<Atom> base = {atom("on(a,b)")};
  auto r = relevant_facts(atom("on(a,b)"), blocks_rules(), base);
  CHECK(r.provable);
  CHECK(r.facts == base);
}

TEST_CASE("unprovable queries come back flagged with no facts") {
  auto r = relevant_facts(atom("unprovable(x)"), blocks_rules(), {atom("on(a,b)")});
  CHECK_FALSE(r.provable);
  CHECK(r.facts.empty());
}

TEST_CASE("facts outside the relevant set never flip the query") {
  Rng rng(23);
  for (int trial = 0; trial < 40; ++trial) {
    RandomLogicProgram p = random_logic_program(rng);
    if (p.base_facts.size() > 10) continue;
    AtomUniverse u;
    for (const Atom& a : p.base_facts) u.insert(a);
    auto grounded = ground_program(p.rules, u);
    auto all_true = minimal_model(truths(p.base_facts, (1u << p.base_facts.size()) - 1), grounded);
    if (all_true.empty()) continue;
    // pick a derivable query
    Atom query = *std::next(all_true.begin(),
                            static_cast<long>(rng.next_u64() % all_true.size()));
    std::set<Atom> base_set(p.base_facts.begin(), p.base_facts.end());
    auto relevant = relevant_facts(query, p.rules, base_set);
    REQUIRE(relevant.provable);

    unsigned relevant_mask = 0;
    for (size_t i = 0; i < p.base_facts.size(); ++i)
      if (relevant.facts.count(p.base_facts[i])) relevant_mask |= (1u << i);

    // truth of the query must be a function of the relevant restriction
    std::map<unsigned, bool> seen;
    for (unsigned mask = 0; mask < (1u << p.base_facts.size()); ++mask) {
      auto model = minimal_model(truths(p.base_facts, mask), grounded);
      bool holds = model.count(query) > 0;
      auto [it, fresh] = seen.emplace(mask & relevant_mask, holds);
      CHECK(it->second == holds);
      (void)fresh;
    }
  }
}

TEST_CASE("standardize_apart prevents variable capture") {
  Rule r = parse("p(X) :- q(X,Y).").rules[0];
  Rule r1 = standardize_apart(r, 1);
  Rule r2 = standardize_apart(r, 2);
  std::set<std::string> v1, v2;
  r1.head.collect_variables(v1);
  for (const Atom& b : r1.body) b.collect_variables(v1);
  r2.head.collect_variables(v2);
  for (const Atom& b : r2.body) b.collect_variables(v2);
  for (const std::string& v : v1) CHECK_FALSE(v2.count(v));
}
