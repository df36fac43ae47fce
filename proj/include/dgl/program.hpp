#pragma once

#include <map>
#include <string>
#include <vector>

#include "dgl/term.hpp"

namespace dgl {

struct ProbFact {
  Atom atom;
  double prob = 1.0;
  bool learnable = false;
  std::string param_id;  // assigned by validate() when learnable
  int line = 0, col = 0;
};

/// One item of a gamma specification: either a (possibly non-ground) atom or
/// a predicate indicator name/arity standing for every universe atom of that
/// predicate.
struct GammaItem {
  bool is_indicator = false;
  Atom atom;               // when !is_indicator
  std::string pred;        // when is_indicator
  int arity = 0;

  std::string text() const {
    return is_indicator ? pred + "/" + std::to_string(arity) : atom.text();
  }
};

struct GnnFactSchema {
  std::string model_id;
  std::vector<GammaItem> gamma;
  std::vector<Term> targets;
  std::vector<Atom> head_group;  // nonempty; ";"-joined heads share one softmax
  std::vector<Atom> guard;       // solved against the possible-atom universe
  int line = 0, col = 0;
};

enum class Readout { Node, Edge, Graph };

inline const char* readout_name(Readout r) {
  switch (r) {
    case Readout::Node: return "node";
    case Readout::Edge: return "edge";
    case Readout::Graph: return "graph";
  }
  return "?";
}

struct GnnConfig {
  std::string model_id;
  int num_layers = 1;
  int hidden_dim = 1;
  Readout readout = Readout::Graph;
  // Filled in by validate() from the owning schemas' gamma specifications.
  std::vector<std::string> relations;      // binary predicates, sorted
  std::vector<std::string> vertex_labels;  // unary predicates, sorted
  int output_arity = 1;                    // 1 = sigmoid, k >= 2 = softmax
  int line = 0, col = 0;
};

struct Program {
  std::vector<ProbFact> prob_facts;
  std::vector<Rule> rules;  // deterministic facts are rules with empty bodies
  std::vector<GnnFactSchema> gnn_schemas;
  std::map<std::string, GnnConfig> model_configs;
  std::vector<Atom> queries;   // query(...) directives
  std::vector<Atom> evidence;  // evidence(...) directives
  bool validated = false;
};

}  // namespace dgl
