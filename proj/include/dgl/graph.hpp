#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dgl/diagnostics.hpp"

namespace dgl {

/// Directed multi-relational graph with multi-hot vertex labels. Vertices are
/// named constants in a fixed order; edges carry a relation label.
struct LabelledGraph {
  struct Edge {
    int src;
    std::string label;
    int dst;
    friend bool operator<(const Edge& a, const Edge& b) {
      if (a.src != b.src) return a.src < b.src;
      if (a.label != b.label) return a.label < b.label;
      return a.dst < b.dst;
    }
    friend bool operator==(const Edge& a, const Edge& b) {
      return a.src == b.src && a.label == b.label && a.dst == b.dst;
    }
  };

  std::vector<std::string> vertices;
  std::vector<std::set<std::string>> vertex_labels;  // parallel to vertices
  std::vector<Edge> edges;                           // sorted, no duplicates

  static LabelledGraph over(std::vector<std::string> vertex_names) {
    LabelledGraph g;
    std::sort(vertex_names.begin(), vertex_names.end());
    vertex_names.erase(std::unique(vertex_names.begin(), vertex_names.end()),
                       vertex_names.end());
    g.vertices = std::move(vertex_names);
    g.vertex_labels.resize(g.vertices.size());
    return g;
  }

  int vertex_index(const std::string& name) const {
    auto it = std::lower_bound(vertices.begin(), vertices.end(), name);
    if (it == vertices.end() || *it != name) return -1;
    return static_cast<int>(it - vertices.begin());
  }

  void add_label(const std::string& vertex, const std::string& label) {
    int i = vertex_index(vertex);
    if (i < 0) throw DglError(ErrorKind::Validation, "unknown vertex '" + vertex + "'");
    vertex_labels[i].insert(label);
  }

  void add_edge(const std::string& src, const std::string& label, const std::string& dst) {
    int s = vertex_index(src), d = vertex_index(dst);
    if (s < 0 || d < 0)
      throw DglError(ErrorKind::Validation, "edge endpoint outside the vertex set");
    Edge e{s, label, d};
    auto it = std::lower_bound(edges.begin(), edges.end(), e);
    if (it == edges.end() || !(*it == e)) edges.insert(it, e);
  }

  /// Deterministic cache key: sorted atom list, sorted node list, target
  /// tuple appended by the caller.
  std::string canonical_key() const {
    std::string key;
    std::vector<std::string> atoms;
    for (size_t v = 0; v < vertices.size(); ++v)
      for (const std::string& l : vertex_labels[v]) atoms.push_back(l + "(" + vertices[v] + ")");
    for (const Edge& e : edges)
      atoms.push_back(e.label + "(" + vertices[e.src] + "," + vertices[e.dst] + ")");
    std::sort(atoms.begin(), atoms.end());
    for (const std::string& a : atoms) key += a + ";";
    key += "|";
    for (const std::string& v : vertices) key += v + ";";
    return key;
  }
};

}  // namespace dgl
