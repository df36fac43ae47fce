#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dgl/graph.hpp"

namespace dgl {

namespace detail {

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Classic 1-WL colour refinement on directed multi-relational graphs.
/// Colours are content-addressed, so histograms are comparable across graphs.
/// The initial colour is the vertex label set; each round hashes the current
/// colour together with the sorted multiset of (direction, edge label,
/// neighbour colour). Stops after `rounds` rounds or at stabilization.
inline std::map<std::uint64_t, int> wl1_refine(const LabelledGraph& g, int rounds) {
  size_t n = g.vertices.size();
  std::vector<std::uint64_t> colour(n);
  for (size_t v = 0; v < n; ++v) {
    std::string sig = "init:";
    for (const std::string& l : g.vertex_labels[v]) sig += l + ",";
    colour[v] = detail::fnv1a(sig);
  }

  auto partition_of = [&] {
    std::map<std::uint64_t, std::vector<size_t>> part;
    for (size_t v = 0; v < n; ++v) part[colour[v]].push_back(v);
    std::vector<std::vector<size_t>> classes;
    for (auto& [c, vs] : part) classes.push_back(vs);
    std::sort(classes.begin(), classes.end());
    return classes;
  };

  auto previous = partition_of();
  for (int round = 0; round < rounds; ++round) {
    std::vector<std::vector<std::string>> neighbourhood(n);
    for (const auto& e : g.edges) {
      neighbourhood[e.dst].push_back("in:" + e.label + ":" + std::to_string(colour[e.src]));
      neighbourhood[e.src].push_back("out:" + e.label + ":" + std::to_string(colour[e.dst]));
    }
    std::vector<std::uint64_t> next(n);
    for (size_t v = 0; v < n; ++v) {
      std::sort(neighbourhood[v].begin(), neighbourhood[v].end());
      std::string sig = std::to_string(colour[v]) + "#";
      for (const std::string& item : neighbourhood[v]) sig += item + ";";
      next[v] = detail::fnv1a(sig);
    }
    colour = std::move(next);
    auto current = partition_of();
    if (current == previous) break;  // stable partition
    previous = std::move(current);
  }

  std::map<std::uint64_t, int> histogram;
  for (size_t v = 0; v < n; ++v) histogram[colour[v]] += 1;
  return histogram;
}

}  // namespace dgl
