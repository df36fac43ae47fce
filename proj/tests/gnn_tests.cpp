#include <catch2/catch_amalgamated.hpp>

#include "dgl/experiments.hpp"
#include "dgl/gnn.hpp"
#include "dgl/rng.hpp"
#include "dgl/wl.hpp"

using namespace dgl;

namespace {

GnnConfig make_config(int layers, int hidden, Readout readout, int arity,
                      std::vector<std::string> rels, std::vector<std::string> labels) {
  GnnConfig cfg;
  cfg.model_id = "m";
  cfg.num_layers = layers;
  cfg.hidden_dim = hidden;
  cfg.readout = readout;
  cfg.output_arity = arity;
  cfg.relations = std::move(rels);
  cfg.vertex_labels = std::move(labels);
  return cfg;
}

LabelledGraph from_ugraph(const experiments::UGraph& g) {
  std::vector<std::string> names;
  for (int v = 0; v < g.n; ++v) names.push_back("v" + std::to_string(v));
  LabelledGraph out = LabelledGraph::over(names);
  for (const auto& [u, v] : g.edges) {
    out.add_edge("v" + std::to_string(u), "e", "v" + std::to_string(v));
    out.add_edge("v" + std::to_string(v), "e", "v" + std::to_string(u));
  }
  return out;
}

LabelledGraph random_graph(Rng& rng, const GnnConfig& cfg, int n) {
  std::vector<std::string> names;
  for (int v = 0; v < n; ++v) names.push_back("n" + std::to_string(v));
  LabelledGraph g = LabelledGraph::over(names);
  for (const std::string& rel : cfg.relations)
    for (int u = 0; u < n; ++u)
      for (int v = 0; v < n; ++v)
        if (u != v && rng.bernoulli(0.3)) g.add_edge(names[u], rel, names[v]);
  for (const std::string& label : cfg.vertex_labels)
    for (int v = 0; v < n; ++v)
      if (rng.bernoulli(0.4)) g.add_label(names[v], label);
  return g;
}

}  // namespace

TEST_CASE("feature encoding is multi-hot plus a bias slot") {
  GnnConfig cfg = make_config(1, 2, Readout::Node, 1, {}, {"male", "female"});
  LabelledGraph g = LabelledGraph::over({"a", "b"});
  g.add_label("a", "male");
  auto feats = encode_features(g, cfg);
  CHECK(feats[g.vertex_index("a")] == std::vector<double>{1, 0, 1});
  CHECK(feats[g.vertex_index("b")] == std::vector<double>{0, 0, 1});
}

TEST_CASE("unknown labels are named in the error") {
  GnnConfig cfg = make_config(1, 2, Readout::Node, 1, {}, {"male"});
  LabelledGraph g = LabelledGraph::over({"a"});
  g.add_label("a", "stranger");
  CHECK_THROWS_WITH(encode_features(g, cfg), Catch::Matchers::ContainsSubstring("stranger"));
}

TEST_CASE("zero parameters give sigmoid one half and uniform softmax") {
  GnnConfig cfg = make_config(2, 4, Readout::Node, 1, {"r"}, {});
  LabelledGraph g = LabelledGraph::over({"a", "b"});
  g.add_edge("a", "r", "b");
  ParamTensors zero = zero_params(cfg);
  auto trace = forward(cfg, zero, g, {"a"});
  CHECK(trace.output[0] == 0.5);

  GnnConfig cfg3 = make_config(2, 4, Readout::Graph, 3, {"r"}, {});
  ParamTensors zero3 = zero_params(cfg3);
  auto trace3 = forward(cfg3, zero3, g, {});
  for (double p : trace3.output) CHECK(p == Catch::Approx(1.0 / 3.0).margin(1e-15));
}

TEST_CASE("outputs are probabilities") {
  Rng rng(5);
  GnnConfig cfg = make_config(2, 6, Readout::Graph, 4, {"r", "s"}, {"l"});
  for (int trial = 0; trial < 20; ++trial) {
    Rng sub = rng.split(trial);
    ParamTensors params = init_params(cfg, sub);
    LabelledGraph g = random_graph(sub, cfg, 5);
    auto trace = forward(cfg, params, g, {});
    double total = 0;
    for (double p : trace.output) {
      CHECK(p > 0.0);
      CHECK(p < 1.0);
      total += p;
    }
    CHECK(total == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("missing target vertices are an error") {
  GnnConfig cfg = make_config(1, 2, Readout::Node, 1, {}, {});
  LabelledGraph g = LabelledGraph::over({"a"});
  ParamTensors params = zero_params(cfg);
  CHECK_THROWS_AS(forward(cfg, params, g, {"zz"}), DglError);
}

TEST_CASE("vertex renaming leaves the output unchanged") {
  Rng rng(17);
  GnnConfig cfg = make_config(3, 8, Readout::Node, 1, {"r"}, {"l"});
  for (int trial = 0; trial < 10; ++trial) {
    Rng sub = rng.split(trial);
    ParamTensors params = init_params(cfg, sub);
    LabelledGraph g = random_graph(sub, cfg, 6);

    // rename vertices (targets tracked through the renaming)
    std::map<std::string, std::string> renaming;
    std::vector<int> perm(6);
    for (int i = 0; i < 6; ++i) perm[i] = i;
    sub.shuffle(perm);
    for (int i = 0; i < 6; ++i)
      renaming["n" + std::to_string(i)] = "m" + std::to_string(perm[i]);
    std::vector<std::string> new_names;
    for (const auto& [from, to] : renaming) new_names.push_back(to);
    LabelledGraph h = LabelledGraph::over(new_names);
    for (size_t v = 0; v < g.vertices.size(); ++v)
      for (const std::string& l : g.vertex_labels[v]) h.add_label(renaming[g.vertices[v]], l);
    for (const auto& e : g.edges)
      h.add_edge(renaming[g.vertices[e.src]], e.label, renaming[g.vertices[e.dst]]);

    auto a = forward(cfg, params, g, {"n0"});
    auto b = forward(cfg, params, h, {renaming["n0"]});
    CHECK(a.output[0] == Catch::Approx(b.output[0]).margin(1e-12));
  }
}

TEST_CASE("forward is bit-deterministic") {
  Rng rng(3);
  GnnConfig cfg = make_config(2, 5, Readout::Edge, 1, {"r"}, {});
  ParamTensors params = init_params(cfg, rng);
  LabelledGraph g = random_graph(rng, cfg, 5);
  auto a = forward(cfg, params, g, {"n0", "n1"});
  auto b = forward(cfg, params, g, {"n0", "n1"});
  CHECK(a.output[0] == b.output[0]);
}

TEST_CASE("backward matches central finite differences") {
  Rng rng(29);
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Rng sub = rng.split(trial);
    Readout readout = trial % 3 == 0 ? Readout::Node : trial % 3 == 1 ? Readout::Edge
                                                                      : Readout::Graph;
    int arity = trial % 2 == 0 ? 1 : 3;
    GnnConfig cfg = make_config(1 + trial % 3, 3 + trial % 4, readout, arity, {"r", "s"}, {"l"});
    ParamTensors params = init_params(cfg, sub);
    LabelledGraph g = random_graph(sub, cfg, 4 + trial % 3);
    std::vector<std::string> targets;
    if (readout == Readout::Node) targets = {g.vertices[0]};
    if (readout == Readout::Edge) targets = {g.vertices[0], g.vertices[1]};

    int out_index = trial % arity;
    std::vector<double> upstream(arity, 0.0);
    upstream[out_index] = 1.0;
    auto trace = forward(cfg, params, g, targets);
    ParamTensors grads = backward(cfg, params, g, trace, upstream);

    const double eps = 1e-4;
    std::vector<double*> theta, gflat;
    params.for_each_scalar([&](double& v) { theta.push_back(&v); });
    grads.for_each_scalar([&](double& v) { gflat.push_back(&v); });
    for (size_t i = 0; i < theta.size(); ++i) {
      double keep = *theta[i];
      *theta[i] = keep + eps;
      double up = forward(cfg, params, g, targets).output[out_index];
      *theta[i] = keep - eps;
      double down = forward(cfg, params, g, targets).output[out_index];
      *theta[i] = keep;
      double fd = (up - down) / (2 * eps);
      double scale = std::max({1.0, std::abs(fd), std::abs(*gflat[i])});
      CHECK(std::abs(fd - *gflat[i]) / scale < 1e-4);
      ++checked;
    }
  }
  CHECK(checked > 1000);
}

TEST_CASE("zero upstream gradient zeroes every parameter gradient") {
  Rng rng(31);
  GnnConfig cfg = make_config(2, 4, Readout::Graph, 1, {"r"}, {});
  ParamTensors params = init_params(cfg, rng);
  LabelledGraph g = random_graph(rng, cfg, 4);
  auto trace = forward(cfg, params, g, {});
  ParamTensors grads = backward(cfg, params, g, trace, 0.0);
  grads.for_each_scalar([](double v) { CHECK(v == 0.0); });
}

TEST_CASE("relation weights are dead on edgeless graphs") {
  Rng rng(37);
  GnnConfig cfg = make_config(2, 4, Readout::Graph, 1, {"r"}, {"l"});
  ParamTensors params = init_params(cfg, rng);
  LabelledGraph g = LabelledGraph::over({"a", "b", "c"});
  g.add_label("a", "l");
  auto trace = forward(cfg, params, g, {});
  ParamTensors grads = backward(cfg, params, g, trace, 1.0);
  for (const auto& layer : grads.layers)
    for (const auto& [rel, m] : layer.relation_weights)
      for (double v : m.a) CHECK(v == 0.0);
}

TEST_CASE("parameter snapshots round-trip bit-exactly") {
  Rng rng(41);
  GnnConfig cfg = make_config(2, 5, Readout::Edge, 2, {"on", "next_to"}, {"light"});
  ParamTensors params = init_params(cfg, rng);
  std::string text = params_to_json(params).dump();
  ParamTensors back = params_from_json(nlohmann::ordered_json::parse(text));
  bool equal = true;
  params.zip_scalars(back, [&](double& a, double& b) { equal = equal && a == b; });
  CHECK(equal);
  CHECK(params_to_json(back).dump() == text);
}

// ---- 1-WL refinement -------------------------------------------------------

TEST_CASE("the twin pair refines to identical histograms") {
  LabelledGraph g0 = from_ugraph(experiments::wl_twin_class0());
  LabelledGraph g1 = from_ugraph(experiments::wl_twin_class1());
  CHECK(wl1_refine(g0, 20) == wl1_refine(g1, 20));
}

TEST_CASE("the six-cycle separates from the twins in one round") {
  LabelledGraph g0 = from_ugraph(experiments::wl_twin_class0());
  LabelledGraph g2 = from_ugraph(experiments::six_cycle());
  CHECK(wl1_refine(g0, 1) != wl1_refine(g2, 1));
}

TEST_CASE("a single vertex has one colour") {
  LabelledGraph g = LabelledGraph::over({"a"});
  auto hist = wl1_refine(g, 5);
  REQUIRE(hist.size() == 1);
  CHECK(hist.begin()->second == 1);
}

TEST_CASE("wl-equivalent graphs get equal graph readouts for any parameters") {
  LabelledGraph g0 = from_ugraph(experiments::wl_twin_class0());
  LabelledGraph g1 = from_ugraph(experiments::wl_twin_class1());
  REQUIRE(wl1_refine(g0, 20) == wl1_refine(g1, 20));
  GnnConfig cfg = make_config(3, 8, Readout::Graph, 3, {"e"}, {});
  Rng rng(43);
  for (int draw = 0; draw < 100; ++draw) {
    Rng sub = rng.split(draw);
    ParamTensors params = init_params(cfg, sub);
    auto a = forward(cfg, params, g0, {});
    auto b = forward(cfg, params, g1, {});
    for (int i = 0; i < 3; ++i) CHECK(a.output[i] == Catch::Approx(b.output[i]).margin(1e-9));
  }
}
