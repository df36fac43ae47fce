#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "dgl/trainer.hpp"
#include "dgl/validate.hpp"
#include "support.hpp"

using namespace dgl;

namespace {

Atom atom(const std::string& s) { return parse_atom(s); }

}  // namespace

TEST_CASE("perfect fits have (clamped) zero loss") {
  Program p = validate(parse("f(a)."));
  ParamStore store;
  double l = loss({{atom("f(a)"), 1.0, 1.0}}, p, store);
  CHECK(l <= 1e-6);
}

TEST_CASE("an uninformative marginal costs ln two") {
  Program p = validate(parse("0.5::f(a)."));
  ParamStore store;
  CHECK(loss({{atom("f(a)"), 1.0, 1.0}}, p, store) == Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("batch loss is the weighted mean") {
  Program p = validate(parse("0.5::f(a). 0.25::g(b)."));
  ParamStore store;
  double la = loss({{atom("f(a)"), 1.0, 1.0}}, p, store);
  double lb = loss({{atom("g(b)"), 0.0, 1.0}}, p, store);
  double both = loss({{atom("f(a)"), 1.0, 3.0}, {atom("g(b)"), 0.0, 1.0}}, p, store);
  CHECK(both == Catch::Approx((3.0 * la + lb) / 2.0).margin(1e-12));
}

TEST_CASE("gradients match finite differences on random mixed programs") {
  Rng rng(101);
  int programs_checked = 0;
  for (int trial = 0; trial < 30 && programs_checked < 12; ++trial) {
    Rng sub = rng.split(trial);
    auto rp = test_support::random_program(sub);
    Program p = validate(parse(rp.source));
    bool learnable = false;
    for (const auto& f : p.prob_facts) learnable = learnable || f.learnable;
    if (p.gnn_schemas.empty() && !learnable && p.model_configs.empty()) continue;
    if (rp.derivable.empty()) continue;

    ParamStore store = init_param_store(p, 1000 + trial);
    std::vector<TrainingExample> batch;
    for (size_t i = 0; i < rp.derivable.size() && batch.size() < 3; i += 2)
      batch.push_back({rp.derivable[i], i % 2 ? 0.2 : 0.9, 1.0 + 0.5 * (i % 3)});

    Trainer trainer(p);
    auto [grads, l0] = trainer.grad(batch, store);
    (void)l0;
    std::vector<double*> theta = Trainer::flatten(store);
    std::vector<double*> gflat = Trainer::flatten(grads);
    REQUIRE(theta.size() == gflat.size());
    if (theta.empty()) continue;
    ++programs_checked;

    const double eps = 1e-4;
    for (size_t i = 0; i < theta.size(); ++i) {
      double keep = *theta[i];
      *theta[i] = keep + eps;
      double up = trainer.loss(batch, store);
      *theta[i] = keep - eps;
      double down = trainer.loss(batch, store);
      *theta[i] = keep;
      double fd = (up - down) / (2 * eps);
      double scale = std::max({1e-6, std::abs(fd), std::abs(*gflat[i])});
      if (std::abs(fd) < 1e-12 && std::abs(*gflat[i]) < 1e-12) continue;
      CHECK(std::abs(fd - *gflat[i]) / scale < 1e-3);
    }
  }
  CHECK(programs_checked >= 8);
}

TEST_CASE("models outside a query's reach get zero gradient") {
  Program p = validate(parse(
      "0.5::e(a,b). t(0.5)::w(a).\n"
      "#model(m_used, layers=1, hidden=3, readout=graph).\n"
      "#model(m_dead, layers=1, hidden=3, readout=graph).\n"
      "gnn(m_used, [e(a,b)], []) :: live.\n"
      "gnn(m_dead, [e(a,b)], []) :: dead.\n"
      "goal :- live, w(a).\n"));
  ParamStore store = init_param_store(p, 5);
  auto [grads, l] = grad({{atom("goal"), 1.0, 1.0}}, p, store);
  (void)l;
  bool dead_zero = true;
  grads.models.at("m_dead").for_each_scalar([&](double v) { dead_zero = dead_zero && v == 0.0; });
  CHECK(dead_zero);
  bool used_nonzero = false;
  grads.models.at("m_used").for_each_scalar([&](double v) { used_nonzero = used_nonzero || v != 0.0; });
  CHECK(used_nonzero);
  CHECK(grads.fact_logits.at("w(a)") != 0.0);
}

TEST_CASE("doubling an example's weight doubles its gradient contribution") {
  Program p = validate(parse("t(0.4)::f(a). t(0.6)::g(b)."));
  ParamStore store = init_param_store(p, 0);
  auto [g1, l1] = grad({{atom("f(a)"), 1.0, 1.0}, {atom("g(b)"), 0.0, 1.0}}, p, store);
  auto [g2, l2] = grad({{atom("f(a)"), 1.0, 2.0}, {atom("g(b)"), 0.0, 1.0}}, p, store);
  (void)l1;
  (void)l2;
  CHECK(g2.fact_logits.at("f(a)") == Catch::Approx(2.0 * g1.fact_logits.at("f(a)")).margin(1e-15));
  CHECK(g2.fact_logits.at("g(b)") == g1.fact_logits.at("g(b)"));
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  Program p = validate(parse(
      "t(0.3)::f(a).\n"
      "#model(m, layers=1, hidden=2, readout=graph).\n"
      "gnn(m, [f(a)], []) :: g1.\n"));
  ParamStore store = init_param_store(p, 9);
  FitOptions opts;
  opts.epochs = 5;
  opts.learning_rate = 0.0;
  auto [after, report] = fit({{atom("g1"), 1.0, 1.0}}, p, store, opts);
  (void)report;
  bool identical = true;
  store.zip_scalars(after, [&](double& a, double& b) { identical = identical && a == b; });
  CHECK(identical);
}

TEST_CASE("a single learnable fact descends monotonically under sgd") {
  Program p = validate(parse("t(0.5)::f(a)."));
  ParamStore store = init_param_store(p, 0);
  FitOptions opts;
  opts.epochs = 10;
  opts.learning_rate = 0.05;
  opts.optimizer = Optimizer::Sgd;
  auto [after, report] = fit({{atom("f(a)"), 0.9, 1.0}}, p, store, opts);
  (void)after;
  for (size_t i = 1; i < report.epochs.size(); ++i)
    CHECK(report.epochs[i].loss <= report.epochs[i - 1].loss + 1e-12);
}

TEST_CASE("training is bit-deterministic given the seed") {
  Rng rng(313);
  auto rp = test_support::random_program(rng);
  Program p = validate(parse(rp.source));
  REQUIRE_FALSE(rp.derivable.empty());
  std::vector<TrainingExample> batch = {{rp.derivable[0], 1.0, 1.0}};
  if (rp.derivable.size() > 1) batch.push_back({rp.derivable[1], 0.0, 1.0});

  FitOptions opts;
  opts.epochs = 12;
  opts.learning_rate = 0.05;
  opts.seed = 77;
  opts.batch_size = 1;

  auto run = [&] {
    ParamStore store = init_param_store(p, opts.seed);
    Trainer t(p);
    return t.fit(batch, store, opts);
  };
  auto [s1, r1] = run();
  auto [s2, r2] = run();
  bool identical = true;
  s1.zip_scalars(s2, [&](double& a, double& b) { identical = identical && a == b; });
  CHECK(identical);
  REQUIRE(r1.epochs.size() == r2.epochs.size());
  for (size_t i = 0; i < r1.epochs.size(); ++i) {
    CHECK(r1.epochs[i].loss == r2.epochs[i].loss);
    CHECK(r1.epochs[i].grad_norm == r2.epochs[i].grad_norm);
  }
}

TEST_CASE("learned fact probabilities stay strictly inside the unit interval") {
  Program p = validate(parse("t(0.5)::f(a)."));
  ParamStore store = init_param_store(p, 0);
  FitOptions opts;
  opts.epochs = 400;
  opts.learning_rate = 0.5;
  auto [after, report] = fit({{atom("f(a)"), 1.0, 1.0}}, p, store, opts);
  (void)report;
  double prob = after.fact_prob("f(a)");
  CHECK(prob > 0.0);
  CHECK(prob < 1.0);
  CHECK(prob > 0.999);
}

TEST_CASE("the loss bottoms out at the clamp floor on a saturable example set") {
  Program p = validate(parse("t(0.5)::f(a)."));
  ParamStore store = init_param_store(p, 0);

  // at the optimum the clamp inside the logarithm floors the loss
  store.fact_logits.at("f(a)") = 40.0;
  double floor = -std::log(1.0 - 1e-7);
  CHECK(loss({{atom("f(a)"), 1.0, 1.0}}, p, store) <= floor * 1.01);

  // and optimization heads there
  store.fact_logits.at("f(a)") = 0.0;
  FitOptions opts;
  opts.epochs = 600;
  opts.learning_rate = 0.1;
  auto [after, report] = fit({{atom("f(a)"), 1.0, 1.0}}, p, store, opts);
  (void)after;
  CHECK(report.epochs.back().loss < 5e-3);
  CHECK(report.epochs.back().loss >= floor);
}

TEST_CASE("diverging training aborts with the epoch in the message") {
  Program p = validate(parse(
      "t(0.5)::f(a).\n"
      "#model(m, layers=2, hidden=4, readout=graph).\n"
      "gnn(m, [f(a)], []) :: g1.\n"));
  ParamStore store = init_param_store(p, 0);
  FitOptions opts;
  opts.epochs = 50;
  opts.learning_rate = 1e200;
  opts.clip_norm = 1e300;
  opts.optimizer = Optimizer::Sgd;
  try {
    fit({{atom("g1"), 1.0, 1.0}}, p, store, opts);
    SUCCEED("saturated without overflowing");
  } catch (const DglError& e) {
    CHECK(e.kind == ErrorKind::Numeric);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("training csv files round-trip with quoted atoms") {
  namespace fs = std::filesystem;
  std::vector<TrainingExample> examples = {
      {atom("grandfatherof(p1,p2)"), 1.0, 1.0},
      {atom("tower"), 0.0, 2.5},
  };
  fs::path path = fs::temp_directory_path() / "dgl_trainer_test.csv";
  save_training_csv(examples, path.string());
  auto back = load_training_csv(path.string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].query == examples[0].query);
  CHECK(back[0].target == 1.0);
  CHECK(back[1].query == examples[1].query);
  CHECK(back[1].weight == 2.5);
  fs::remove(path);
}

TEST_CASE("malformed training rows are diagnosed with their line") {
  namespace fs = std::filesystem;
  fs::path path = fs::temp_directory_path() / "dgl_trainer_bad.csv";
  {
    std::ofstream out(path);
    out << "query,target,weight\nf(a),2.5,1\n";
  }
  try {
    load_training_csv(path.string());
    FAIL("expected a data error");
  } catch (const DglError& e) {
    CHECK(e.kind == ErrorKind::Data);
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
  fs::remove(path);
}
