// dgl: check, query, train, and experiment driver for DeepGraphLog programs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "dgl/engine.hpp"
#include "dgl/experiments.hpp"
#include "dgl/parser.hpp"
#include "dgl/trainer.hpp"
#include "dgl/validate.hpp"

namespace {

int exit_code_for(const dgl::DglError& e) {
  switch (e.kind) {
    case dgl::ErrorKind::Io:
      return 2;
    case dgl::ErrorKind::CapExceeded:
      return 3;
    default:
      return 1;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dgl::DglError(dgl::ErrorKind::Io, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Parse errors are reported in file:line:col form right here; the empty
// rethrown message tells main not to print a second line.
dgl::Program load_program(const std::string& path) {
  std::string source = read_file(path);
  try {
    return dgl::validate(dgl::parse(source));
  } catch (const dgl::DglError& e) {
    std::cerr << e.diagnostic(path) << "\n";
    throw dgl::DglError(e.kind, "", e.line, e.col);
  }
}

struct QueryArgs {
  std::string file;
  std::string query;
  std::string evidence;
  std::string params_file;
  int cap = 24;
  std::uint64_t seed = 0;
};

int cmd_query(const QueryArgs& args) {
  dgl::Program program = load_program(args.file);
  dgl::EngineOptions opts;
  opts.cap = args.cap;
  dgl::Engine engine(program, opts);

  dgl::ParamStore store = args.params_file.empty()
                              ? dgl::init_param_store(program, args.seed)
                              : dgl::load_store(args.params_file);

  std::vector<dgl::Atom> queries;
  if (!args.query.empty())
    queries.push_back(dgl::parse_atom(args.query));
  else
    queries = program.queries;
  if (queries.empty())
    throw dgl::DglError(dgl::ErrorKind::Data,
                        "no query: pass --query or add query(...) directives");

  std::vector<dgl::Atom> evidence;
  if (!args.evidence.empty())
    evidence.push_back(dgl::parse_atom(args.evidence));
  else
    evidence = program.evidence;

  for (const dgl::Atom& q : queries) {
    if (!q.is_ground())
      throw dgl::DglError(dgl::ErrorKind::UnboundVariable,
                          "query '" + q.text() + "' must be ground");
    dgl::InferenceResult r = evidence.empty() ? engine.marginal(q, store)
                                              : engine.conditional(q, evidence, store);
    std::cout << dgl::result_to_json(q.text(), r).dump() << "\n";
  }
  return 0;
}

struct TrainArgs {
  std::string file;
  std::string data;
  std::string out_dir = ".";
  int epochs = 100;
  double lr = 0.01;
  std::uint64_t seed = 0;
  std::string optimizer = "adam";
  int batch_size = 0;
  int cap = 24;
};

int cmd_train(const TrainArgs& args) {
  namespace fs = std::filesystem;
  dgl::Program program = load_program(args.file);
  std::vector<dgl::TrainingExample> examples = dgl::load_training_csv(args.data);

  dgl::EngineOptions eopts;
  eopts.cap = args.cap;
  dgl::Trainer trainer(program, eopts);
  dgl::ParamStore store = dgl::init_param_store(program, args.seed);

  dgl::FitOptions fopts;
  fopts.epochs = args.epochs;
  fopts.learning_rate = args.lr;
  fopts.seed = args.seed;
  fopts.batch_size = args.batch_size;
  if (args.optimizer == "sgd")
    fopts.optimizer = dgl::Optimizer::Sgd;
  else if (args.optimizer == "adam")
    fopts.optimizer = dgl::Optimizer::Adam;
  else
    throw dgl::DglError(dgl::ErrorKind::Data, "unknown optimizer '" + args.optimizer + "'");

  auto [trained, report] = trainer.fit(examples, store, fopts);

  fs::create_directories(args.out_dir);
  dgl::save_store(trained, (fs::path(args.out_dir) / "params.json").string());
  std::ofstream log(fs::path(args.out_dir) / "log.csv");
  log << "epoch,loss,grad_norm,seconds\n";
  for (const dgl::EpochStats& s : report.epochs)
    log << s.epoch << "," << dgl::detail::format_double(s.loss) << ","
        << dgl::detail::format_double(s.grad_norm) << ","
        << dgl::detail::format_double(s.seconds) << "\n";
  if (!report.epochs.empty())
    std::cerr << "final loss " << report.epochs.back().loss << " after "
              << report.epochs.size() << " epochs\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeepGraphLog engine"};
  app.require_subcommand(1);

  std::string check_file;
  CLI::App* check = app.add_subcommand("check", "parse and validate a program");
  check->add_option("file", check_file, "program file")->required();

  QueryArgs qargs;
  CLI::App* query = app.add_subcommand("query", "answer a marginal or conditional query");
  query->add_option("file", qargs.file, "program file")->required();
  query->add_option("--query", qargs.query, "ground query atom");
  query->add_option("--evidence", qargs.evidence, "ground evidence atom");
  query->add_option("--params", qargs.params_file, "parameter snapshot (params.json)");
  query->add_option("--cap", qargs.cap, "relevant-fact enumeration cap");
  query->add_option("--seed", qargs.seed, "seed for untrained parameters");

  TrainArgs targs;
  CLI::App* train = app.add_subcommand("train", "fit learnable probabilities and networks");
  train->add_option("file", targs.file, "program file")->required();
  train->add_option("--data", targs.data, "training CSV (query,target,weight)")->required();
  train->add_option("--epochs", targs.epochs, "epoch count");
  train->add_option("--lr", targs.lr, "learning rate");
  train->add_option("--seed", targs.seed, "initialization and shuffling seed");
  train->add_option("--out", targs.out_dir, "output directory");
  train->add_option("--optimizer", targs.optimizer, "adam or sgd");
  train->add_option("--batch", targs.batch_size, "minibatch size (0 = full batch)");
  train->add_option("--cap", targs.cap, "relevant-fact enumeration cap");

  std::string exp_name, exp_out = "runs";
  std::uint64_t exp_seed = 0;
  int exp_reps = 1, exp_train = 0, exp_test = 0, exp_epochs = 0;
  CLI::App* experiment = app.add_subcommand("experiment", "run a built-in experiment");
  experiment->add_option("name", exp_name, "e1, e2, e3, or e4")->required();
  experiment->add_option("--seed", exp_seed, "base seed");
  experiment->add_option("--reps", exp_reps, "repetitions (consecutive seeds)");
  experiment->add_option("--out", exp_out, "output directory");
  experiment->add_option("--train-size", exp_train, "override train split size");
  experiment->add_option("--test-size", exp_test, "override test split size");
  experiment->add_option("--epochs", exp_epochs, "override training epochs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (check->parsed()) {
      load_program(check_file);
      return 0;
    }
    if (query->parsed()) return cmd_query(qargs);
    if (train->parsed()) return cmd_train(targs);
    if (experiment->parsed()) {
      if (exp_name != "e1" && exp_name != "e2" && exp_name != "e3" && exp_name != "e4") {
        std::cerr << "error: unknown experiment '" << exp_name << "'\n";
        return 1;
      }
      dgl::experiments::DatasetSpec spec;
      spec.experiment = exp_name;
      spec.seed = exp_seed;
      spec.train_size = exp_train;
      spec.test_size = exp_test;
      spec.epochs = exp_epochs;
      dgl::experiments::run_experiment(spec, exp_reps, exp_out);
      return 0;
    }
  } catch (const dgl::DglError& e) {
    if (e.what()[0] != '\0') std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
