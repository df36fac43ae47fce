#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dgl/diagnostics.hpp"
#include "dgl/engine.hpp"
#include "dgl/params.hpp"
#include "dgl/parser.hpp"
#include "dgl/rng.hpp"

namespace dgl {

struct TrainingExample {
  Atom query;
  double target = 1.0;
  double weight = 1.0;
};

enum class Optimizer { Sgd, Adam };

struct FitOptions {
  int epochs = 100;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::Adam;
  int batch_size = 0;  // 0 = full batch
  double clip_norm = 10.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
};

namespace detail {

constexpr double kClampEps = 1e-7;

inline double clamped_log(double x) {
  return std::log(std::min(1.0 - kClampEps, std::max(kClampEps, x)));
}

inline double bce(double p, double target) {
  return -(target * clamped_log(p) + (1.0 - target) * clamped_log(1.0 - p));
}

/// d bce / d p, exact for the clamped expression (zero where the clamp
/// saturates the logarithm's argument).
inline double bce_grad(double p, double target) {
  double g = 0.0;
  if (p > kClampEps && p < 1.0 - kClampEps) g -= target / p;
  double q = 1.0 - p;
  if (q > kClampEps && q < 1.0 - kClampEps) g += (1.0 - target) / q;
  return g;
}

}  // namespace detail

/// Joint training of fact logits and network weights against query-level
/// supervision. Owns the engine so query plans persist across epochs.
class Trainer {
public:
  Trainer(const Program& validated, EngineOptions opts = {})
      : engine_(validated, opts) {}

  Engine& engine() { return engine_; }

  /// Weighted mean binary cross-entropy between marginals and targets,
  /// normalized by example count so weights scale contributions linearly.
  double loss(const std::vector<TrainingExample>& batch, const ParamStore& store) {
    if (batch.empty()) return 0.0;
    EvalCache cache(engine_.options().use_cache);
    double total = 0.0;
    for (const TrainingExample& ex : batch) {
      QueryPlan& plan = engine_.plan_for(ex.query);
      Evaluation eval = engine_.evaluate(plan, store, false, cache);
      total += ex.weight * detail::bce(eval.p_query, ex.target);
    }
    return total / static_cast<double>(batch.size());
  }

  /// Exact gradient of loss() over every ParamStore entry, chained through
  /// the world-sum, the networks, and the fact logits.
  std::pair<ParamStore, double> grad(const std::vector<TrainingExample>& batch,
                                     const ParamStore& store) {
    ParamStore grads = zero_like(engine_.grounding().program, store);
    if (batch.empty()) return {grads, 0.0};
    EvalCache cache(engine_.options().use_cache);
    double total = 0.0;
    double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const TrainingExample& ex : batch) {
      QueryPlan& plan = engine_.plan_for(ex.query);
      Evaluation eval = engine_.evaluate(plan, store, true, cache);
      total += ex.weight * detail::bce(eval.p_query, ex.target);
      double chain = ex.weight * inv_n * detail::bce_grad(eval.p_query, ex.target);
      if (chain != 0.0)
        engine_.accumulate_gradients(plan, eval, chain, store, cache, grads);
    }
    return {grads, total * inv_n};
  }

  /// First-order optimization, deterministic given the seed. Aborts with a
  /// diagnostic naming the epoch if the loss stops being finite.
  std::pair<ParamStore, TrainReport> fit(const std::vector<TrainingExample>& train,
                                         const ParamStore& initial, const FitOptions& opts) {
    ParamStore store = initial;
    TrainReport report;
    std::vector<double*> theta = flatten(store);

    ParamStore m_state = zero_like(engine_.grounding().program, store);
    ParamStore v_state = zero_like(engine_.grounding().program, store);
    std::vector<double*> m_flat = flatten(m_state);
    std::vector<double*> v_flat = flatten(v_state);
    long long step = 0;

    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < train.size(); ++i) order[i] = i;
    Rng rng(opts.seed ^ 0x7261696e65724cULL);

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
      auto started = std::chrono::steady_clock::now();
      double epoch_loss = 0.0;
      double epoch_norm = 0.0;
      size_t batches = 0;

      size_t bs = opts.batch_size > 0 ? static_cast<size_t>(opts.batch_size) : train.size();
      if (opts.batch_size > 0) rng.shuffle(order);

      for (size_t begin = 0; begin < train.size(); begin += bs) {
        size_t end = std::min(train.size(), begin + bs);
        std::vector<TrainingExample> batch;
        batch.reserve(end - begin);
        for (size_t i = begin; i < end; ++i) batch.push_back(train[order[i]]);

        auto [grads, batch_loss] = grad(batch, store);
        epoch_loss += batch_loss * static_cast<double>(batch.size());
        std::vector<double*> gflat = flatten(grads);

        double norm = 0.0;
        for (double* g : gflat) norm += *g * *g;
        norm = std::sqrt(norm);
        epoch_norm = std::max(epoch_norm, norm);
        if (norm > opts.clip_norm && norm > 0.0) {
          double scale = opts.clip_norm / norm;
          for (double* g : gflat) *g *= scale;
        }

        ++step;
        if (opts.optimizer == Optimizer::Sgd) {
          for (size_t i = 0; i < theta.size(); ++i)
            *theta[i] -= opts.learning_rate * *gflat[i];
        } else {
          double b1 = opts.adam_beta1, b2 = opts.adam_beta2;
          double corr1 = 1.0 - std::pow(b1, static_cast<double>(step));
          double corr2 = 1.0 - std::pow(b2, static_cast<double>(step));
          for (size_t i = 0; i < theta.size(); ++i) {
            double g = *gflat[i];
            *m_flat[i] = b1 * *m_flat[i] + (1.0 - b1) * g;
            *v_flat[i] = b2 * *v_flat[i] + (1.0 - b2) * g * g;
            double mhat = *m_flat[i] / corr1;
            double vhat = *v_flat[i] / corr2;
            *theta[i] -= opts.learning_rate * mhat / (std::sqrt(vhat) + opts.adam_eps);
          }
        }
        ++batches;
      }

      epoch_loss /= static_cast<double>(std::max<size_t>(1, train.size()));
      if (!std::isfinite(epoch_loss) || !store.all_finite())
        throw DglError(ErrorKind::Numeric,
                       "non-finite loss or parameters at epoch " + std::to_string(epoch));

      EpochStats stats;
      stats.epoch = epoch;
      stats.loss = epoch_loss;
      stats.grad_norm = epoch_norm;
      stats.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      report.epochs.push_back(stats);
    }
    return {store, report};
  }

  /// Stable flattening of every learnable scalar (map order is fixed once the
  /// store is built, so the same store always flattens identically).
  static std::vector<double*> flatten(ParamStore& store) {
    std::vector<double*> out;
    store.for_each_scalar([&](double& v) { out.push_back(&v); });
    return out;
  }

private:
  Engine engine_;
};

// Spec-level convenience wrappers (one-shot engines).

inline double loss(const std::vector<TrainingExample>& batch, const Program& validated,
                   const ParamStore& store, EngineOptions opts = {}) {
  Trainer t(validated, opts);
  return t.loss(batch, store);
}

inline std::pair<ParamStore, double> grad(const std::vector<TrainingExample>& batch,
                                          const Program& validated, const ParamStore& store,
                                          EngineOptions opts = {}) {
  Trainer t(validated, opts);
  return t.grad(batch, store);
}

inline std::pair<ParamStore, TrainReport> fit(const std::vector<TrainingExample>& train,
                                              const Program& validated,
                                              const ParamStore& initial, const FitOptions& opts,
                                              EngineOptions eopts = {}) {
  Trainer t(validated, eopts);
  return t.fit(train, initial, opts);
}

// ---- training data CSV ------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  return out + "\"";
}

}  // namespace detail

/// Reads `query,target,weight` rows; the query column is DSL atom syntax.
inline std::vector<TrainingExample> load_training_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DglError(ErrorKind::Io, "cannot read '" + path + "'");
  std::vector<TrainingExample> out;
  std::string line;
  bool first = true;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (first) {
      first = false;
      if (!fields.empty() && fields[0] == "query") continue;  // header
    }
    if (fields.size() < 2)
      throw DglError(ErrorKind::Data, "line " + std::to_string(lineno) + ": expected query,target[,weight]");
    TrainingExample ex;
    try {
      ex.query = parse_atom(fields[0]);
    } catch (const DglError& e) {
      throw DglError(ErrorKind::Data,
                     "line " + std::to_string(lineno) + ": bad query: " + e.what());
    }
    ex.target = std::stod(fields[1]);
    if (fields.size() > 2 && !fields[2].empty()) ex.weight = std::stod(fields[2]);
    if (ex.target < 0.0 || ex.target > 1.0)
      throw DglError(ErrorKind::Data,
                     "line " + std::to_string(lineno) + ": target outside [0,1]");
    if (ex.weight <= 0.0)
      throw DglError(ErrorKind::Data, "line " + std::to_string(lineno) + ": weight must be positive");
    out.push_back(std::move(ex));
  }
  return out;
}

inline void save_training_csv(const std::vector<TrainingExample>& examples,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DglError(ErrorKind::Io, "cannot write '" + path + "'");
  out << "query,target,weight\n";
  for (const TrainingExample& ex : examples)
    out << detail::csv_quote(ex.query.text()) << "," << detail::format_double(ex.target) << ","
        << detail::format_double(ex.weight) << "\n";
}

}  // namespace dgl
