#include "dropdist/distill.hpp"

#include <chrono>
#include <cmath>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "dropdist/metrics.hpp"
#include "dropdist/optim.hpp"

namespace dropdist {

std::string to_string(Method m) {
  switch (m) {
    case Method::student: return "student";
    case Method::student_dropedge: return "student+dropedge";
    case Method::kd: return "kd";
    case Method::kd_dropedge: return "kd+dropedge";
    case Method::dropdistillation: return "dropdistillation";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (Method m : {Method::student, Method::student_dropedge, Method::kd, Method::kd_dropedge, Method::dropdistillation})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown method '" + s + "'");
}

bool needs_teacher(Method m) { return m == Method::kd || m == Method::kd_dropedge || m == Method::dropdistillation; }

void TrainConfig::validate() const {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("TrainConfig: alpha must lie in [0,1]");
  if (dropedge_rate < 0.0 || dropedge_rate > 1.0 || dd_p_star < 0.0 || dd_p_star > 1.0)
    throw std::invalid_argument("TrainConfig: rates must lie in [0,1]");
  if (!(temperature > 0.0)) throw std::invalid_argument("TrainConfig: temperature must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
  if ((method == Method::student_dropedge || method == Method::kd_dropedge) && dropedge_rate == 0.0)
    throw std::invalid_argument("TrainConfig: " + to_string(method) + " needs a positive dropedge_rate");
}

std::string TrainConfig::cell_label() const {
  std::ostringstream os;
  os << to_string(method);
  if (needs_teacher(method)) os << " alpha=" << alpha;
  if (dropedge_rate > 0.0) os << " dropedge=" << dropedge_rate;
  if (method == Method::dropdistillation) os << " dd_iters=" << dd_iterations << " p*=" << dd_p_star;
  return os.str();
}

// ---------------------------------------------------------------------------
// losses

namespace {

Tensor sigmoid_tensor(const Tensor& x, double tau) {
  Tensor out(x.shape, std::vector<double>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.values[i] / tau;
    out.values[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return out;
}

Var supervised_loss(Var logits, const Graph& g, std::span<const std::size_t> nodes) {
  return g.multilabel() ? bce_with_logits(logits, g.multihot, nodes) : cross_entropy(logits, g.labels, nodes);
}

}  // namespace

Var kd_loss(Var student_logits, const Tensor& teacher_logits, const Graph& g, std::span<const std::size_t> nodes,
            double alpha, double tau) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("kd_loss: alpha must lie in [0,1]");
  if (!(tau > 0.0)) throw std::invalid_argument("kd_loss: temperature must be positive");
  if (teacher_logits.shape != student_logits.shape()) throw std::invalid_argument("kd_loss: logit shapes differ");
  if (alpha == 1.0) return supervised_loss(student_logits, g, nodes);

  Var scaled = tau == 1.0 ? student_logits : scale(student_logits, 1.0 / tau);
  Var match = g.multilabel() ? binary_kl_to_sigmoid(scaled, sigmoid_tensor(teacher_logits, tau), nodes)
                             : kl_to_softmax(scaled, softmax_rows(teacher_logits, tau), nodes);
  if (tau != 1.0) match = scale(match, tau * tau);
  if (alpha == 0.0) return match;
  return add(scale(supervised_loss(student_logits, g, nodes), alpha), scale(match, 1.0 - alpha));
}

Var dd_loss(Tape& tape, ModelParams& student, const ModelParams& teacher, const Graph& g, const EdgeDropMask& mask) {
  const Tensor& target = tape.own(logits(teacher, g, &mask));
  const WeightedEdges& edges = tape.own(model_propagation(student, g, &mask));
  auto pv = bind_params(tape, student, true);
  const LayerEdges le{&edges.index, tape.constant(edges.weights)};
  Var out = forward(tape, student.config, pv, tape.constant(g.features), std::span<const LayerEdges>(&le, 1));
  return mse(out, tape.constant(target));
}

double score(const Tensor& logits, const Graph& g, std::span<const std::size_t> nodes) {
  if (g.multilabel()) return micro_f1(predict_multihot(logits), g.multihot, nodes);
  return accuracy(predict_classes(logits), g.labels, nodes);
}

// ---------------------------------------------------------------------------
// training loop

namespace {

constexpr std::uint64_t kRngSalt = 0x9e3779b97f4a7c15ull;

// Counts supervised-label reads per phase.
struct LabelAudit {
  int phase = 2;
  std::size_t reads[2] = {0, 0};
  void touch() { ++reads[phase - 1]; }
};

}  // namespace

TrainResult train(const ModelParams* teacher, const ModelConfig& student_config, const Graph& g,
                  const SplitMasks& splits, const TrainConfig& cfg) {
  cfg.validate();
  splits.validate(g.n);
  if (needs_teacher(cfg.method) && !teacher)
    throw std::invalid_argument("train: method " + to_string(cfg.method) + " requires a teacher");
  if (teacher && (teacher->config.in_dim != student_config.in_dim || teacher->config.out_dim != student_config.out_dim))
    throw std::invalid_argument("train: teacher and student dimensions differ");
  const auto t0 = std::chrono::steady_clock::now();

  const auto train_nodes = splits.train_nodes();
  const auto val_nodes = splits.val_nodes();
  const auto test_nodes = splits.test_nodes();
  const auto& eval_nodes = val_nodes.empty() ? train_nodes : val_nodes;

  ModelParams params = init_model(student_config);
  std::mt19937_64 rng(cfg.seed ^ kRngSalt);
  const WeightedEdges clean = propagation_edges(g, student_config.arch);
  const bool uses_kd = needs_teacher(cfg.method);
  const bool uses_dropedge = cfg.dropedge_rate > 0.0;
  Tensor teacher_clean;
  if (uses_kd) teacher_clean = logits(*teacher, g);

  TrainResult result;
  LabelAudit audit;
  AdamState adam;
  adam.lr = cfg.lr;
  auto ptrs = params.pointers();

  auto clean_logits = [&](const ModelParams& p) {
    Tape tape;
    auto pv = bind_constants(tape, p);
    const LayerEdges le{&clean.index, tape.constant(clean.weights)};
    return forward(tape, p.config, pv, tape.constant(g.features), std::span<const LayerEdges>(&le, 1)).to_tensor();
  };

  auto guarded = [&](auto&& fn, std::size_t step) {
    try {
      return fn();
    } catch (const std::domain_error& e) {
      throw std::runtime_error("train: " + cfg.cell_label() + " diverged at step " + std::to_string(step) + " (" +
                               e.what() + ")");
    }
  };

  // Phase 1: label-free matching under shared edge drops.
  std::size_t step = 0;
  if (cfg.method == Method::dropdistillation) {
    audit.phase = 1;
    for (std::size_t it = 0; it < cfg.dd_iterations; ++it, ++step) {
      const EdgeDropMask mask = drop_edges(g, cfg.dd_p_star, rng());
      TraceRow row{step, 1, 0.0, 0.0};
      guarded(
          [&] {
            Tape tape;
            Var loss = dd_loss(tape, params, *teacher, g, mask);
            row.train_loss = loss.item();
            tape.backward(loss);
            adam_step(ptrs, adam);
            zero_grads(ptrs);
            return 0;
          },
          step);
      row.val_score = score(clean_logits(params), g, eval_nodes);
      result.trace.push_back(row);
    }
    adam = AdamState{};
    adam.lr = cfg.lr;
  }

  // Phase 2: supervised or KD objective with early stopping.
  audit.phase = 2;
  double best_val = -1.0;
  std::size_t best_step = step;
  result.best = params;
  for (std::size_t local = 0;; ++local, ++step) {
    std::vector<WeightedEdges> layer_edges;
    if (uses_dropedge) {
      for (std::size_t l = 0; l < student_config.layers; ++l) {
        const EdgeDropMask m = drop_edges(g, cfg.dropedge_rate, rng());
        layer_edges.push_back(propagation_edges(g, student_config.arch, &m));
      }
    }

    TraceRow row{step, 2, 0.0, 0.0};
    Tape tape;
    auto pv = bind_params(tape, params, true);
    Var x = tape.constant(g.features);
    std::vector<LayerEdges> le;
    if (uses_dropedge) {
      for (const auto& e : layer_edges) le.push_back({&e.index, tape.constant(e.weights)});
    } else {
      le.push_back({&clean.index, tape.constant(clean.weights)});
    }
    Var out = guarded([&] { return forward(tape, student_config, pv, x, le); }, step);
    const Tensor current = uses_dropedge ? clean_logits(params) : out.to_tensor();
    row.val_score = score(current, g, eval_nodes);
    if (row.val_score > best_val) {
      best_val = row.val_score;
      best_step = step;
      result.best = params;
    }
    if (local >= cfg.max_steps || step - best_step >= cfg.patience) {
      break;
    }

    Var loss = guarded(
        [&] {
          audit.touch();
          return uses_kd ? kd_loss(out, teacher_clean, g, train_nodes, cfg.alpha, cfg.temperature)
                         : supervised_loss(out, g, train_nodes);
        },
        step);
    row.train_loss = loss.item();
    tape.backward(loss);
    adam_step(ptrs, adam);
    zero_grads(ptrs);
    result.trace.push_back(row);
  }

  result.best.set_requires_grad(false);
  result.best_step = best_step;
  result.steps_run = step;
  const Tensor best_logits = clean_logits(result.best);
  result.train_score = score(best_logits, g, train_nodes);
  result.val_score = best_val;
  result.test_score = test_nodes.empty() ? 0.0 : score(best_logits, g, test_nodes);
  result.phase1_label_reads = audit.reads[0];
  result.phase2_label_reads = audit.reads[1];
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::string train_result_to_json(const TrainResult& r) {
  nlohmann::json j;
  j["best_step"] = r.best_step;
  j["steps_run"] = r.steps_run;
  j["train_score"] = r.train_score;
  j["val_score"] = r.val_score;
  j["test_score"] = r.test_score;
  j["phase1_label_reads"] = r.phase1_label_reads;
  j["checkpoint_hash"] = checkpoint_hash(r.best);
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& t : r.trace) trace.push_back({t.step, t.phase, t.train_loss, t.val_score});
  j["trace"] = std::move(trace);
  return j.dump();
}

std::string trace_to_csv(const TrainResult& r) {
  std::ostringstream os;
  os.precision(17);
  os << "step,phase,train_loss,val_score\n";
  for (const auto& t : r.trace) os << t.step << ',' << t.phase << ',' << t.train_loss << ',' << t.val_score << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// grid search

std::vector<TrainConfig> expand_grid(Method method, const TrainConfig& base, const GridSpec& grid) {
  std::vector<TrainConfig> cells;
  TrainConfig c = base;
  c.method = method;
  switch (method) {
    case Method::student:
      c.dropedge_rate = 0.0;
      cells.push_back(c);
      break;
    case Method::student_dropedge:
      for (double r : grid.dropedge_rates) {
        c.dropedge_rate = r;
        cells.push_back(c);
      }
      break;
    case Method::kd:
    case Method::kd_dropedge:
      // KD is gridded with DropEdge off plus each rate; kd+dropedge only with rates.
      for (double a : grid.alphas) {
        c.alpha = a;
        if (method == Method::kd) {
          c.dropedge_rate = 0.0;
          cells.push_back(c);
        } else {
          for (double r : grid.dropedge_rates) {
            c.dropedge_rate = r;
            cells.push_back(c);
          }
        }
      }
      break;
    case Method::dropdistillation:
      for (auto it : grid.dd_iterations)
        for (double a : grid.alphas) {
          c.dd_iterations = it;
          c.alpha = a;
          c.dropedge_rate = 0.0;
          cells.push_back(c);
          for (double r : grid.dropedge_rates) {
            c.dropedge_rate = r;
            cells.push_back(c);
          }
        }
      break;
  }
  return cells;
}

GridOutcome grid_search(std::span<const TrainConfig> cells, const ModelParams* teacher, const ModelConfig& student_config,
                        const Graph& g, const SplitMasks& splits, std::span<const std::uint64_t> seeds) {
  if (cells.empty()) throw std::invalid_argument("grid_search: empty grid");
  if (seeds.empty()) throw std::invalid_argument("grid_search: no seeds");
  const auto val_nodes = splits.val_nodes().empty() ? splits.train_nodes() : splits.val_nodes();
  // Predictions per run; the teacher, when present, sits at the end.
  struct Preds {
    std::vector<int> classes;
    Tensor multihot;
  };
  auto predict = [&](const Tensor& l) {
    Preds p;
    if (g.multilabel()) p.multihot = predict_multihot(l);
    else p.classes = predict_classes(l);
    return p;
  };
  auto churn_of = [&](const Preds& a, const Preds& b) {
    return g.multilabel() ? churn(a.multihot, b.multihot, val_nodes) : churn(a.classes, b.classes, val_nodes);
  };
  std::optional<Preds> teacher_preds;
  if (teacher) teacher_preds = predict(logits(*teacher, g));

  GridOutcome out;
  for (const auto& cell : cells) {
    CellOutcome co;
    co.config = cell;
    std::vector<double> vals;
    std::vector<Preds> run_preds;
    for (auto seed : seeds) {
      ModelConfig sc = student_config;
      sc.seed = seed;
      TrainConfig tc = cell;
      tc.seed = seed;
      co.runs.push_back(train(teacher, sc, g, splits, tc));
      vals.push_back(co.runs.back().val_score);
      run_preds.push_back(predict(logits(co.runs.back().best, g)));
    }
    co.mean_val = mean_of(vals);
    std::vector<double> churns;
    if (teacher_preds) {
      for (const auto& p : run_preds) churns.push_back(churn_of(p, *teacher_preds));
    } else {
      for (std::size_t a = 0; a < run_preds.size(); ++a)
        for (std::size_t b = a + 1; b < run_preds.size(); ++b) churns.push_back(churn_of(run_preds[a], run_preds[b]));
    }
    co.mean_churn = churns.empty() ? 0.0 : mean_of(churns);
    out.cells.push_back(std::move(co));
  }
  for (std::size_t k = 1; k < out.cells.size(); ++k) {
    const auto& c = out.cells[k];
    const auto& b = out.cells[out.best];
    if (c.mean_val > b.mean_val || (c.mean_val == b.mean_val && c.mean_churn < b.mean_churn)) out.best = k;
  }
  return out;
}

}  // namespace dropdist
