#include "dropdist/harness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "dropdist/gradcheck.hpp"
#include "dropdist/influence.hpp"
#include "dropdist/metrics.hpp"

namespace dropdist {

using nlohmann::json;

// ---------------------------------------------------------------------------
// configuration

std::vector<std::uint64_t> ExperimentConfig::seed_values() const {
  if (!seed_list.empty()) return seed_list;
  std::vector<std::uint64_t> s(seeds);
  for (std::size_t i = 0; i < seeds; ++i) s[i] = i;
  return s;
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.dataset.kind = "sbm";
  c.dataset.sbm.blocks = {100, 100, 100};
  c.dataset.sbm.p_in = 0.06;
  c.dataset.sbm.p_out = 0.01;
  c.dataset.sbm.feature_dim = 16;
  c.dataset.sbm.feature_noise = 1.0;
  c.dataset.sbm.seed = 7;

  c.model.arch = Arch::gat;
  c.model.layers = 3;
  c.model.hidden_base = 16;
  c.model.q = 1;
  c.model.heads = 2;

  c.teacher = c.model;
  c.teacher.q = 4;
  c.teacher.heads = 4;
  c.student = c.model;
  c.student.q = 1;
  c.student.heads = 1;
  return c;
}

namespace {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_model(const json& j, ModelConfig& m) {
  if (j.contains("arch")) m.arch = parse_arch(j.at("arch").get<std::string>());
  read_opt(j, "layers", m.layers);
  read_opt(j, "hidden_base", m.hidden_base);
  read_opt(j, "q", m.q);
  read_opt(j, "heads", m.heads);
  read_opt(j, "residual", m.residual);
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ExperimentConfig c = default_config();
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    auto& ds = c.dataset;
    read_opt(d, "kind", ds.kind);
    read_opt(d, "name", ds.name);
    read_opt(d, "blocks", ds.sbm.blocks);
    read_opt(d, "p_in", ds.sbm.p_in);
    read_opt(d, "p_out", ds.sbm.p_out);
    read_opt(d, "feature_dim", ds.sbm.feature_dim);
    read_opt(d, "feature_noise", ds.sbm.feature_noise);
    read_opt(d, "seed", ds.sbm.seed);
    read_opt(d, "extra_label_p", ds.extra_label_p);
    read_opt(d, "content", ds.content_path);
    read_opt(d, "cites", ds.cites_path);
    read_opt(d, "p", ds.prop1_p);
    read_opt(d, "eps", ds.prop1_eps);
    read_opt(d, "roots", ds.prop1_roots);
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    read_opt(s, "train", c.split.train);
    read_opt(s, "val", c.split.val);
    read_opt(s, "test", c.split.test);
    read_opt(s, "seed", c.split_seed);
  }
  if (j.contains("model")) {
    read_model(j.at("model"), c.model);
    // teacher/student inherit unspecified architecture fields from the base model
    c.teacher.arch = c.student.arch = c.model.arch;
    c.teacher.layers = c.student.layers = c.model.layers;
    c.teacher.hidden_base = c.student.hidden_base = c.model.hidden_base;
    c.teacher.residual = c.student.residual = c.model.residual;
  }
  if (j.contains("teacher")) read_model(j.at("teacher"), c.teacher);
  if (j.contains("student")) read_model(j.at("student"), c.student);
  if (j.contains("train")) {
    const auto& t = j.at("train");
    read_opt(t, "lr", c.train.lr);
    read_opt(t, "patience", c.train.patience);
    read_opt(t, "max_steps", c.train.max_steps);
    read_opt(t, "alpha", c.train.alpha);
    read_opt(t, "temperature", c.train.temperature);
    read_opt(t, "dropedge_rate", c.train.dropedge_rate);
    read_opt(t, "dd_iterations", c.train.dd_iterations);
    read_opt(t, "dd_p_star", c.train.dd_p_star);
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    read_opt(g, "alphas", c.grid.alphas);
    read_opt(g, "dropedge_rates", c.grid.dropedge_rates);
    read_opt(g, "dd_iterations", c.grid.dd_iterations);
  }
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
  }
  read_opt(j, "seeds", c.seeds);
  read_opt(j, "seed_list", c.seed_list);
  read_opt(j, "teacher_seed", c.teacher_seed);
  read_opt(j, "teacher_checkpoint", c.teacher_checkpoint);
  read_opt(j, "min_teacher_val", c.min_teacher_val);
  read_opt(j, "influence_sample", c.influence_sample);
  read_opt(j, "out", c.out_dir);
  read_opt(j, "format", c.format);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_config: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  ExperimentConfig c = config_from_json(ss.str());
  // relative dataset paths resolve against the config file's directory
  const auto base = path.parent_path();
  for (std::string* p : {&c.dataset.content_path, &c.dataset.cites_path, &c.teacher_checkpoint}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).string();
  }
  return c;
}

Dataset load_dataset(const ExperimentConfig& config) {
  const auto& ds = config.dataset;
  Dataset out;
  if (ds.kind == "sbm") {
    out.graph = generate_sbm(ds.sbm);
    out.name = "SBM";
  } else if (ds.kind == "multilabel_sbm") {
    out.graph = generate_multilabel_sbm(ds.sbm, ds.extra_label_p);
    out.name = "SBM-multilabel";
  } else if (ds.kind == "planetoid") {
    if (!std::filesystem::exists(ds.content_path) || !std::filesystem::exists(ds.cites_path))
      throw std::runtime_error("load_dataset: planetoid files not found");
    auto pd = load_planetoid(ds.content_path, ds.cites_path);
    if (pd.skipped_citations > 0)
      std::cerr << "warning: skipped " << pd.skipped_citations << " citations with unknown ids\n";
    out.graph = std::move(pd.graph);
    out.name = "Citeseer";
  } else if (ds.kind == "prop1") {
    out.prop1 = generate_prop1_graph(ds.prop1_roots, ds.prop1_p, ds.prop1_eps);
    out.graph = out.prop1->graph;
    out.name = "Star counterexample";
  } else {
    throw std::invalid_argument("load_dataset: unknown dataset kind '" + ds.kind + "'");
  }
  if (!ds.name.empty()) out.name = ds.name;
  if (!out.graph.masks) out.graph.masks = random_split(out.graph.n, config.split, config.split_seed);
  return out;
}

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) return {};
  return {mean_of(values), std_of(values), values.size()};
}

// ---------------------------------------------------------------------------
// axiom study

namespace {

ModelConfig with_dims(ModelConfig m, const Graph& g, std::uint64_t seed) {
  m.in_dim = g.feature_dim();
  m.out_dim = g.num_classes;
  m.seed = seed;
  return m;
}

std::optional<double> corr_or_skip(const std::vector<double>& x, const std::vector<double>& y, const char* what) {
  try {
    return pearson_corr(x, y);
  } catch (const std::domain_error&) {
    std::cerr << "warning: " << what << " undefined (zero variance); pair excluded\n";
    return std::nullopt;
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

}  // namespace

AxiomResult run_axiom_study(const ExperimentConfig& config, const Dataset& data) {
  const Graph& g = data.graph;
  if (g.multilabel()) throw std::invalid_argument("run_axiom_study: requires a single-label dataset");
  const auto seeds = config.seed_values();
  if (seeds.size() < 2) throw std::invalid_argument("run_axiom_study: need at least two seeds");
  const auto test = g.masks->test_nodes();
  if (test.empty()) throw std::invalid_argument("run_axiom_study: empty test split");

  AxiomResult res;
  res.dataset = data.name;
  res.seeds = seeds;

  const auto adj = g.neighbors();
  std::vector<std::size_t> h_nodes;
  std::vector<double> h_values;
  for (auto v : test) {
    if (adj[v].empty()) continue;
    h_nodes.push_back(v);
    h_values.push_back(label_entropy(g, adj, v));
  }
  std::vector<std::size_t> roots = test;
  if (config.influence_sample > 0) roots = sample_subset(test, config.influence_sample, config.split_seed + 17);

  // Per-seed models and their influence tables.
  std::vector<std::vector<int>> preds;
  std::vector<InfluenceTable> tables;
  if (data.prop1) {
    for (std::size_t k = 0; k < seeds.size(); ++k) res.scores.push_back(score(logits(data.prop1->f, g), g, test));
  } else {
    for (auto s : seeds) {
      TrainConfig tc = config.train;
      tc.method = Method::student;
      tc.dropedge_rate = 0.0;
      tc.seed = s;
      TrainResult tr = train(nullptr, with_dims(config.model, g, s), g, *g.masks, tc);
      res.scores.push_back(tr.test_score);
      preds.push_back(predict_classes(logits(tr.best, g)));
      tables.push_back(influence_table(tr.best, g, roots));
    }
  }

  for (std::size_t a = 0; a < seeds.size(); ++a) {
    for (std::size_t b = a + 1; b < seeds.size(); ++b) {
      PairMetrics pm;
      pm.seed_a = seeds[a];
      pm.seed_b = seeds[b];
      std::vector<int> pa, pb;
      InfluenceReport rep;
      if (data.prop1) {
        pa = predict_classes(logits(data.prop1->f, g));
        pb = predict_classes(logits(data.prop1->g, g));
        rep = influence_difference(data.prop1->f, data.prop1->g, g, roots);
      } else {
        pa = preds[a];
        pb = preds[b];
        rep = influence_difference(tables[a], tables[b]);
      }
      pm.churn = churn(pa, pb, test);
      pm.id = rep.id_scalar;

      std::vector<double> ids, s_id;
      for (auto v : roots) {
        if (!rep.per_node[v]) continue;
        ids.push_back(*rep.per_node[v]);
        s_id.push_back(pa[v] == pb[v] ? 1.0 : 0.0);
      }
      pm.corr_id_s = corr_or_skip(ids, s_id, "corr(id,s)");
      pm.corr_h_s = corr_or_skip(h_values, stability_vector(pa, pb, h_nodes), "corr(h,s)");
      res.pairs.push_back(pm);
    }
  }

  std::vector<double> churns, ids, cis, chs;
  for (const auto& p : res.pairs) {
    churns.push_back(p.churn);
    ids.push_back(p.id);
    if (p.corr_id_s) cis.push_back(*p.corr_id_s);
    if (p.corr_h_s) chs.push_back(*p.corr_h_s);
  }
  res.score = summarize(res.scores);
  res.churn = summarize(churns);
  res.id = summarize(ids);
  res.corr_id_s = summarize(cis);
  res.corr_h_s = summarize(chs);
  return res;
}

// ---------------------------------------------------------------------------
// distillation benchmark

DistillResult run_distill_benchmark(const ExperimentConfig& config, const Dataset& data) {
  const Graph& g = data.graph;
  const auto seeds = config.seed_values();
  if (seeds.empty()) throw std::invalid_argument("run_distill_benchmark: no seeds");
  const SplitMasks& splits = *g.masks;
  const auto val = splits.val_nodes().empty() ? splits.train_nodes() : splits.val_nodes();
  const auto test = splits.test_nodes();

  ModelParams teacher;
  if (!config.teacher_checkpoint.empty()) {
    teacher = load_checkpoint(config.teacher_checkpoint);
  } else {
    TrainConfig tc = config.train;
    tc.method = Method::student;
    tc.dropedge_rate = 0.0;
    tc.seed = config.teacher_seed;
    teacher = train(nullptr, with_dims(config.teacher, g, config.teacher_seed), g, splits, tc).best;
  }
  teacher.set_requires_grad(false);
  std::cerr << "distill: teacher ready (" << teacher.parameter_count() << " params)\n";
  const Tensor teacher_logits = logits(teacher, g);

  DistillResult res;
  res.dataset = data.name;
  res.teacher = teacher;
  res.teacher_hash = checkpoint_hash(teacher);
  res.teacher_params = teacher.parameter_count();
  res.teacher_val = score(teacher_logits, g, val);
  res.teacher_test = test.empty() ? 0.0 : score(teacher_logits, g, test);
  if (res.teacher_val < config.min_teacher_val) {
    throw std::runtime_error("run_distill_benchmark: teacher validation score " + std::to_string(res.teacher_val) +
                             " below required " + std::to_string(config.min_teacher_val));
  }
  const ModelConfig student = with_dims(config.student, g, 0);
  res.student_params = parameter_count(student);

  for (Method m : config.methods) {
    const auto cells = expand_grid(m, config.train, config.grid);
    std::cerr << "distill: " << to_string(m) << ", " << cells.size() << " cells x " << seeds.size() << " seeds\n";
    GridOutcome go = grid_search(cells, needs_teacher(m) ? &teacher : nullptr, student, g, splits, seeds);
    CellOutcome& best = go.cells[go.best];
    MethodResult mr;
    mr.method = m;
    mr.best_cell = best.config;
    mr.cells_evaluated = go.cells.size();
    mr.seeds.assign(seeds.begin(), seeds.end());
    for (auto& run : best.runs) {
      const Tensor l = logits(run.best, g);
      mr.scores.push_back(run.test_score);
      if (g.multilabel()) mr.churns.push_back(churn(predict_multihot(l), predict_multihot(teacher_logits), test));
      else mr.churns.push_back(churn(predict_classes(l), predict_classes(teacher_logits), test));
    }
    mr.runs = std::move(best.runs);
    mr.score = summarize(mr.scores);
    mr.churn = summarize(mr.churns);
    res.methods.push_back(std::move(mr));
  }
  return res;
}

// ---------------------------------------------------------------------------
// construction and perturbation verifiers

Prop1Verification verify_prop1(double p, double eps, std::size_t num_roots) {
  if (!(p > 3.0 * eps)) throw std::invalid_argument("verify_prop1: requires p > 3 eps");
  const auto c = generate_prop1_graph(num_roots, p, eps);
  Prop1Verification v;
  v.churn = churn(predict_classes(logits(c.f, c.graph)), predict_classes(logits(c.g, c.graph)), c.roots);
  v.id = influence_difference(c.f, c.g, c.graph, c.roots).id_scalar;
  v.closed_form = 2.0 * (p - eps) / (p + eps);
  v.pass = v.churn == 0.0 && std::abs(v.id - v.closed_form) < 1e-9;
  return v;
}

namespace {

void require_linear(const ModelParams& m, const char* who) {
  if (m.config.arch != Arch::gcn || m.config.layers != 1 || m.fixed_propagation)
    throw std::invalid_argument(std::string("verify_prop2: ") + who +
                                " must be a one-layer linear aggregation model (higher-order terms would not vanish)");
}

}  // namespace

Prop2Verification verify_prop2(const Graph& g, const ModelParams& teacher, const ModelParams& student,
                               std::size_t samples, double p, std::uint64_t seed) {
  require_linear(teacher, "teacher");
  require_linear(student, "student");
  if (samples < 2) throw std::invalid_argument("verify_prop2: need at least two samples");
  const WeightedEdges base = gcn_normalize(g);
  const PerturbationSampler sampler(base, p);

  auto gap = [&](std::span<const double> delta) {
    Tensor w = base.weights;
    for (std::size_t e = 0; e < w.size(); ++e) w.values[e] += delta[e];
    Tape tape;
    const LayerEdges le{&base.index, tape.constant(std::move(w))};
    Var x = tape.constant(g.features);
    auto t = forward(tape, teacher.config, bind_constants(tape, teacher), x, std::span<const LayerEdges>(&le, 1));
    auto s = forward(tape, student.config, bind_constants(tape, student), x, std::span<const LayerEdges>(&le, 1));
    double acc = 0.0;
    auto tv = t.values(), sv = s.values();
    for (std::size_t i = 0; i < tv.size(); ++i) acc += (tv[i] - sv[i]) * (tv[i] - sv[i]);
    return acc;
  };

  Prop2Verification v;
  const std::vector<double> zero(base.size(), 0.0);
  v.base_term = gap(zero);

  // Jacobian of (T - S) with respect to every edge weight, one row per output.
  {
    Tensor w(base.weights.shape, base.weights.values, true);
    Tape tape;
    const LayerEdges le{&base.index, tape.param(w)};
    Var x = tape.constant(g.features);
    Var d = sub(forward(tape, teacher.config, bind_constants(tape, teacher), x, std::span<const LayerEdges>(&le, 1)),
                forward(tape, student.config, bind_constants(tape, student), x, std::span<const LayerEdges>(&le, 1)));
    std::vector<double> seed_vec(d.size(), 0.0);
    double term = 0.0;
    for (std::size_t k = 0; k < d.size(); ++k) {
      w.grad.assign(w.size(), 0.0);
      seed_vec[k] = 1.0;
      tape.backward(d, seed_vec);
      seed_vec[k] = 0.0;
      for (const auto& grp : sampler.groups()) {
        double acc = 0.0;
        for (auto e : grp) acc += w.grad[e] * base.weights.values[e];
        term += acc * acc;
      }
    }
    v.gradient_term = term * sampler.factor_variance();
  }
  v.rhs = v.base_term + v.gradient_term;

  std::mt19937_64 rng(seed);
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double y = gap(sampler.sample(rng));
    const double delta = y - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (y - mean);
  }
  v.lhs = mean;
  v.lhs_stderr = std::sqrt(m2 / static_cast<double>(samples - 1) / static_cast<double>(samples));
  const double diff = std::abs(v.lhs - v.rhs);
  if (v.lhs_stderr > 0.0) {
    v.diff_in_stderr_units = diff / v.lhs_stderr;
    v.pass = v.diff_in_stderr_units < 4.0;
  } else {
    v.diff_in_stderr_units = diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    v.pass = diff <= 1e-12 * std::max(1.0, std::abs(v.rhs));
  }
  return v;
}

Prop2Verification verify_prop2_random(std::size_t n, std::size_t samples, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<NodePair> pairs;
  for (std::size_t i = 0; i + 1 < n; ++i) pairs.push_back({i, i + 1});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 2; j < n; ++j)
      if (u(rng) < 0.4) pairs.push_back({i, j});
  const std::size_t d = 3, c = 2;
  Tensor x = Tensor::zeros(n, d);
  for (auto& v : x.values) v = normal(rng);
  Graph g = make_graph(n, std::move(pairs), std::move(x), c, std::vector<int>(n, 0));
  ModelConfig mc;
  mc.arch = Arch::gcn;
  mc.layers = 1;
  mc.residual = false;
  mc.in_dim = d;
  mc.out_dim = c;
  mc.seed = seed * 2 + 1;
  ModelParams t = init_model(mc);
  mc.seed = seed * 2 + 2;
  ModelParams s = init_model(mc);
  return verify_prop2(g, t, s, samples, p, seed + 99);
}

// ---------------------------------------------------------------------------
// gradient checks

std::vector<GradcheckCase> run_gradcheck(std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  std::vector<GradcheckCase> out;
  for (Arch arch : {Arch::gcn, Arch::gat}) {
    const std::size_t n = 10 + static_cast<std::size_t>(rng() % 21);
    SbmParams sp;
    sp.blocks = {n / 2, n - n / 2};
    sp.p_in = 0.4;
    sp.p_out = 0.1;
    sp.feature_dim = 4;
    sp.feature_noise = 1.0;
    sp.seed = rng();
    const Graph g = generate_sbm(sp);
    ModelConfig mc;
    mc.arch = arch;
    mc.layers = 3;
    mc.hidden_base = arch == Arch::gat ? 4 : 8;
    mc.heads = 2;
    mc.residual = true;
    mc.in_dim = g.feature_dim();
    mc.out_dim = g.num_classes;
    mc.seed = rng();
    ModelParams params = init_model(mc);
    const WeightedEdges edges = propagation_edges(g, arch);

    Tensor mix = Tensor::zeros(n, g.num_classes);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : mix.values) v = normal(rng);
    std::vector<std::size_t> nodes;
    for (std::size_t i = 0; i < n; i += 2) nodes.push_back(i);

    // Objective touching every logit plus the supervised loss.
    auto objective = [&](Tape& tape, std::vector<Var> pv, Var x) {
      const LayerEdges le{&edges.index, tape.constant(edges.weights)};
      Var out = forward(tape, mc, pv, x, std::span<const LayerEdges>(&le, 1));
      return add(sum(mul(out, tape.constant(mix))), cross_entropy(out, g.labels, nodes));
    };

    double worst = 0.0;
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
      ScalarFn fn = [&, k](Tape& tape, Var v) {
        auto pv = bind_constants(tape, params);
        pv[k] = v;
        return objective(tape, pv, tape.constant(g.features));
      };
      worst = std::max(worst, finite_diff_check(fn, params.tensors[k], h).max_rel_error);
    }
    out.push_back({to_string(arch) + " parameters", worst});
    ScalarFn fx = [&](Tape& tape, Var v) { return objective(tape, bind_constants(tape, params), v); };
    out.push_back({to_string(arch) + " features", finite_diff_check(fx, g.features, h).max_rel_error});
  }
  return out;
}

// ---------------------------------------------------------------------------
// tables

TableFormat parse_format(const std::string& s) {
  if (s == "csv") return TableFormat::csv;
  if (s == "markdown" || s == "md") return TableFormat::markdown;
  throw std::invalid_argument("unknown table format '" + s + "'");
}

std::string format_cell(const Summary& s, int decimals, double factor) {
  if (s.count == 0) return "-";
  char buf[64];
  double m = s.mean * factor, sd = s.std * factor;
  // avoid printing "-0.0"
  if (std::abs(m) < 0.5 * std::pow(10.0, -decimals)) m = 0.0;
  std::snprintf(buf, sizeof buf, "%.*f±%.*f", decimals, m, decimals, sd);
  return buf;
}

std::optional<std::pair<double, double>> parse_cell(const std::string& cell) {
  if (cell == "-") return std::nullopt;
  const std::string pm = "±";
  const auto pos = cell.find(pm);
  if (pos == std::string::npos) throw std::invalid_argument("parse_cell: missing ± in '" + cell + "'");
  return std::make_pair(std::stod(cell.substr(0, pos)), std::stod(cell.substr(pos + pm.size())));
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

std::string render(const Table& t, TableFormat f) {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    if (f == TableFormat::csv) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << csv_field(cells[i]);
      os << '\n';
    } else {
      os << '|';
      for (const auto& c : cells) os << ' ' << c << " |";
      os << '\n';
    }
  };
  line(t.header);
  if (f == TableFormat::markdown) {
    os << '|';
    for (std::size_t i = 0; i < t.header.size(); ++i) os << " --- |";
    os << '\n';
  }
  for (const auto& r : t.rows) line(r);
  return os.str();
}

Table parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> lines;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (ch == '\n') {
      row.push_back(std::move(field));
      field.clear();
      lines.push_back(std::move(row));
      row.clear();
    } else {
      field += ch;
    }
  }
  if (!field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    lines.push_back(std::move(row));
  }
  Table t;
  if (lines.empty()) return t;
  t.header = std::move(lines.front());
  t.rows.assign(std::make_move_iterator(lines.begin() + 1), std::make_move_iterator(lines.end()));
  return t;
}

Table axiom_table(const std::vector<AxiomResult>& results) {
  if (results.empty()) throw std::invalid_argument("axiom_table: no results");
  Table t;
  t.header = {"Dataset", "Acc/F1 (%)", "C (%)", "ID (%)", "corr(id,s)", "corr(h,s)"};
  for (const auto& r : results) {
    t.rows.push_back({r.dataset, format_cell(r.score, 1, 100.0), format_cell(r.churn, 1, 100.0),
                      format_cell(r.id, 1, 100.0), format_cell(r.corr_id_s, 2), format_cell(r.corr_h_s, 2)});
  }
  return t;
}

Table distill_accuracy_table(const DistillResult& r) {
  if (r.methods.empty()) throw std::invalid_argument("distill_accuracy_table: no methods");
  Table t;
  t.header = {"Method", r.dataset + " Acc/F1 (%)", "Best config", "Teacher"};
  for (const auto& m : r.methods)
    t.rows.push_back({to_string(m.method), format_cell(m.score, 1, 100.0), m.best_cell.cell_label(), r.teacher_hash});
  return t;
}

Table distill_churn_table(const DistillResult& r) {
  if (r.methods.empty()) throw std::invalid_argument("distill_churn_table: no methods");
  Table t;
  t.header = {"Method", r.dataset + " C (%)", "Best config", "Teacher"};
  for (const auto& m : r.methods)
    t.rows.push_back({to_string(m.method), format_cell(m.churn, 1, 100.0), m.best_cell.cell_label(), r.teacher_hash});
  return t;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << content;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::string extension(TableFormat f) { return f == TableFormat::csv ? ".csv" : ".md"; }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(); }

}  // namespace

std::vector<std::filesystem::path> write_axiom_outputs(const AxiomResult& r, const std::filesystem::path& out_dir,
                                                       TableFormat f) {
  const auto table_path = out_dir / ("axioms" + extension(f));
  write_file(table_path, render(axiom_table({r}), f));
  json raw;
  raw["dataset"] = r.dataset;
  raw["seeds"] = r.seeds;
  raw["scores"] = r.scores;
  json pairs = json::array();
  for (const auto& p : r.pairs)
    pairs.push_back({{"seed_a", p.seed_a},
                     {"seed_b", p.seed_b},
                     {"churn", p.churn},
                     {"id", p.id},
                     {"corr_id_s", optional_json(p.corr_id_s)},
                     {"corr_h_s", optional_json(p.corr_h_s)}});
  raw["pairs"] = std::move(pairs);
  write_file(out_dir / "axioms_raw.json", raw.dump(2) + "\n");
  return {table_path};
}

std::vector<std::filesystem::path> write_distill_outputs(const DistillResult& r, const std::filesystem::path& out_dir,
                                                         TableFormat f) {
  const auto acc = out_dir / ("distill_accuracy" + extension(f));
  const auto ch = out_dir / ("distill_churn" + extension(f));
  write_file(acc, render(distill_accuracy_table(r), f));
  write_file(ch, render(distill_churn_table(r), f));
  const json teacher = {{"hash", r.teacher_hash},
                        {"params", r.teacher_params},
                        {"student_params", r.student_params},
                        {"val_score", r.teacher_val},
                        {"test_score", r.teacher_test}};
  write_file(out_dir / "teacher.json", teacher.dump(2) + "\n");
  write_file(out_dir / "teacher_checkpoint.json", checkpoint_to_json(r.teacher));
  for (const auto& m : r.methods) {
    for (std::size_t k = 0; k < m.runs.size(); ++k) {
      json j = json::parse(train_result_to_json(m.runs[k]));
      j["method"] = to_string(m.method);
      j["cell"] = m.best_cell.cell_label();
      j["seed"] = m.seeds[k];
      j["teacher_churn"] = m.churns[k];
      j["teacher_hash"] = r.teacher_hash;
      write_file(out_dir / "runs" / to_string(m.method) / (std::to_string(m.seeds[k]) + ".json"), j.dump(2) + "\n");
    }
  }
  return {acc, ch};
}

}  // namespace dropdist
