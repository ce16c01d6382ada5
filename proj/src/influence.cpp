#include "dropdist/influence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace dropdist {

InfluenceTable influence_table(const ModelParams& params, const Graph& g, std::span<const std::size_t> roots) {
  const auto adj = g.neighbors();
  const WeightedEdges edges = model_propagation(params, g);
  Tensor x(g.features.shape, g.features.values, true);

  Tape tape;
  auto pv = bind_constants(tape, params);
  Var xv = tape.param(x);
  const LayerEdges le{&edges.index, tape.constant(edges.weights)};
  Var out = forward(tape, params.config, pv, xv, std::span<const LayerEdges>(&le, 1));

  const std::size_t c = out.cols(), d = x.cols();
  InfluenceTable table;
  table.n = g.n;
  std::vector<double> seed(out.size(), 0.0);
  for (std::size_t root : roots) {
    if (root >= g.n) throw std::out_of_range("influence_table: root out of range");
    table.roots.push_back(root);
    table.context.push_back(adj[root]);
    std::vector<double> raw(adj[root].size(), 0.0);
    if (!adj[root].empty()) {
      for (std::size_t a = 0; a < c; ++a) {
        x.grad.assign(x.size(), 0.0);
        seed[root * c + a] = 1.0;
        tape.backward(out, seed);
        seed[root * c + a] = 0.0;
        if (!x.has_grad()) continue;
        for (std::size_t k = 0; k < adj[root].size(); ++k) {
          const double* row = x.grad.data() + adj[root][k] * d;
          for (std::size_t b = 0; b < d; ++b) raw[k] += std::abs(row[b]);
        }
      }
    }
    table.raw.push_back(std::move(raw));
  }
  return table;
}

std::vector<double> influence_scores(const ModelParams& params, const Graph& g, std::size_t root) {
  if (root >= g.n) throw std::out_of_range("influence_scores: root out of range");
  const std::size_t r[] = {root};
  auto t = influence_table(params, g, r);
  if (t.context[0].empty()) throw std::invalid_argument("influence_scores: root has an empty context");
  return t.raw[0];
}

InfluenceDistribution influence_distribution(std::size_t root, std::vector<std::size_t> context,
                                             std::span<const double> raw) {
  if (raw.empty() || raw.size() != context.size())
    throw std::invalid_argument("influence_distribution: need one raw score per context node");
  InfluenceDistribution dist;
  dist.root = root;
  dist.context = std::move(context);
  double total = 0.0;
  for (double v : raw) {
    if (v < 0.0) throw std::invalid_argument("influence_distribution: negative raw influence");
    total += v;
  }
  dist.mass.assign(raw.size(), 0.0);
  if (total == 0.0) {
    dist.degenerate = true;
    return dist;
  }
  for (std::size_t k = 0; k < raw.size(); ++k) dist.mass[k] = raw[k] / total;
  return dist;
}

double smape(double a, double b) {
  if (a < 0.0 || b < 0.0) throw std::invalid_argument("smape: inputs must be non-negative");
  if (a == b) return 0.0;
  return std::abs(a - b) / (0.5 * (std::abs(a) + std::abs(b)));
}

InfluenceReport influence_difference(const InfluenceTable& f, const InfluenceTable& g) {
  if (f.n != g.n || f.roots != g.roots) throw std::invalid_argument("influence_difference: tables cover different roots");
  InfluenceReport rep;
  rep.per_node.assign(f.n, std::nullopt);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < f.roots.size(); ++k) {
    const std::size_t root = f.roots[k];
    if (f.context[k].empty()) {
      rep.skipped.push_back(root);
      continue;
    }
    const auto df = influence_distribution(root, f.context[k], f.raw[k]);
    const auto dg = influence_distribution(root, g.context[k], g.raw[k]);
    if (df.degenerate || dg.degenerate) {
      rep.skipped.push_back(root);
      continue;
    }
    double s = 0.0;
    for (std::size_t j = 0; j < df.mass.size(); ++j) s += smape(df.mass[j], dg.mass[j]);
    const double per_root = s / static_cast<double>(df.mass.size());
    rep.per_node[root] = per_root;
    total += per_root;
    ++used;
  }
  if (used == 0) throw std::invalid_argument("influence_difference: every root was skipped");
  rep.id_scalar = total / static_cast<double>(used);
  return rep;
}

InfluenceReport influence_difference(const ModelParams& f, const ModelParams& g, const Graph& graph,
                                     std::span<const std::size_t> roots) {
  if (f.config.in_dim != g.config.in_dim || f.config.out_dim != g.config.out_dim)
    throw std::invalid_argument("influence_difference: models disagree on graph dimensions");
  std::vector<std::size_t> all;
  if (roots.empty()) {
    all.resize(graph.n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    roots = all;
  }
  return influence_difference(influence_table(f, graph, roots), influence_table(g, graph, roots));
}

std::vector<std::size_t> sample_subset(std::span<const std::size_t> candidates, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> pool(candidates.begin(), candidates.end());
  if (k >= pool.size()) {
    std::sort(pool.begin(), pool.end());
    return pool;
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::string report_to_json(const InfluenceReport& r) {
  nlohmann::json j;
  j["id_scalar"] = r.id_scalar;
  nlohmann::json per = nlohmann::json::array();
  for (const auto& v : r.per_node) per.push_back(v ? nlohmann::json(*v) : nlohmann::json());
  j["per_node"] = std::move(per);
  j["skipped"] = r.skipped;
  return j.dump();
}

}  // namespace dropdist
