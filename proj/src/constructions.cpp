#include "dropdist/constructions.hpp"

#include <algorithm>
#include <stdexcept>

namespace dropdist {

namespace {

ModelParams fixed_linear_model(const std::vector<NodePair>& in_edges, const std::vector<double>& weights, std::size_t n) {
  ModelConfig c;
  c.arch = Arch::gcn;
  c.layers = 1;
  c.hidden_base = 2;
  c.residual = false;
  c.in_dim = 2;
  c.out_dim = 2;
  ModelParams m = init_model(c);
  // identity weight, zero bias
  m.tensors[0].values = {1.0, 0.0, 0.0, 1.0};
  std::fill(m.tensors[1].values.begin(), m.tensors[1].values.end(), 0.0);
  m.set_requires_grad(false);
  WeightedEdges w;
  w.index.num_nodes = n;
  for (auto [u, v] : in_edges) {
    w.index.src.push_back(u);
    w.index.dst.push_back(v);
  }
  w.weights = Tensor({weights.size()}, weights);
  m.fixed_propagation = std::move(w);
  return m;
}

}  // namespace

Prop1Construction generate_prop1_graph(std::size_t num_roots, double p, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("generate_prop1_graph: eps must be positive");
  if (!(p > eps)) throw std::invalid_argument("generate_prop1_graph: requires p > eps");
  if (num_roots == 0) throw std::invalid_argument("generate_prop1_graph: need at least one root");

  const std::size_t n = 3 * num_roots;
  std::vector<NodePair> pairs;
  Tensor x = Tensor::zeros(n, 2);
  std::vector<int> labels(n);
  SplitMasks masks{std::vector<bool>(n), std::vector<bool>(n), std::vector<bool>(n)};
  std::vector<NodePair> in_edges;
  std::vector<double> wf, wg;
  Prop1Construction out;

  for (std::size_t i = 0; i < num_roots; ++i) {
    const std::size_t r = 3 * i, a = r + 1, b = r + 2;
    out.roots.push_back(r);
    pairs.push_back({r, a});
    pairs.push_back({r, b});
    // Leaves share one feature vector with distinct entries, so argmax never ties.
    double hi = 1.0 + 0.1 * static_cast<double>(i % 5), lo = 0.3;
    if (i % 2 == 1) std::swap(hi, lo);
    for (std::size_t leaf : {a, b}) {
      x.at(leaf, 0) = hi;
      x.at(leaf, 1) = lo;
      labels[leaf] = 1;
      masks.train[leaf] = true;
    }
    x.at(r, 0) = 0.2;
    x.at(r, 1) = 0.7;
    labels[r] = hi > lo ? 0 : 1;
    masks.test[r] = true;

    in_edges.push_back({a, r});
    wf.push_back(p);
    wg.push_back(eps);
    in_edges.push_back({b, r});
    wf.push_back(eps);
    wg.push_back(p);
    in_edges.push_back({r, a});
    wf.push_back(1.0);
    wg.push_back(1.0);
    in_edges.push_back({r, b});
    wf.push_back(1.0);
    wg.push_back(1.0);
  }
  out.graph = make_graph(n, std::move(pairs), std::move(x), 2, std::move(labels));
  out.graph.masks = std::move(masks);
  out.f = fixed_linear_model(in_edges, wf, n);
  out.g = fixed_linear_model(in_edges, wg, n);
  return out;
}

}  // namespace dropdist
