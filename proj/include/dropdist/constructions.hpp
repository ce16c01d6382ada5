#pragma once

#include <vector>

#include "dropdist/graph.hpp"
#include "dropdist/model.hpp"

namespace dropdist {

/// Graph where every root has exactly two leaf neighbors with identical
/// features, and two fixed one-layer linear models that weight those leaves
/// (p, eps) and (eps, p) respectively. Both models produce identical outputs
/// on every node while relying on different neighbors.
struct Prop1Construction {
  Graph graph;
  ModelParams f;
  ModelParams g;
  std::vector<std::size_t> roots;
};

/// Requires p > eps > 0. Roots form the test split, leaves the train split.
Prop1Construction generate_prop1_graph(std::size_t num_roots, double p, double eps);

}  // namespace dropdist
