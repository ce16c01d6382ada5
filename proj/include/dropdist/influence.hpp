#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dropdist/graph.hpp"
#include "dropdist/model.hpp"

namespace dropdist {

struct InfluenceDistribution {
  std::size_t root = 0;
  std::vector<std::size_t> context;
  std::vector<double> mass;
  bool degenerate = false;  // every raw score was zero
};

/// Raw influence I(root, j) for every one-hop neighbor j of every requested
/// root, from the final logits.
struct InfluenceTable {
  std::size_t n = 0;
  std::vector<std::size_t> roots;
  std::vector<std::vector<std::size_t>> context;  // aligned with roots
  std::vector<std::vector<double>> raw;           // aligned with context
};

/// I(i, j) = sum_a sum_b |d z_ia / d x_jb| over the one-hop neighbors of
/// `root`, one backward pass per output class. Throws when `root` has no
/// neighbors.
std::vector<double> influence_scores(const ModelParams& params, const Graph& g, std::size_t root);

/// Raw influences for many roots off a single forward pass. Roots with no
/// neighbors appear with an empty context.
InfluenceTable influence_table(const ModelParams& params, const Graph& g, std::span<const std::size_t> roots);

InfluenceDistribution influence_distribution(std::size_t root, std::vector<std::size_t> context,
                                             std::span<const double> raw);

/// |a - b| / (0.5 (|a| + |b|)), defined as 0 when a = b = 0.
double smape(double a, double b);

struct InfluenceReport {
  double id_scalar = 0.0;
  std::vector<std::optional<double>> per_node;  // length n; set for evaluated roots
  std::vector<std::size_t> skipped;
};

/// Mean over roots of the mean SMAPE over each root's context. Roots whose
/// context is empty or whose raw influences are all zero under either model
/// are skipped. Throws when every root is skipped.
InfluenceReport influence_difference(const InfluenceTable& f, const InfluenceTable& g);

/// Convenience: evaluates both models on `roots` (all nodes when empty).
InfluenceReport influence_difference(const ModelParams& f, const ModelParams& g, const Graph& graph,
                                     std::span<const std::size_t> roots = {});

/// Uniform sample of `k` items of `candidates` without replacement, in
/// ascending order.
std::vector<std::size_t> sample_subset(std::span<const std::size_t> candidates, std::size_t k, std::uint64_t seed);

std::string report_to_json(const InfluenceReport& r);

}  // namespace dropdist
