#pragma once

#include <span>
#include <vector>

#include "dropdist/graph.hpp"
#include "dropdist/tensor.hpp"

namespace dropdist {

/// Fraction of `nodes` on which the two predictions differ.
double churn(std::span<const int> preds_f, std::span<const int> preds_g, std::span<const std::size_t> nodes);
/// Multi-label form: a node is unstable when its predicted label sets differ.
double churn(const Tensor& multihot_f, const Tensor& multihot_g, std::span<const std::size_t> nodes);

/// s_i = 1 when both models predict the same class for node i, for i in `nodes`.
std::vector<double> stability_vector(std::span<const int> preds_f, std::span<const int> preds_g,
                                     std::span<const std::size_t> nodes);
std::vector<double> stability_vector(const Tensor& multihot_f, const Tensor& multihot_g,
                                     std::span<const std::size_t> nodes);

/// Sample Pearson correlation. Throws std::domain_error when either input
/// has zero variance.
double pearson_corr(std::span<const double> x, std::span<const double> y);

/// Entropy (natural log) of the label ratios among the one-hop neighbors of
/// `root`. Throws when `root` has no neighbors.
double label_entropy(const Graph& g, std::size_t root);
/// Same, given precomputed adjacency.
double label_entropy(const Graph& g, const std::vector<std::vector<std::size_t>>& adj, std::size_t root);

double accuracy(std::span<const int> preds, std::span<const int> labels, std::span<const std::size_t> nodes);
/// 2TP / (2TP + FP + FN) pooled over nodes and classes.
double micro_f1(const Tensor& pred_multihot, const Tensor& label_multihot, std::span<const std::size_t> nodes);

double mean_of(std::span<const double> v);
/// Population standard deviation.
double std_of(std::span<const double> v);

}  // namespace dropdist
