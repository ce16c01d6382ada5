#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dropdist/tensor.hpp"

namespace dropdist {

using NodePair = std::pair<std::size_t, std::size_t>;

struct SplitMasks {
  std::vector<bool> train;
  std::vector<bool> val;
  std::vector<bool> test;

  std::vector<std::size_t> train_nodes() const;
  std::vector<std::size_t> val_nodes() const;
  std::vector<std::size_t> test_nodes() const;
  /// Throws std::invalid_argument when lengths differ from n, masks overlap
  /// or train is empty.
  void validate(std::size_t n) const;
};

/// Undirected node-classification graph. Immutable after `make_graph`.
///
/// `undirected` holds each edge once as (u, v) with u < v in sorted order;
/// its index is the edge identity used by EdgeDropMask. `directed` holds
/// both orientations, sorted, with no self-loops.
struct Graph {
  std::size_t n = 0;
  std::vector<NodePair> undirected;
  std::vector<NodePair> directed;
  Tensor features;                 // [n x d]
  std::size_t num_classes = 0;
  std::vector<int> labels;         // single-label; empty when multi-label
  Tensor multihot;                 // [n x c] multi-label targets; empty otherwise
  std::optional<SplitMasks> masks;

  bool multilabel() const { return multihot.size() > 0; }
  std::size_t feature_dim() const { return features.cols(); }
  /// One-hop neighbors of every node, ascending, root excluded.
  std::vector<std::vector<std::size_t>> neighbors() const;
};

/// Builds a graph from undirected pairs (either orientation; duplicates and
/// reversed duplicates are an error, self-loops are dropped).
Graph make_graph(std::size_t n, std::vector<NodePair> pairs, Tensor features, std::size_t num_classes,
                 std::vector<int> labels, Tensor multihot = {});

/// Copy of `g` without the given undirected edges.
Graph remove_edges(const Graph& g, const std::vector<bool>& dropped);

/// Message-passing structure with one weight per directed entry.
struct WeightedEdges {
  EdgeIndex index;
  Tensor weights;  // [E]

  std::size_t size() const { return index.size(); }
};

struct PlanetoidData {
  Graph graph;
  std::size_t skipped_citations = 0;
  std::vector<std::string> node_ids;
  std::vector<std::string> class_names;
};

/// Parses `<id>\t<features...>\t<label>` rows and `<id>\t<id>` citation rows.
/// Citations naming unknown ids are skipped and counted.
PlanetoidData load_planetoid(const std::filesystem::path& content_path, const std::filesystem::path& cites_path);

struct SbmParams {
  std::vector<std::size_t> blocks;
  double p_in = 0.1;
  double p_out = 0.01;
  std::size_t feature_dim = 16;
  double feature_noise = 1.0;
  std::uint64_t seed = 0;
};

/// Planted-partition graph; features are a one-hot block signal plus
/// Gaussian noise; labels are block ids.
Graph generate_sbm(const SbmParams& params);

/// Multi-label variant: each node carries its block label plus every other
/// label independently with probability `extra_label_p`; features encode the
/// label set plus noise.
Graph generate_multilabel_sbm(const SbmParams& params, double extra_label_p);

struct SplitFractions {
  double train = 0.1;
  double val = 0.1;
  double test = 0.8;
};

/// Uniform shuffle by seed, then contiguous train/val/test assignment.
SplitMasks random_split(std::size_t n, const SplitFractions& fractions, std::uint64_t seed);

/// Symmetric normalization of A + I: w_uv = 1 / sqrt((deg_u + 1)(deg_v + 1)).
WeightedEdges gcn_normalize(const Graph& g);

struct EdgeDropMask {
  std::vector<bool> dropped;  // indexed like Graph::undirected
  double p_star = 0.0;
  std::uint64_t seed = 0;

  std::size_t count() const;
};

/// Drops every undirected edge whose uniform draw is below p_star.
EdgeDropMask drop_edges(const Graph& g, double p_star, std::uint64_t seed);

enum class RenormMode { gcn_renormalize, none };

RenormMode parse_renorm_mode(const std::string& s);

/// Surviving edges after removing `mask`. gcn_renormalize recomputes the
/// symmetric normalization (self-loops included) on the surviving topology;
/// none returns the surviving directed edges with unit weight.
WeightedEdges apply_drop(const Graph& g, const EdgeDropMask& mask, RenormMode mode);

/// Draws additive deltas w * (b / (1 - p) - 1), b ~ Bernoulli(1 - p), shared
/// by both orientations of an undirected entry. Self-loops get zero delta.
class PerturbationSampler {
 public:
  PerturbationSampler(const WeightedEdges& edges, double p);

  std::vector<double> sample(std::mt19937_64& rng) const;
  /// Groups of directed entry indices sharing one Bernoulli draw.
  const std::vector<std::vector<std::size_t>>& groups() const { return groups_; }
  /// Variance of the shared factor b / (1 - p) - 1.
  double factor_variance() const { return p_ / (1.0 - p_); }

 private:
  std::vector<double> weights_;
  std::vector<std::vector<std::size_t>> groups_;
  double p_;
};

std::vector<double> zero_mean_perturbation(const WeightedEdges& edges, double p, std::uint64_t seed);

// ---- serialization ----

std::string graph_to_json(const Graph& g);
Graph graph_from_json(const std::string& text);
void save_graph(const Graph& g, const std::filesystem::path& path);
Graph load_graph(const std::filesystem::path& path);

}  // namespace dropdist
