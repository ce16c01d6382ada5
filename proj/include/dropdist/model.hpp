#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dropdist/graph.hpp"
#include "dropdist/tensor.hpp"

namespace dropdist {

enum class Arch { gcn, gat };

std::string to_string(Arch a);
Arch parse_arch(const std::string& s);

struct ModelConfig {
  Arch arch = Arch::gat;
  std::size_t layers = 3;
  std::size_t hidden_base = 16;
  std::size_t q = 1;       // width multiplier on hidden_base
  std::size_t heads = 1;   // GAT only
  bool residual = true;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::uint64_t seed = 0;

  std::size_t hidden() const { return hidden_base * q; }
  void validate() const;
};

/// Flat parameter list in declaration order, plus an optional fixed
/// aggregation that replaces the graph-derived propagation (used by
/// hand-constructed linear models).
struct ModelParams {
  ModelConfig config;
  std::vector<Tensor> tensors;
  std::vector<std::string> names;
  std::optional<WeightedEdges> fixed_propagation;

  std::vector<Tensor*> pointers();
  std::size_t parameter_count() const;
  void set_requires_grad(bool on);
};

std::size_t parameter_count(const ModelConfig& config);

/// Glorot-uniform weights, zero biases, deterministic per config.seed.
ModelParams init_model(const ModelConfig& config);

/// Edges feeding one convolution. GCN reads `weights`; GAT only reads the
/// topology, which must include self-loops.
struct LayerEdges {
  const EdgeIndex* index = nullptr;
  Var weights;
};

/// Attention coefficients recorded during a GAT forward, [layer][head][edge].
struct ForwardTrace {
  std::vector<std::vector<std::vector<double>>> attention;
};

/// Logits [n x c] on `tape`. `params` are Vars aligned with
/// ModelParams::tensors. `edges` holds one entry shared by all layers, or
/// one per layer.
Var forward(Tape& tape, const ModelConfig& config, std::span<const Var> params, Var x,
            std::span<const LayerEdges> edges, ForwardTrace* trace = nullptr);

/// Message-passing structure the architecture expects on `g`, after the
/// optional edge drop: normalized A + I for GCN, unit-weight surviving edges
/// plus self-loops for GAT.
WeightedEdges propagation_edges(const Graph& g, Arch arch, const EdgeDropMask* mask = nullptr);

/// Propagation used for `params` on `g`: the fixed aggregation if present,
/// otherwise propagation_edges.
WeightedEdges model_propagation(const ModelParams& params, const Graph& g, const EdgeDropMask* mask = nullptr);

/// Binds every parameter as a tape leaf (gradient-carrying when trainable).
std::vector<Var> bind_params(Tape& tape, ModelParams& params, bool trainable);
std::vector<Var> bind_constants(Tape& tape, const ModelParams& params);

/// Gradient-free forward on the full graph (optionally edge-dropped).
Tensor logits(const ModelParams& params, const Graph& g, const EdgeDropMask* mask = nullptr);

/// Argmax per row; ties resolve to the lowest class index.
std::vector<int> predict_classes(const Tensor& logits);
/// Multi-hot prediction with threshold logit > 0.
Tensor predict_multihot(const Tensor& logits);

// ---- checkpoints ----

std::string checkpoint_to_json(const ModelParams& params);
ModelParams checkpoint_from_json(const std::string& text);
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);
/// FNV-1a over the checkpoint document, hex encoded.
std::string checkpoint_hash(const ModelParams& params);

}  // namespace dropdist
