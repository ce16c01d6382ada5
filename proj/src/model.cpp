#include "dropdist/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dropdist {

std::string to_string(Arch a) { return a == Arch::gcn ? "gcn" : "gat"; }

Arch parse_arch(const std::string& s) {
  if (s == "gcn") return Arch::gcn;
  if (s == "gat") return Arch::gat;
  throw std::invalid_argument("unknown architecture '" + s + "'");
}

void ModelConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("ModelConfig: layers must be >= 1");
  if (hidden() < 1) throw std::invalid_argument("ModelConfig: hidden width must be >= 1");
  if (heads < 1) throw std::invalid_argument("ModelConfig: heads must be >= 1");
  if (in_dim < 1 || out_dim < 1) throw std::invalid_argument("ModelConfig: in_dim and out_dim must be set");
}

namespace {

struct TensorSpec {
  std::string name;
  std::size_t rows, cols;
  enum Kind { weight, bias } kind;
};

std::size_t heads_of(const ModelConfig& c) { return c.arch == Arch::gat ? c.heads : 1; }

// Width of the representation leaving layer l.
std::size_t out_width(const ModelConfig& c, std::size_t l) {
  if (l + 1 == c.layers) return c.out_dim;
  return c.hidden() * heads_of(c);
}

std::size_t in_width(const ModelConfig& c, std::size_t l) { return l == 0 ? c.in_dim : out_width(c, l - 1); }

std::size_t head_width(const ModelConfig& c, std::size_t l) { return l + 1 == c.layers ? c.out_dim : c.hidden(); }

std::vector<TensorSpec> layout(const ModelConfig& c) {
  std::vector<TensorSpec> specs;
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const std::size_t in = in_width(c, l), f = head_width(c, l), out = out_width(c, l);
    if (c.arch == Arch::gat) {
      for (std::size_t h = 0; h < c.heads; ++h) {
        const std::string hp = p + "head" + std::to_string(h) + ".";
        specs.push_back({hp + "weight", in, f, TensorSpec::weight});
        specs.push_back({hp + "att_src", f, 1, TensorSpec::weight});
        specs.push_back({hp + "att_dst", f, 1, TensorSpec::weight});
      }
    } else {
      specs.push_back({p + "weight", in, f, TensorSpec::weight});
    }
    specs.push_back({p + "bias", 1, out, TensorSpec::bias});
    if (c.residual && in != out) specs.push_back({p + "residual", in, out, TensorSpec::weight});
  }
  return specs;
}

}  // namespace

std::vector<Tensor*> ModelParams::pointers() {
  std::vector<Tensor*> out;
  for (auto& t : tensors) out.push_back(&t);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

void ModelParams::set_requires_grad(bool on) {
  for (auto& t : tensors) {
    t.requires_grad = on;
    if (!on) t.grad.clear();
  }
}

std::size_t parameter_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& s : layout(config)) n += s.rows * s.cols;
  return n;
}

ModelParams init_model(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  std::mt19937_64 rng(config.seed);
  for (const auto& s : layout(config)) {
    Tensor t = Tensor::zeros(s.rows, s.cols, true);
    if (s.kind == TensorSpec::weight) {
      const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (auto& v : t.values) v = u(rng);
    }
    p.tensors.push_back(std::move(t));
    p.names.push_back(s.name);
  }
  return p;
}

Var forward(Tape& tape, const ModelConfig& c, std::span<const Var> params, Var x, std::span<const LayerEdges> edges,
            ForwardTrace* trace) {
  c.validate();
  if (x.cols() != c.in_dim)
    throw std::invalid_argument("forward: feature dim " + std::to_string(x.cols()) + " != " + std::to_string(c.in_dim));
  if (x.rows() == 0) throw std::invalid_argument("forward: empty graph");
  if (&x.tape() != &tape) throw std::invalid_argument("forward: features recorded on a different tape");
  if (edges.size() != 1 && edges.size() != c.layers)
    throw std::invalid_argument("forward: expected one edge set or one per layer");
  const auto specs = layout(c);
  if (params.size() != specs.size()) throw std::invalid_argument("forward: parameter count mismatch");
  if (trace) trace->attention.assign(c.layers, {});

  std::size_t k = 0;
  Var h = x;
  for (std::size_t l = 0; l < c.layers; ++l) {
    const LayerEdges& le = edges.size() == 1 ? edges[0] : edges[l];
    const EdgeIndex& idx = *le.index;
    if (idx.num_nodes != x.rows()) throw std::invalid_argument("forward: edge set node count mismatch");
    const bool last = l + 1 == c.layers;
    const std::size_t in = in_width(c, l), out = out_width(c, l);
    Var conv;
    if (c.arch == Arch::gcn) {
      conv = spmm(idx, le.weights, matmul(h, params[k++]));
    } else {
      std::vector<Var> head_out;
      for (std::size_t hd = 0; hd < c.heads; ++hd) {
        Var z = matmul(h, params[k++]);
        Var s_src = matmul(z, params[k++]);
        Var s_dst = matmul(z, params[k++]);
        Var score = leaky_relu(add(gather_rows(s_src, idx.src), gather_rows(s_dst, idx.dst)), 0.2);
        Var alpha = segment_softmax(score, idx.dst, idx.num_nodes);
        if (trace) {
          auto v = alpha.values();
          trace->attention[l].emplace_back(v.begin(), v.end());
        }
        head_out.push_back(spmm(idx, alpha, z));
      }
      if (!last) {
        conv = head_out.size() == 1 ? head_out[0] : concat_cols(head_out);
      } else {
        conv = head_out[0];
        for (std::size_t hd = 1; hd < head_out.size(); ++hd) conv = add(conv, head_out[hd]);
        if (head_out.size() > 1) conv = scale(conv, 1.0 / static_cast<double>(head_out.size()));
      }
    }
    conv = add_row(conv, params[k++]);
    if (c.residual) conv = add(conv, in == out ? h : matmul(h, params[k++]));
    if (!last) conv = c.arch == Arch::gat ? elu(conv) : relu(conv);
    h = conv;
  }
  return h;
}

WeightedEdges propagation_edges(const Graph& g, Arch arch, const EdgeDropMask* mask) {
  if (arch == Arch::gcn) {
    return mask ? apply_drop(g, *mask, RenormMode::gcn_renormalize) : gcn_normalize(g);
  }
  EdgeDropMask none{std::vector<bool>(g.undirected.size(), false), 0.0, 0};
  WeightedEdges w = apply_drop(g, mask ? *mask : none, RenormMode::none);
  std::vector<NodePair> all;
  all.reserve(w.size() + g.n);
  for (std::size_t e = 0; e < w.size(); ++e) all.push_back({w.index.src[e], w.index.dst[e]});
  for (std::size_t i = 0; i < g.n; ++i) all.push_back({i, i});
  std::sort(all.begin(), all.end());
  WeightedEdges out;
  out.index.num_nodes = g.n;
  for (auto [u, v] : all) {
    out.index.src.push_back(u);
    out.index.dst.push_back(v);
  }
  out.weights = Tensor({all.size()}, std::vector<double>(all.size(), 1.0));
  return out;
}

WeightedEdges model_propagation(const ModelParams& params, const Graph& g, const EdgeDropMask* mask) {
  if (params.fixed_propagation) {
    if (mask) throw std::invalid_argument("model_propagation: fixed aggregation does not support edge drops");
    return *params.fixed_propagation;
  }
  return propagation_edges(g, params.config.arch, mask);
}

std::vector<Var> bind_params(Tape& tape, ModelParams& params, bool trainable) {
  std::vector<Var> v;
  for (auto& t : params.tensors) v.push_back(trainable ? tape.param(t) : tape.constant(t));
  return v;
}

std::vector<Var> bind_constants(Tape& tape, const ModelParams& params) {
  std::vector<Var> v;
  for (const auto& t : params.tensors) v.push_back(tape.constant(t));
  return v;
}

Tensor logits(const ModelParams& params, const Graph& g, const EdgeDropMask* mask) {
  const WeightedEdges edges = model_propagation(params, g, mask);
  Tape tape;
  auto pv = bind_constants(tape, params);
  Var x = tape.constant(g.features);
  const LayerEdges le{&edges.index, tape.constant(edges.weights)};
  return forward(tape, params.config, pv, x, std::span<const LayerEdges>(&le, 1)).to_tensor();
}

std::vector<int> predict_classes(const Tensor& logits) {
  const std::size_t n = logits.rows(), c = logits.cols();
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.values[i * c + j] > logits.values[i * c + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

Tensor predict_multihot(const Tensor& logits) {
  Tensor out(logits.shape, std::vector<double>(logits.size(), 0.0));
  for (std::size_t i = 0; i < logits.size(); ++i) out.values[i] = logits.values[i] > 0.0 ? 1.0 : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints

using nlohmann::json;

std::string checkpoint_to_json(const ModelParams& params) {
  const auto& c = params.config;
  json j;
  j["config"] = {{"arch", to_string(c.arch)}, {"layers", c.layers},   {"hidden_base", c.hidden_base},
                 {"q", c.q},                  {"heads", c.heads},     {"residual", c.residual},
                 {"in_dim", c.in_dim},        {"out_dim", c.out_dim}, {"seed", c.seed}};
  json arrays = json::array();
  for (const auto& t : params.tensors) arrays.push_back(t.values);
  j["params"] = std::move(arrays);
  if (params.fixed_propagation) {
    const auto& fp = *params.fixed_propagation;
    j["fixed_propagation"] = {{"n", fp.index.num_nodes}, {"src", fp.index.src}, {"dst", fp.index.dst},
                              {"weights", fp.weights.values}};
  }
  return j.dump();
}

ModelParams checkpoint_from_json(const std::string& text) {
  const json j = json::parse(text);
  const auto& jc = j.at("config");
  ModelConfig c;
  c.arch = parse_arch(jc.at("arch").get<std::string>());
  c.layers = jc.at("layers").get<std::size_t>();
  c.hidden_base = jc.at("hidden_base").get<std::size_t>();
  c.q = jc.at("q").get<std::size_t>();
  c.heads = jc.at("heads").get<std::size_t>();
  c.residual = jc.at("residual").get<bool>();
  c.in_dim = jc.at("in_dim").get<std::size_t>();
  c.out_dim = jc.at("out_dim").get<std::size_t>();
  c.seed = jc.at("seed").get<std::uint64_t>();
  ModelParams p = init_model(c);
  const auto& arrays = j.at("params");
  if (arrays.size() != p.tensors.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::size_t k = 0; k < arrays.size(); ++k) {
    auto v = arrays[k].get<std::vector<double>>();
    if (v.size() != p.tensors[k].size()) throw std::runtime_error("checkpoint: shape mismatch for " + p.names[k]);
    p.tensors[k].values = std::move(v);
  }
  if (j.contains("fixed_propagation")) {
    const auto& f = j.at("fixed_propagation");
    WeightedEdges w;
    w.index.num_nodes = f.at("n").get<std::size_t>();
    w.index.src = f.at("src").get<std::vector<std::size_t>>();
    w.index.dst = f.at("dst").get<std::vector<std::size_t>>();
    auto wv = f.at("weights").get<std::vector<double>>();
    const std::size_t count = wv.size();
    w.weights = Tensor({count}, std::move(wv));
    p.fixed_propagation = std::move(w);
  }
  return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_checkpoint: cannot write " + path.string());
  os << checkpoint_to_json(params);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return checkpoint_from_json(ss.str());
}

std::string checkpoint_hash(const ModelParams& params) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : checkpoint_to_json(params)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dropdist
