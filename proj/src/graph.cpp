#include "dropdist/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace dropdist {

namespace {

std::vector<std::size_t> mask_nodes(const std::vector<bool>& m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) out.push_back(i);
  return out;
}

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace

std::vector<std::size_t> SplitMasks::train_nodes() const { return mask_nodes(train); }
std::vector<std::size_t> SplitMasks::val_nodes() const { return mask_nodes(val); }
std::vector<std::size_t> SplitMasks::test_nodes() const { return mask_nodes(test); }

void SplitMasks::validate(std::size_t n) const {
  if (train.size() != n || val.size() != n || test.size() != n)
    throw std::invalid_argument("SplitMasks: mask length differs from node count");
  bool any_train = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (static_cast<int>(train[i]) + static_cast<int>(val[i]) + static_cast<int>(test[i]) > 1)
      throw std::invalid_argument("SplitMasks: node " + std::to_string(i) + " in more than one split");
    any_train = any_train || train[i];
  }
  if (!any_train) throw std::invalid_argument("SplitMasks: empty train split");
}

std::vector<std::vector<std::size_t>> Graph::neighbors() const {
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& [u, v] : directed) adj[u].push_back(v);
  for (auto& a : adj) std::sort(a.begin(), a.end());
  return adj;
}

Graph make_graph(std::size_t n, std::vector<NodePair> pairs, Tensor features, std::size_t num_classes,
                 std::vector<int> labels, Tensor multihot) {
  Graph g;
  g.n = n;
  std::set<NodePair> seen;
  for (auto [u, v] : pairs) {
    if (u >= n || v >= n) throw std::out_of_range("make_graph: edge endpoint out of range");
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    if (!seen.insert({u, v}).second) {
      throw std::invalid_argument("make_graph: duplicate edge (" + std::to_string(u) + "," + std::to_string(v) + ")");
    }
  }
  g.undirected.assign(seen.begin(), seen.end());
  g.directed.reserve(2 * g.undirected.size());
  for (auto [u, v] : g.undirected) {
    g.directed.push_back({u, v});
    g.directed.push_back({v, u});
  }
  std::sort(g.directed.begin(), g.directed.end());

  if (features.shape.size() != 2 || features.rows() != n)
    throw std::invalid_argument("make_graph: features must be [n x d]");
  check_finite(features.values, "make_graph");
  g.features = std::move(features);
  g.features.requires_grad = false;
  g.num_classes = num_classes;

  if (multihot.size() > 0) {
    if (multihot.rows() != n || multihot.cols() != num_classes)
      throw std::invalid_argument("make_graph: multi-hot labels must be [n x c]");
    for (double v : multihot.values)
      if (v != 0.0 && v != 1.0) throw std::invalid_argument("make_graph: multi-hot entries must be 0 or 1");
    g.multihot = std::move(multihot);
  } else {
    if (labels.size() != n) throw std::invalid_argument("make_graph: label count differs from node count");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
        throw std::out_of_range("make_graph: label outside [0, c)");
    g.labels = std::move(labels);
  }
  return g;
}

Graph remove_edges(const Graph& g, const std::vector<bool>& dropped) {
  if (dropped.size() != g.undirected.size()) throw std::invalid_argument("remove_edges: mask size mismatch");
  std::vector<NodePair> keep;
  for (std::size_t e = 0; e < g.undirected.size(); ++e)
    if (!dropped[e]) keep.push_back(g.undirected[e]);
  Graph out = make_graph(g.n, std::move(keep), g.features, g.num_classes, g.labels, g.multihot);
  out.masks = g.masks;
  return out;
}

// ---------------------------------------------------------------------------
// planetoid

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, '\t')) out.push_back(field);
  // tolerate trailing carriage returns from Windows-style files
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

double parse_feature(const std::string& s, std::size_t line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v))
    throw std::runtime_error("load_planetoid: non-numeric feature '" + s + "' on line " + std::to_string(line_no));
  return v;
}

}  // namespace

PlanetoidData load_planetoid(const std::filesystem::path& content_path, const std::filesystem::path& cites_path) {
  std::ifstream content(content_path);
  if (!content) throw std::runtime_error("load_planetoid: cannot open " + content_path.string());
  std::ifstream cites(cites_path);
  if (!cites) throw std::runtime_error("load_planetoid: cannot open " + cites_path.string());

  PlanetoidData data;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> raw_labels;
  std::vector<double> feats;
  std::size_t d = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(content, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = split_tabs(line);
    if (f.size() < 3) throw std::runtime_error("load_planetoid: too few fields on line " + std::to_string(line_no));
    if (d == 0) d = f.size() - 2;
    if (f.size() - 2 != d)
      throw std::runtime_error("load_planetoid: expected " + std::to_string(d + 2) + " fields on line " +
                               std::to_string(line_no));
    if (!index.emplace(f.front(), data.node_ids.size()).second)
      throw std::runtime_error("load_planetoid: duplicate node id '" + f.front() + "'");
    data.node_ids.push_back(f.front());
    for (std::size_t k = 1; k + 1 < f.size(); ++k) feats.push_back(parse_feature(f[k], line_no));
    raw_labels.push_back(f.back());
  }
  const std::size_t n = data.node_ids.size();
  if (n == 0) throw std::runtime_error("load_planetoid: no nodes in " + content_path.string());

  std::set<std::string> names(raw_labels.begin(), raw_labels.end());
  data.class_names.assign(names.begin(), names.end());
  std::vector<int> labels;
  labels.reserve(n);
  for (const auto& l : raw_labels)
    labels.push_back(static_cast<int>(std::lower_bound(data.class_names.begin(), data.class_names.end(), l) -
                                      data.class_names.begin()));

  std::set<NodePair> pairs;
  line_no = 0;
  while (std::getline(cites, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = split_tabs(line);
    if (f.size() != 2) throw std::runtime_error("load_planetoid: citation line " + std::to_string(line_no) +
                                                " must have two fields");
    auto a = index.find(f[0]);
    auto b = index.find(f[1]);
    if (a == index.end() || b == index.end()) {
      ++data.skipped_citations;
      continue;
    }
    auto u = a->second, v = b->second;
    if (u == v) continue;
    pairs.insert({std::min(u, v), std::max(u, v)});
  }
  data.graph = make_graph(n, {pairs.begin(), pairs.end()}, Tensor({n, d}, std::move(feats)), data.class_names.size(),
                          std::move(labels));
  return data;
}

// ---------------------------------------------------------------------------
// synthetic graphs

namespace {

struct SbmTopology {
  std::vector<NodePair> pairs;
  std::vector<int> block;
};

SbmTopology sbm_topology(const SbmParams& p, std::mt19937_64& rng) {
  if (p.blocks.empty()) throw std::invalid_argument("generate_sbm: no blocks");
  for (auto b : p.blocks)
    if (b == 0) throw std::invalid_argument("generate_sbm: empty block");
  if (p.p_in < 0 || p.p_in > 1 || p.p_out < 0 || p.p_out > 1)
    throw std::invalid_argument("generate_sbm: probabilities must lie in [0,1]");
  SbmTopology t;
  for (std::size_t b = 0; b < p.blocks.size(); ++b) t.block.insert(t.block.end(), p.blocks[b], static_cast<int>(b));
  const std::size_t n = t.block.size();
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v) {
      const double prob = t.block[u] == t.block[v] ? p.p_in : p.p_out;
      if (uniform01(rng) < prob) t.pairs.push_back({u, v});
    }
  return t;
}

}  // namespace

Graph generate_sbm(const SbmParams& params) {
  std::mt19937_64 rng(params.seed);
  auto topo = sbm_topology(params, rng);
  const std::size_t n = topo.block.size(), c = params.blocks.size(), d = params.feature_dim;
  if (d < c) throw std::invalid_argument("generate_sbm: feature_dim must be at least the block count");
  std::normal_distribution<double> noise(0.0, params.feature_noise);
  Tensor x = Tensor::zeros(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x.values[i * d + j] = params.feature_noise > 0 ? noise(rng) : 0.0;
    x.values[i * d + static_cast<std::size_t>(topo.block[i])] += 1.0;
  }
  return make_graph(n, std::move(topo.pairs), std::move(x), c, std::move(topo.block));
}

Graph generate_multilabel_sbm(const SbmParams& params, double extra_label_p) {
  std::mt19937_64 rng(params.seed);
  auto topo = sbm_topology(params, rng);
  const std::size_t n = topo.block.size(), c = params.blocks.size(), d = params.feature_dim;
  if (d < c) throw std::invalid_argument("generate_multilabel_sbm: feature_dim must be at least the label count");
  Tensor y = Tensor::zeros(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k)
      y.values[i * c + k] = (static_cast<int>(k) == topo.block[i] || uniform01(rng) < extra_label_p) ? 1.0 : 0.0;
  std::normal_distribution<double> noise(0.0, params.feature_noise);
  Tensor x = Tensor::zeros(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x.values[i * d + j] = params.feature_noise > 0 ? noise(rng) : 0.0;
    for (std::size_t k = 0; k < c; ++k) x.values[i * d + k] += y.values[i * c + k];
  }
  return make_graph(n, std::move(topo.pairs), std::move(x), c, {}, std::move(y));
}

SplitMasks random_split(std::size_t n, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || f.train + f.val + f.test > 1.0 + 1e-12)
    throw std::invalid_argument("random_split: fractions must be non-negative and sum to at most 1");
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n)));
  const auto n_test =
      std::min(static_cast<std::size_t>(std::llround(f.test * static_cast<double>(n))), n - std::min(n, n_train + n_val));
  if (n_train == 0) throw std::invalid_argument("random_split: train fraction yields no nodes");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with explicit draws; std::shuffle is implementation-defined.
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  SplitMasks m{std::vector<bool>(n), std::vector<bool>(n), std::vector<bool>(n)};
  for (std::size_t k = 0; k < n_train + n_val + n_test && k < n; ++k) {
    if (k < n_train) m.train[order[k]] = true;
    else if (k < n_train + n_val) m.val[order[k]] = true;
    else m.test[order[k]] = true;
  }
  return m;
}

// ---------------------------------------------------------------------------
// normalization and edge drops

namespace {

WeightedEdges normalized_with_self_loops(std::size_t n, const std::vector<NodePair>& directed) {
  std::vector<double> deg(n, 1.0);
  for (const auto& e : directed) deg[e.second] += 1.0;
  std::vector<NodePair> all = directed;
  for (std::size_t i = 0; i < n; ++i) all.push_back({i, i});
  std::sort(all.begin(), all.end());
  WeightedEdges w;
  w.index.num_nodes = n;
  std::vector<double> vals;
  vals.reserve(all.size());
  for (auto [u, v] : all) {
    w.index.src.push_back(u);
    w.index.dst.push_back(v);
    vals.push_back(1.0 / std::sqrt(deg[u] * deg[v]));
  }
  w.weights = Tensor(std::vector<std::size_t>{all.size()}, std::move(vals));
  return w;
}

std::vector<NodePair> surviving_directed(const Graph& g, const EdgeDropMask& mask) {
  if (mask.dropped.size() != g.undirected.size()) throw std::invalid_argument("apply_drop: mask does not match graph edges");
  std::vector<NodePair> out;
  out.reserve(g.directed.size());
  for (std::size_t e = 0; e < g.undirected.size(); ++e) {
    if (mask.dropped[e]) continue;
    out.push_back(g.undirected[e]);
    out.push_back({g.undirected[e].second, g.undirected[e].first});
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

WeightedEdges gcn_normalize(const Graph& g) { return normalized_with_self_loops(g.n, g.directed); }

std::size_t EdgeDropMask::count() const { return static_cast<std::size_t>(std::count(dropped.begin(), dropped.end(), true)); }

EdgeDropMask drop_edges(const Graph& g, double p_star, std::uint64_t seed) {
  if (p_star < 0.0 || p_star > 1.0) throw std::invalid_argument("drop_edges: p_star must lie in [0,1]");
  EdgeDropMask m{std::vector<bool>(g.undirected.size(), false), p_star, seed};
  std::mt19937_64 rng(seed);
  for (std::size_t e = 0; e < g.undirected.size(); ++e) m.dropped[e] = uniform01(rng) < p_star;
  return m;
}

RenormMode parse_renorm_mode(const std::string& s) {
  if (s == "gcn-renormalize") return RenormMode::gcn_renormalize;
  if (s == "none") return RenormMode::none;
  throw std::invalid_argument("unknown renormalization mode '" + s + "'");
}

WeightedEdges apply_drop(const Graph& g, const EdgeDropMask& mask, RenormMode mode) {
  auto kept = surviving_directed(g, mask);
  if (mode == RenormMode::gcn_renormalize) return normalized_with_self_loops(g.n, kept);
  WeightedEdges w;
  w.index.num_nodes = g.n;
  for (auto [u, v] : kept) {
    w.index.src.push_back(u);
    w.index.dst.push_back(v);
  }
  w.weights = Tensor({kept.size()}, std::vector<double>(kept.size(), 1.0));
  return w;
}

PerturbationSampler::PerturbationSampler(const WeightedEdges& edges, double p)
    : weights_(edges.weights.values), p_(p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("zero_mean_perturbation: p must lie in (0,1)");
  std::map<NodePair, std::size_t> group_of;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto u = edges.index.src[e], v = edges.index.dst[e];
    if (u == v) continue;
    const NodePair key{std::min(u, v), std::max(u, v)};
    auto [it, inserted] = group_of.emplace(key, groups_.size());
    if (inserted) groups_.emplace_back();
    groups_[it->second].push_back(e);
  }
}

std::vector<double> PerturbationSampler::sample(std::mt19937_64& rng) const {
  std::vector<double> delta(weights_.size(), 0.0);
  for (const auto& grp : groups_) {
    const bool keep = uniform01(rng) >= p_;
    const double factor = keep ? 1.0 / (1.0 - p_) - 1.0 : -1.0;
    for (auto e : grp) delta[e] = weights_[e] * factor;
  }
  return delta;
}

std::vector<double> zero_mean_perturbation(const WeightedEdges& edges, double p, std::uint64_t seed) {
  PerturbationSampler s(edges, p);
  std::mt19937_64 rng(seed);
  return s.sample(rng);
}

// ---------------------------------------------------------------------------
// serialization

using nlohmann::json;

namespace {

json mask_json(const std::vector<bool>& m) {
  json a = json::array();
  for (bool b : m) a.push_back(b ? 1 : 0);
  return a;
}

std::vector<bool> mask_from(const json& a) {
  std::vector<bool> m;
  for (const auto& v : a) m.push_back(v.get<int>() != 0);
  return m;
}

std::vector<std::vector<double>> rows_of(const Tensor& t) {
  std::vector<std::vector<double>> r(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) r[i].assign(t.values.begin() + i * t.cols(), t.values.begin() + (i + 1) * t.cols());
  return r;
}

}  // namespace

std::string graph_to_json(const Graph& g) {
  json j;
  j["n"] = g.n;
  j["num_classes"] = g.num_classes;
  j["edges"] = g.undirected;
  j["features"] = rows_of(g.features);
  if (g.multilabel()) j["labels"] = rows_of(g.multihot);
  else j["labels"] = g.labels;
  if (g.masks) j["masks"] = {{"train", mask_json(g.masks->train)}, {"val", mask_json(g.masks->val)}, {"test", mask_json(g.masks->test)}};
  return j.dump();
}

Graph graph_from_json(const std::string& text) {
  const json j = json::parse(text);
  const auto n = j.at("n").get<std::size_t>();
  const auto c = j.at("num_classes").get<std::size_t>();
  auto pairs = j.at("edges").get<std::vector<NodePair>>();
  auto feat_rows = j.at("features").get<std::vector<std::vector<double>>>();
  Tensor x = feat_rows.empty() ? Tensor({n, 0}, {}) : Tensor::from_rows(feat_rows);
  Graph g;
  const auto& labels = j.at("labels");
  if (!labels.empty() && labels.front().is_array()) {
    g = make_graph(n, std::move(pairs), std::move(x), c, {},
                   Tensor::from_rows(labels.get<std::vector<std::vector<double>>>()));
  } else {
    g = make_graph(n, std::move(pairs), std::move(x), c, labels.get<std::vector<int>>());
  }
  if (j.contains("masks")) {
    const auto& m = j.at("masks");
    SplitMasks s{mask_from(m.at("train")), mask_from(m.at("val")), mask_from(m.at("test"))};
    s.validate(n);
    g.masks = std::move(s);
  }
  return g;
}

void save_graph(const Graph& g, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_graph: cannot write " + path.string());
  os << graph_to_json(g);
}

Graph load_graph(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_graph: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return graph_from_json(ss.str());
}

}  // namespace dropdist
