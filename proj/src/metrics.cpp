#include "dropdist/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace dropdist {

namespace {

void require_nodes(std::span<const std::size_t> nodes, std::size_t n, const char* op) {
  if (nodes.empty()) throw std::invalid_argument(std::string(op) + ": empty mask");
  for (auto v : nodes)
    if (v >= n) throw std::out_of_range(std::string(op) + ": node out of range");
}

bool rows_equal(const Tensor& a, const Tensor& b, std::size_t i) {
  const std::size_t c = a.cols();
  for (std::size_t j = 0; j < c; ++j)
    if (a.values[i * c + j] != b.values[i * c + j]) return false;
  return true;
}

}  // namespace

std::vector<double> stability_vector(std::span<const int> preds_f, std::span<const int> preds_g,
                                     std::span<const std::size_t> nodes) {
  if (preds_f.size() != preds_g.size()) throw std::invalid_argument("stability_vector: prediction lengths differ");
  require_nodes(nodes, preds_f.size(), "stability_vector");
  std::vector<double> s;
  s.reserve(nodes.size());
  for (auto v : nodes) s.push_back(preds_f[v] == preds_g[v] ? 1.0 : 0.0);
  return s;
}

std::vector<double> stability_vector(const Tensor& f, const Tensor& g, std::span<const std::size_t> nodes) {
  if (f.shape != g.shape) throw std::invalid_argument("stability_vector: prediction shapes differ");
  require_nodes(nodes, f.rows(), "stability_vector");
  std::vector<double> s;
  s.reserve(nodes.size());
  for (auto v : nodes) s.push_back(rows_equal(f, g, v) ? 1.0 : 0.0);
  return s;
}

double churn(std::span<const int> preds_f, std::span<const int> preds_g, std::span<const std::size_t> nodes) {
  return 1.0 - mean_of(stability_vector(preds_f, preds_g, nodes));
}

double churn(const Tensor& f, const Tensor& g, std::span<const std::size_t> nodes) {
  return 1.0 - mean_of(stability_vector(f, g, nodes));
}

double pearson_corr(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson_corr: lengths differ");
  if (x.size() < 2) throw std::invalid_argument("pearson_corr: need at least two samples");
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw std::domain_error("pearson_corr: zero variance input");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::max(-1.0, std::min(1.0, r));
}

double label_entropy(const Graph& g, const std::vector<std::vector<std::size_t>>& adj, std::size_t root) {
  if (g.multilabel()) throw std::invalid_argument("label_entropy: single-label graphs only");
  if (root >= g.n) throw std::out_of_range("label_entropy: root out of range");
  const auto& ctx = adj[root];
  if (ctx.empty()) throw std::invalid_argument("label_entropy: node has no context");
  std::map<int, std::size_t> counts;
  for (auto j : ctx) ++counts[g.labels[j]];
  double h = 0.0;
  for (const auto& [label, cnt] : counts) {
    const double r = static_cast<double>(cnt) / static_cast<double>(ctx.size());
    h -= r * std::log(r);
  }
  return h;
}

double label_entropy(const Graph& g, std::size_t root) { return label_entropy(g, g.neighbors(), root); }

double accuracy(std::span<const int> preds, std::span<const int> labels, std::span<const std::size_t> nodes) {
  if (preds.size() != labels.size()) throw std::invalid_argument("accuracy: lengths differ");
  require_nodes(nodes, preds.size(), "accuracy");
  std::size_t hit = 0;
  for (auto v : nodes) hit += preds[v] == labels[v] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(nodes.size());
}

double micro_f1(const Tensor& pred, const Tensor& label, std::span<const std::size_t> nodes) {
  if (pred.shape != label.shape) throw std::invalid_argument("micro_f1: shapes differ");
  require_nodes(nodes, pred.rows(), "micro_f1");
  const std::size_t c = pred.cols();
  double tp = 0, fp = 0, fn = 0;
  for (auto v : nodes)
    for (std::size_t j = 0; j < c; ++j) {
      const bool p = pred.values[v * c + j] > 0.5, y = label.values[v * c + j] > 0.5;
      tp += p && y;
      fp += p && !y;
      fn += !p && y;
    }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * tp / (2.0 * tp + fp + fn);
}

double mean_of(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean_of: empty input");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(std::span<const double> v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace dropdist
