#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "dropdist/constructions.hpp"
#include "dropdist/influence.hpp"

using namespace dropdist;

namespace {

Graph random_graph(std::size_t n, std::uint64_t seed) {
  SbmParams p;
  p.blocks = {n / 2, n - n / 2};
  p.p_in = 0.5;
  p.p_out = 0.15;
  p.feature_dim = 3;
  p.seed = seed;
  return generate_sbm(p);
}

ModelParams gcn(const Graph& g, std::size_t layers, std::uint64_t seed) {
  ModelConfig c;
  c.arch = Arch::gcn;
  c.layers = layers;
  c.hidden_base = 5;
  c.residual = false;
  c.in_dim = g.feature_dim();
  c.out_dim = g.num_classes;
  c.seed = seed;
  return init_model(c);
}

// I(i, j) by central differences of the full logit matrix.
std::vector<std::vector<double>> brute_force_influence(const ModelParams& p, const Graph& g, double h = 1e-6) {
  std::vector<std::vector<double>> infl(g.n, std::vector<double>(g.n, 0.0));
  Graph probe = g;
  for (std::size_t j = 0; j < g.n; ++j)
    for (std::size_t b = 0; b < g.feature_dim(); ++b) {
      const double orig = probe.features.at(j, b);
      probe.features.at(j, b) = orig + h;
      const Tensor up = logits(p, probe);
      probe.features.at(j, b) = orig - h;
      const Tensor down = logits(p, probe);
      probe.features.at(j, b) = orig;
      for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t a = 0; a < g.num_classes; ++a)
          infl[i][j] += std::abs((up.at(i, a) - down.at(i, a)) / (2.0 * h));
    }
  return infl;
}

}  // namespace

TEST_CASE("influence scores") {
  SUBCASE("closed form for a linear aggregation") {
    const Graph g = make_graph(2, {{0, 1}}, Tensor::from_rows({{0.3}, {-1.2}}), 2, {0, 1});
    ModelParams p = gcn(g, 1, 0);
    p.tensors[0] = Tensor::from_rows({{1, -2}});
    const auto s = influence_scores(p, g, 0);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == doctest::Approx(1.5).epsilon(1e-14));
  }
  SUBCASE("zero weights give zero influence") {
    const Graph g = random_graph(8, 1);
    ModelParams p = gcn(g, 2, 1);
    for (auto& t : p.tensors) std::fill(t.values.begin(), t.values.end(), 0.0);
    for (std::size_t r = 0; r < g.n; ++r)
      if (!g.neighbors()[r].empty())
        for (double v : influence_scores(p, g, r)) CHECK(v == 0.0);
  }
  SUBCASE("agrees with finite-difference Jacobians") {
    const Graph g = random_graph(12, 2);
    const ModelParams p = gcn(g, 2, 3);
    const auto oracle = brute_force_influence(p, g);
    const auto adj = g.neighbors();
    for (std::size_t r = 0; r < g.n; ++r) {
      if (adj[r].empty()) continue;
      const auto s = influence_scores(p, g, r);
      for (std::size_t k = 0; k < s.size(); ++k) {
        const double want = oracle[r][adj[r][k]];
        CHECK(std::abs(s[k] - want) <= 1e-4 * std::max(std::abs(want), 1e-8));
      }
    }
  }
  SUBCASE("root without context") {
    const Graph g = make_graph(3, {{0, 1}}, Tensor::zeros(3, 2), 2, {0, 1, 0});
    CHECK_THROWS_AS(influence_scores(gcn(g, 1, 0), g, 2), std::invalid_argument);
  }
}

TEST_CASE("influence distribution") {
  const auto d = influence_distribution(0, {1, 2}, std::vector<double>{3.0, 1.0});
  CHECK(d.mass == std::vector<double>{0.75, 0.25});
  CHECK_FALSE(d.degenerate);
  CHECK(influence_distribution(0, {4}, std::vector<double>{5.0}).mass == std::vector<double>{1.0});
  CHECK(influence_distribution(0, {1, 2}, std::vector<double>{0.0, 0.0}).degenerate);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<double> raw(7), scaled(7);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = u(rng);
    scaled[i] = 37.5 * raw[i];
  }
  const auto a = influence_distribution(0, {1, 2, 3, 4, 5, 6, 7}, raw);
  const auto b = influence_distribution(0, {1, 2, 3, 4, 5, 6, 7}, scaled);
  for (std::size_t i = 0; i < raw.size(); ++i) CHECK(std::abs(a.mass[i] - b.mass[i]) < 1e-12);
}

TEST_CASE("smape") {
  for (double x : {0.0, 0.3, 1.0, 17.0}) CHECK(smape(x, x) == 0.0);
  CHECK(smape(0.9, 0.1) == doctest::Approx(1.6).epsilon(1e-15));
  CHECK(smape(0.4, 0.0) == 2.0);
  CHECK(smape(0.0, 5.0) == 2.0);
  CHECK_THROWS_AS(smape(-0.1, 0.2), std::invalid_argument);
}

TEST_CASE("influence difference") {
  const Graph g = random_graph(10, 9);
  const ModelParams f = gcn(g, 2, 1), h = gcn(g, 2, 2);

  SUBCASE("identical models") {
    const auto r = influence_difference(f, f, g);
    CHECK(r.id_scalar == 0.0);
    for (const auto& v : r.per_node)
      if (v) CHECK(*v == 0.0);
  }
  SUBCASE("symmetric and bounded") {
    const auto ab = influence_difference(f, h, g), ba = influence_difference(h, f, g);
    CHECK(ab.id_scalar == ba.id_scalar);
    CHECK(ab.id_scalar >= 0.0);
    CHECK(ab.id_scalar <= 2.0);
    for (std::size_t i = 0; i < g.n; ++i) {
      CHECK(ab.per_node[i].has_value() == ba.per_node[i].has_value());
      if (ab.per_node[i]) {
        CHECK(*ab.per_node[i] == *ba.per_node[i]);
        CHECK(*ab.per_node[i] >= 0.0);
        CHECK(*ab.per_node[i] <= 2.0);
      }
    }
  }
  SUBCASE("matches a brute-force two-stage mean") {
    const auto bf = brute_force_influence(f, g), bh = brute_force_influence(h, g);
    const auto adj = g.neighbors();
    double total = 0.0;
    std::size_t roots = 0;
    for (std::size_t r = 0; r < g.n; ++r) {
      if (adj[r].empty()) continue;
      double sf = 0.0, sh = 0.0;
      for (auto j : adj[r]) {
        sf += bf[r][j];
        sh += bh[r][j];
      }
      if (sf == 0.0 || sh == 0.0) continue;
      double acc = 0.0;
      for (auto j : adj[r]) acc += smape(bf[r][j] / sf, bh[r][j] / sh);
      total += acc / static_cast<double>(adj[r].size());
      ++roots;
    }
    const double want = total / static_cast<double>(roots);
    CHECK(std::abs(influence_difference(f, h, g).id_scalar - want) < 1e-3 * want);
  }
  SUBCASE("every root skipped") {
    ModelParams zero = f;
    for (auto& t : zero.tensors) std::fill(t.values.begin(), t.values.end(), 0.0);
    CHECK_THROWS(influence_difference(zero, h, g));
  }
  SUBCASE("prop1 construction hits the closed form") {
    const auto c = generate_prop1_graph(6, 0.9, 0.1);
    const auto r = influence_difference(c.f, c.g, c.graph, c.roots);
    CHECK(std::abs(r.id_scalar - 1.6) < 1e-9);
    for (auto root : c.roots) CHECK(std::abs(*r.per_node[root] - 1.6) < 1e-9);
  }
}

TEST_CASE("subset sampling") {
  const std::vector<std::size_t> c{2, 4, 6, 8, 10, 12};
  const auto s = sample_subset(c, 3, 1);
  CHECK(s.size() == 3);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(s == sample_subset(c, 3, 1));
  CHECK(sample_subset(c, 10, 1) == c);
}
