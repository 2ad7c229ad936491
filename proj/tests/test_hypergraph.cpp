#include <catch2/catch_amalgamated.hpp>

#include "bhygnn/hypergraph.hpp"
#include "bhygnn/rng.hpp"

using namespace bhygnn;

namespace {

Hypergraph make_path_graph() {
  // edges [[0,1],[1,2]] with 2-d features and labels A,A,B
  Hypergraph h;
  h.num_nodes = 3;
  h.edges = {{0, 1}, {1, 2}};
  h.node_features = Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}, {0.5, 0.5}});
  h.labels = std::vector<std::int64_t>{0, 0, 1};
  return h;
}

// Random valid hypergraph with every node in at least one edge.
Hypergraph random_hypergraph(RngStream& rng, bool with_edge_features) {
  const std::int64_t n = 2 + static_cast<std::int64_t>(rng.below(49));
  const std::int64_t extra_edges = static_cast<std::int64_t>(rng.below(20));
  Hypergraph h;
  h.num_nodes = n;
  std::vector<bool> covered(static_cast<std::size_t>(n), false);
  auto add_edge = [&](std::vector<NodeId> e) {
    std::sort(e.begin(), e.end());
    e.erase(std::unique(e.begin(), e.end()), e.end());
    for (auto v : e) covered[static_cast<std::size_t>(v)] = true;
    h.edges.push_back(std::move(e));
  };
  for (std::int64_t j = 0; j < extra_edges; ++j) {
    const auto size = 1 + rng.below(5);
    std::vector<NodeId> e;
    for (std::uint64_t i = 0; i < size; ++i)
      e.push_back(static_cast<NodeId>(rng.below(static_cast<std::uint64_t>(n))));
    add_edge(std::move(e));
  }
  for (std::int64_t v = 0; v < n; ++v)
    if (!covered[static_cast<std::size_t>(v)]) add_edge({v});
  h.node_features = Tensor(n, 3);
  for (std::int64_t i = 0; i < h.node_features.size(); ++i) h.node_features[i] = rng.normal();
  if (with_edge_features) {
    Tensor ef(h.num_edges(), 2);
    for (std::int64_t i = 0; i < ef.size(); ++i) ef[i] = rng.normal();
    h.edge_features = std::move(ef);
  }
  h.validate();
  return h;
}

}  // namespace

TEST_CASE("incidence_pairs enumerates (node, edge) memberships in edge-major order") {
  Hypergraph h = make_path_graph();
  auto pairs = incidence_pairs(h);
  REQUIRE(pairs == std::vector<std::pair<NodeId, EdgeId>>{{0, 0}, {1, 0}, {1, 1}, {2, 1}});

  Hypergraph empty;
  empty.num_nodes = 0;
  empty.node_features = Tensor(0, 1);
  REQUIRE(incidence_pairs(empty).empty());

  Hypergraph single;
  single.num_nodes = 1;
  single.edges = {{0}};
  single.node_features = Tensor(1, 1);
  REQUIRE(incidence_pairs(single) == std::vector<std::pair<NodeId, EdgeId>>{{0, 0}});
}

TEST_CASE("degrees") {
  Hypergraph h = make_path_graph();
  auto [dv, de] = degrees(h);
  REQUIRE(dv == std::vector<std::int64_t>{1, 2, 1});
  REQUIRE(de == std::vector<std::int64_t>{2, 2});

  SECTION("isolated node has degree zero") {
    Hypergraph g;
    g.num_nodes = 4;
    g.edges = {{0, 1}, {1, 2}};
    g.node_features = Tensor(4, 1);
    auto [dv2, de2] = degrees(g);
    REQUIRE(dv2[3] == 0);
  }

  SECTION("star edge over all nodes") {
    Hypergraph g;
    g.num_nodes = 6;
    g.edges = {{0, 1, 2, 3, 4, 5}};
    g.node_features = Tensor(6, 1);
    auto [dv2, de2] = degrees(g);
    REQUIRE(de2[0] == 6);
    for (auto d : dv2) REQUIRE(d == 1);
  }
}

TEST_CASE("degree sums match incidence count") {
  RngStream rng(42);
  for (int i = 0; i < 30; ++i) {
    Hypergraph h = random_hypergraph(rng, false);
    auto [dv, de] = degrees(h);
    std::int64_t sv = 0, se = 0;
    for (auto d : dv) sv += d;
    for (auto d : de) se += d;
    REQUIRE(sv == se);
    REQUIRE(sv == static_cast<std::int64_t>(incidence_pairs(h).size()));
  }
}

TEST_CASE("homophily on the labelled path") {
  Hypergraph h = make_path_graph();
  auto rep = homophily(h);
  // membership-ratio h(v): node 0 -> 2/2, node 1 -> (2+1)/4, node 2 -> 1/2
  REQUIRE(rep.per_node[0] == Catch::Approx(1.0));
  REQUIRE(rep.per_node[1] == Catch::Approx(0.75));
  REQUIRE(rep.per_node[2] == Catch::Approx(0.5));
  REQUIRE(rep.per_edge[0] == Catch::Approx(1.0));
  REQUIRE(rep.per_edge[1] == Catch::Approx(0.5));
  REQUIRE(rep.mean_node == Catch::Approx((1.0 + 0.75 + 0.5) / 3.0));
  REQUIRE(rep.mean_edge == Catch::Approx(0.75));
}

TEST_CASE("homophily is 1 under uniform labels") {
  Hypergraph h = make_path_graph();
  h.labels = std::vector<std::int64_t>{2, 2, 2};
  auto rep = homophily(h);
  for (double v : rep.per_node) REQUIRE(v == 1.0);
  for (double v : rep.per_edge) REQUIRE(v == 1.0);
}

TEST_CASE("homophily requires labels") {
  Hypergraph h = make_path_graph();
  h.labels.reset();
  REQUIRE_THROWS_AS(homophily(h), DataError);
}

TEST_CASE("homophily bounds hold on random hypergraphs") {
  RngStream rng(7);
  for (int i = 0; i < 20; ++i) {
    Hypergraph h = random_hypergraph(rng, false);
    std::vector<std::int64_t> y;
    for (std::int64_t v = 0; v < h.num_nodes; ++v)
      y.push_back(static_cast<std::int64_t>(rng.below(3)));
    h.labels = std::move(y);
    auto rep = homophily(h);
    for (double v : rep.per_node) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
    for (std::size_t j = 0; j < rep.per_edge.size(); ++j) {
      REQUIRE(rep.per_edge[j] <= 1.0);
      REQUIRE(rep.per_edge[j] >= 1.0 / static_cast<double>(h.edges[j].size()));
    }
  }
}

TEST_CASE("synthesize_edge_features takes member means") {
  Hypergraph h = make_path_graph();
  Tensor ef = synthesize_edge_features(h);
  REQUIRE(ef(0, 0) == Catch::Approx(0.5));
  REQUIRE(ef(0, 1) == Catch::Approx(0.5));

  SECTION("identical member rows reproduce the row") {
    Hypergraph g;
    g.num_nodes = 2;
    g.edges = {{0, 1}};
    g.node_features = Tensor::from_rows({{3.0, -1.0}, {3.0, -1.0}});
    Tensor e = synthesize_edge_features(g);
    REQUIRE(e(0, 0) == 3.0);
    REQUIRE(e(0, 1) == -1.0);
  }

  SECTION("three identity rows average to 1/3") {
    Hypergraph g;
    g.num_nodes = 3;
    g.edges = {{0, 1, 2}};
    g.node_features = Tensor::from_rows({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}});
    Tensor e = synthesize_edge_features(g);
    for (std::int64_t c = 0; c < 3; ++c) REQUIRE(e(0, c) == Catch::Approx(1.0 / 3.0));
  }
}

TEST_CASE("dual is the incidence transpose") {
  Hypergraph h = make_path_graph();
  Hypergraph d = dual(h);
  REQUIRE(d.num_nodes == 2);
  REQUIRE(d.num_edges() == 3);
  REQUIRE(d.edges == std::vector<std::vector<NodeId>>{{0}, {0, 1}, {1}});
  // dual node features = synthesized primal edge features
  Tensor ef = synthesize_edge_features(h);
  REQUIRE(max_abs_diff(d.node_features, ef) == 0.0);
  // dual edge features = primal node features
  REQUIRE(max_abs_diff(*d.edge_features, h.node_features) == 0.0);
}

TEST_CASE("dual of a single all-node edge is one node with self-singleton edges") {
  Hypergraph h;
  h.num_nodes = 3;
  h.edges = {{0, 1, 2}};
  h.node_features = Tensor(3, 2);
  Hypergraph d = dual(h);
  REQUIRE(d.num_nodes == 1);
  REQUIRE(d.num_edges() == 3);
  for (const auto& e : d.edges) REQUIRE(e == std::vector<NodeId>{0});
}

TEST_CASE("dual drops zero-degree nodes and records the mapping") {
  Hypergraph h;
  h.num_nodes = 4;  // node 3 isolated
  h.edges = {{0, 1}, {1, 2}};
  h.node_features = Tensor(4, 2);
  auto res = dual_with_map(h);
  REQUIRE(res.dual.num_edges() == 3);
  REQUIRE(res.kept_primal_nodes == std::vector<NodeId>{0, 1, 2});
  REQUIRE(res.dual.edge_features->rows() == 3);
}

TEST_CASE("dual involution on random hypergraphs with min degree >= 1") {
  RngStream rng(123);
  for (int i = 0; i < 50; ++i) {
    Hypergraph h = random_hypergraph(rng, true);
    Hypergraph dd = dual(dual(h));
    REQUIRE(dd.num_nodes == h.num_nodes);
    REQUIRE(dd.edges == h.edges);
    REQUIRE(max_abs_diff(dd.node_features, h.node_features) == 0.0);
    REQUIRE(max_abs_diff(*dd.edge_features, *h.edge_features) == 0.0);
  }
}

TEST_CASE("validate rejects malformed hypergraphs") {
  Hypergraph h = make_path_graph();
  SECTION("out of range node id") {
    h.edges[0] = {0, 5};
    REQUIRE_THROWS_AS(h.validate(), DataError);
  }
  SECTION("unsorted edge") {
    h.edges[0] = {1, 0};
    REQUIRE_THROWS_AS(h.validate(), DataError);
  }
  SECTION("duplicate member") {
    h.edges[0] = {1, 1};
    REQUIRE_THROWS_AS(h.validate(), DataError);
  }
  SECTION("empty edge") {
    h.edges[0] = {};
    REQUIRE_THROWS_AS(h.validate(), DataError);
  }
  SECTION("feature row mismatch") {
    h.node_features = Tensor(2, 2);
    REQUIRE_THROWS_AS(h.validate(), DataError);
  }
  SECTION("label length mismatch") {
    h.labels = std::vector<std::int64_t>{0};
    REQUIRE_THROWS_AS(h.validate(), DataError);
  }
}
