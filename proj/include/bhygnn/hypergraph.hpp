#pragma once

// Hypergraph data model: incidence as edge lists, degrees, homophily metrics,
// the dual transform, and edge-feature synthesis.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bhygnn/errors.hpp"
#include "bhygnn/tensor.hpp"

namespace bhygnn {

using NodeId = std::int64_t;
using EdgeId = std::int64_t;

// Immutable after construction; share freely across threads.
struct Hypergraph {
  std::int64_t num_nodes = 0;
  std::vector<std::vector<NodeId>> edges;  // each sorted, duplicate-free, non-empty
  Tensor node_features;                    // num_nodes x d_v
  std::optional<Tensor> edge_features;     // edges.size() x d_e
  std::optional<std::vector<std::int64_t>> labels;  // length num_nodes

  std::int64_t num_edges() const { return static_cast<std::int64_t>(edges.size()); }

  std::int64_t num_classes() const {
    if (!labels) return 0;
    std::int64_t m = -1;
    for (auto y : *labels) m = std::max(m, y);
    return m + 1;
  }

  void validate() const {
    for (std::size_t j = 0; j < edges.size(); ++j) {
      const auto& e = edges[j];
      if (e.empty()) throw DataError("edge " + std::to_string(j) + " is empty");
      for (std::size_t i = 0; i < e.size(); ++i) {
        if (e[i] < 0 || e[i] >= num_nodes)
          throw DataError("edge " + std::to_string(j) + " has out-of-range node id " +
                          std::to_string(e[i]));
        if (i > 0 && e[i] <= e[i - 1])
          throw DataError("edge " + std::to_string(j) + " is not sorted/duplicate-free");
      }
    }
    if (node_features.rows() != num_nodes)
      throw DataError("node feature rows != node count");
    if (edge_features && edge_features->rows() != num_edges())
      throw DataError("edge feature rows != edge count");
    if (labels && static_cast<std::int64_t>(labels->size()) != num_nodes)
      throw DataError("label count != node count");
  }
};

// All (node, edge) memberships, ordered by (edge, node).
inline std::vector<std::pair<NodeId, EdgeId>> incidence_pairs(const Hypergraph& h) {
  std::vector<std::pair<NodeId, EdgeId>> out;
  for (EdgeId j = 0; j < h.num_edges(); ++j)
    for (NodeId v : h.edges[static_cast<std::size_t>(j)]) out.emplace_back(v, j);
  return out;
}

inline std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> degrees(
    const Hypergraph& h) {
  std::vector<std::int64_t> dv(static_cast<std::size_t>(h.num_nodes), 0);
  std::vector<std::int64_t> de(h.edges.size(), 0);
  for (std::size_t j = 0; j < h.edges.size(); ++j) {
    de[j] = static_cast<std::int64_t>(h.edges[j].size());
    for (NodeId v : h.edges[j]) dv[static_cast<std::size_t>(v)]++;
  }
  return {std::move(dv), std::move(de)};
}

struct HomophilyReport {
  std::vector<double> per_node;  // in [0,1]
  std::vector<double> per_edge;  // in [0,1]
  double mean_node = 0.0;
  double mean_edge = 0.0;
};

// h(e): largest same-class fraction of an edge's members.
// h(v): fraction of memberships across v's incident edges (v included) that
// share v's label; 0 for nodes in no edge.
inline HomophilyReport homophily(const Hypergraph& h) {
  if (!h.labels) throw DataError("labels required");
  const auto& y = *h.labels;
  const std::int64_t classes = h.num_classes();
  HomophilyReport rep;
  rep.per_node.assign(static_cast<std::size_t>(h.num_nodes), 0.0);
  rep.per_edge.reserve(h.edges.size());

  std::vector<std::int64_t> same(static_cast<std::size_t>(h.num_nodes), 0);
  std::vector<std::int64_t> total(static_cast<std::size_t>(h.num_nodes), 0);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(std::max<std::int64_t>(classes, 1)));
  for (const auto& e : h.edges) {
    std::fill(counts.begin(), counts.end(), 0);
    for (NodeId v : e) counts[static_cast<std::size_t>(y[static_cast<std::size_t>(v)])]++;
    std::int64_t best = 0;
    for (auto c : counts) best = std::max(best, c);
    rep.per_edge.push_back(static_cast<double>(best) / static_cast<double>(e.size()));
    for (NodeId v : e) {
      same[static_cast<std::size_t>(v)] +=
          counts[static_cast<std::size_t>(y[static_cast<std::size_t>(v)])];
      total[static_cast<std::size_t>(v)] += static_cast<std::int64_t>(e.size());
    }
  }
  for (std::int64_t v = 0; v < h.num_nodes; ++v)
    if (total[static_cast<std::size_t>(v)] > 0)
      rep.per_node[static_cast<std::size_t>(v)] =
          static_cast<double>(same[static_cast<std::size_t>(v)]) /
          static_cast<double>(total[static_cast<std::size_t>(v)]);

  double sn = 0.0, se = 0.0;
  for (double x : rep.per_node) sn += x;
  for (double x : rep.per_edge) se += x;
  rep.mean_node = rep.per_node.empty() ? 0.0 : sn / static_cast<double>(rep.per_node.size());
  rep.mean_edge = rep.per_edge.empty() ? 0.0 : se / static_cast<double>(rep.per_edge.size());
  return rep;
}

// X_E[j] = mean of member node feature rows of edge j.
inline Tensor synthesize_edge_features(const Hypergraph& h) {
  const std::int64_t d = h.node_features.cols();
  Tensor out(h.num_edges(), d);
  for (EdgeId j = 0; j < h.num_edges(); ++j) {
    const auto& e = h.edges[static_cast<std::size_t>(j)];
    for (NodeId v : e)
      for (std::int64_t c = 0; c < d; ++c) out(j, c) += h.node_features(v, c);
    for (std::int64_t c = 0; c < d; ++c) out(j, c) /= static_cast<double>(e.size());
  }
  return out;
}

struct DualResult {
  Hypergraph dual;
  // Primal node ids that became dual edges, in dual-edge order. Zero-degree
  // primal nodes would be empty dual edges and are dropped.
  std::vector<NodeId> kept_primal_nodes;
};

// Incidence transpose: dual nodes are the primal edges and vice versa. Dual
// node features are the primal edge features (synthesized from member means
// when absent); dual edge features are the primal node features.
inline DualResult dual_with_map(const Hypergraph& h) {
  DualResult res;
  Hypergraph& d = res.dual;
  d.num_nodes = h.num_edges();
  d.node_features = h.edge_features ? *h.edge_features : synthesize_edge_features(h);

  std::vector<std::vector<EdgeId>> incident(static_cast<std::size_t>(h.num_nodes));
  for (EdgeId j = 0; j < h.num_edges(); ++j)
    for (NodeId v : h.edges[static_cast<std::size_t>(j)])
      incident[static_cast<std::size_t>(v)].push_back(j);

  std::vector<std::int64_t> kept_rows;
  for (NodeId v = 0; v < h.num_nodes; ++v) {
    if (incident[static_cast<std::size_t>(v)].empty()) continue;  // would be an empty edge
    d.edges.push_back(incident[static_cast<std::size_t>(v)]);     // ascending by construction
    res.kept_primal_nodes.push_back(v);
    kept_rows.push_back(v);
  }
  Tensor ef(static_cast<std::int64_t>(kept_rows.size()), h.node_features.cols());
  for (std::size_t i = 0; i < kept_rows.size(); ++i)
    for (std::int64_t c = 0; c < h.node_features.cols(); ++c)
      ef(static_cast<std::int64_t>(i), c) = h.node_features(kept_rows[i], c);
  d.edge_features = std::move(ef);
  return res;
}

inline Hypergraph dual(const Hypergraph& h) { return dual_with_map(h).dual; }

}  // namespace bhygnn
