#pragma once

// The four stochastic hypergraph augmentation operators. Every operator is a
// pure function of (input, spec); the spec carries the seed, so identical
// inputs give byte-identical outputs.

#include <algorithm>
#include <cstdio>
#include <vector>

#include "bhygnn/hypergraph.hpp"
#include "bhygnn/rng.hpp"

namespace bhygnn {

enum class AugKind { MaskNodeAttrs, PerturbHyperedges, DropHyperedges, DropNodes };

struct AugmentationSpec {
  AugKind kind = AugKind::MaskNodeAttrs;
  double ratio = 0.2;                     // fraction of nodes/edges touched
  double noise_std = 1.0;                 // MaskNodeAttrs
  double member_removal_fraction = 1.0 / 3.0;  // PerturbHyperedges
  std::uint64_t seed = 0;
};

// Adds N(0, noise_std^2) noise to round(ratio*N) uniformly chosen feature
// rows; structure and labels untouched.
inline Hypergraph mask_node_attrs(const Hypergraph& h, const AugmentationSpec& spec) {
  RngStream rng(spec.seed);
  Hypergraph out = h;
  const std::int64_t k = rounded_fraction(spec.ratio, h.num_nodes);
  auto picked = sample_without_replacement(h.num_nodes, k, rng);
  std::sort(picked.begin(), picked.end());
  const std::int64_t d = out.node_features.cols();
  for (auto v : picked)
    for (std::int64_t c = 0; c < d; ++c) out.node_features(v, c) += spec.noise_std * rng.normal();
  return out;
}

// Removes min(max(1, floor(f*|e|)), |e|-1) members from each of
// round(ratio*M) chosen hyperedges; size-1 edges are left intact. Never adds.
inline Hypergraph perturb_hyperedges(const Hypergraph& h, const AugmentationSpec& spec) {
  RngStream rng(spec.seed);
  Hypergraph out = h;
  const std::int64_t k = rounded_fraction(spec.ratio, h.num_edges());
  auto picked = sample_without_replacement(h.num_edges(), k, rng);
  std::sort(picked.begin(), picked.end());
  for (auto j : picked) {
    auto& e = out.edges[static_cast<std::size_t>(j)];
    const auto sz = static_cast<std::int64_t>(e.size());
    if (sz < 2) continue;
    std::int64_t remove =
        static_cast<std::int64_t>(spec.member_removal_fraction * static_cast<double>(sz));
    remove = std::min(std::max<std::int64_t>(remove, 1), sz - 1);
    auto victims = sample_without_replacement(sz, remove, rng);
    std::sort(victims.begin(), victims.end(), std::greater<>());
    for (auto pos : victims) e.erase(e.begin() + pos);
  }
  return out;
}

// Deletes round(ratio*M) hyperedges; survivors keep their relative order.
inline Hypergraph drop_hyperedges(const Hypergraph& h, const AugmentationSpec& spec) {
  RngStream rng(spec.seed);
  const std::int64_t k = rounded_fraction(spec.ratio, h.num_edges());
  auto picked = sample_without_replacement(h.num_edges(), k, rng);
  std::vector<bool> dropped(h.edges.size(), false);
  for (auto j : picked) dropped[static_cast<std::size_t>(j)] = true;

  Hypergraph out;
  out.num_nodes = h.num_nodes;
  out.node_features = h.node_features;
  out.labels = h.labels;
  std::vector<std::int64_t> kept;
  for (std::size_t j = 0; j < h.edges.size(); ++j)
    if (!dropped[j]) {
      out.edges.push_back(h.edges[j]);
      kept.push_back(static_cast<std::int64_t>(j));
    }
  if (h.edge_features) {
    Tensor ef(static_cast<std::int64_t>(kept.size()), h.edge_features->cols());
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::int64_t c = 0; c < ef.cols(); ++c)
        ef(static_cast<std::int64_t>(i), c) = (*h.edge_features)(kept[i], c);
    out.edge_features = std::move(ef);
  }
  if (out.edges.empty() && h.num_edges() > 0)
    std::fprintf(stderr, "warning: drop_hyperedges removed every hyperedge\n");
  return out;
}

struct DropNodesResult {
  Hypergraph hypergraph;
  // old node id -> new node id, or -1 if dropped.
  std::vector<std::int64_t> remap;
};

// Deletes round(ratio*N) nodes with all their incidences; surviving nodes are
// re-indexed densely in order, empty edges are removed.
inline DropNodesResult drop_nodes(const Hypergraph& h, const AugmentationSpec& spec) {
  RngStream rng(spec.seed);
  const std::int64_t k = rounded_fraction(spec.ratio, h.num_nodes);
  auto picked = sample_without_replacement(h.num_nodes, k, rng);
  std::vector<bool> dropped(static_cast<std::size_t>(h.num_nodes), false);
  for (auto v : picked) dropped[static_cast<std::size_t>(v)] = true;

  DropNodesResult res;
  res.remap.assign(static_cast<std::size_t>(h.num_nodes), -1);
  std::vector<std::int64_t> kept;
  for (std::int64_t v = 0; v < h.num_nodes; ++v)
    if (!dropped[static_cast<std::size_t>(v)]) {
      res.remap[static_cast<std::size_t>(v)] = static_cast<std::int64_t>(kept.size());
      kept.push_back(v);
    }

  Hypergraph& out = res.hypergraph;
  out.num_nodes = static_cast<std::int64_t>(kept.size());
  Tensor nf(out.num_nodes, h.node_features.cols());
  for (std::size_t i = 0; i < kept.size(); ++i)
    for (std::int64_t c = 0; c < nf.cols(); ++c)
      nf(static_cast<std::int64_t>(i), c) = h.node_features(kept[i], c);
  out.node_features = std::move(nf);
  if (h.labels) {
    std::vector<std::int64_t> y;
    y.reserve(kept.size());
    for (auto v : kept) y.push_back((*h.labels)[static_cast<std::size_t>(v)]);
    out.labels = std::move(y);
  }
  std::vector<std::int64_t> kept_edges;
  for (std::size_t j = 0; j < h.edges.size(); ++j) {
    std::vector<NodeId> e;
    for (NodeId v : h.edges[j]) {
      const auto nv = res.remap[static_cast<std::size_t>(v)];
      if (nv >= 0) e.push_back(nv);  // ascending because the remap is monotone
    }
    if (!e.empty()) {
      out.edges.push_back(std::move(e));
      kept_edges.push_back(static_cast<std::int64_t>(j));
    }
  }
  if (h.edge_features) {
    Tensor ef(static_cast<std::int64_t>(kept_edges.size()), h.edge_features->cols());
    for (std::size_t i = 0; i < kept_edges.size(); ++i)
      for (std::int64_t c = 0; c < ef.cols(); ++c)
        ef(static_cast<std::int64_t>(i), c) = (*h.edge_features)(kept_edges[i], c);
    out.edge_features = std::move(ef);
  }
  return res;
}

inline Hypergraph apply_augmentation(const Hypergraph& h, const AugmentationSpec& spec) {
  switch (spec.kind) {
    case AugKind::MaskNodeAttrs:
      return mask_node_attrs(h, spec);
    case AugKind::PerturbHyperedges:
      return perturb_hyperedges(h, spec);
    case AugKind::DropHyperedges:
      return drop_hyperedges(h, spec);
    case AugKind::DropNodes:
      return drop_nodes(h, spec).hypergraph;
  }
  throw DataError("unknown augmentation kind");
}

}  // namespace bhygnn
