#pragma once

// Synthetic heterophilic hypergraph generation: a contextual stochastic block
// model over hyperedges plus label-dependent Gaussian node features, and the
// train/val/test split helper.

#include <algorithm>
#include <cstdio>
#include <vector>

#include "bhygnn/hypergraph.hpp"
#include "bhygnn/rng.hpp"

namespace bhygnn {

struct SyntheticSpec {
  std::int64_t num_classes = 4;
  std::int64_t nodes_per_class = 500;
  std::int64_t edges_per_class = 250;
  std::int64_t edge_size = 15;
  std::int64_t majority_count = 5;
  std::int64_t feature_dim = 100;
  double noise_std = 0.6;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_classes < 2) throw DataError("synthetic spec: need at least 2 classes");
    if (majority_count > edge_size) throw DataError("synthetic spec: majority_count > edge_size");
    if (majority_count > nodes_per_class)
      throw DataError("synthetic spec: majority_count > nodes_per_class");
    if (majority_count < 1 || edge_size < 1) throw DataError("synthetic spec: empty edges");
    if (feature_dim < num_classes) throw DataError("synthetic spec: feature_dim < num_classes");
    if (edge_size - majority_count > (num_classes - 1) * nodes_per_class)
      throw DataError("synthetic spec: edge_size exceeds available minority pool");
  }
};

// Row v = one-hot(y_v) zero-padded to feature_dim plus i.i.d. N(0, sigma^2)
// noise on every coordinate.
inline Tensor contextual_features(const std::vector<std::int64_t>& labels,
                                  std::int64_t feature_dim, double sigma, std::uint64_t seed) {
  RngStream rng(seed);
  Tensor x(static_cast<std::int64_t>(labels.size()), feature_dim);
  for (std::size_t v = 0; v < labels.size(); ++v) {
    x(static_cast<std::int64_t>(v), labels[v]) = 1.0;
    for (std::int64_t c = 0; c < feature_dim; ++c)
      x(static_cast<std::int64_t>(v), c) += sigma * rng.normal();
  }
  return x;
}

// Labels are laid out in class blocks: nodes [c*npc, (c+1)*npc) carry class c.
// For each class, edges draw majority_count members from that class and the
// remaining slots uniformly from the pooled other classes, resampled until no
// minority class outnumbers the majority (so the generating class stays the
// majority; the cap is waived when infeasible). All draws are without
// replacement within an edge; duplicate edges across the hypergraph may occur.
inline Hypergraph generate_chsbm(const SyntheticSpec& spec) {
  spec.validate();
  RngStream rng(spec.seed);
  const std::int64_t C = spec.num_classes;
  const std::int64_t npc = spec.nodes_per_class;
  const std::int64_t n = C * npc;
  const std::int64_t minority = spec.edge_size - spec.majority_count;

  Hypergraph h;
  h.num_nodes = n;
  std::vector<std::int64_t> y(static_cast<std::size_t>(n));
  for (std::int64_t v = 0; v < n; ++v) y[static_cast<std::size_t>(v)] = v / npc;

  const bool cap_feasible = minority <= (C - 1) * spec.majority_count;
  auto cls_rng = rng.child(1);
  auto feat_seed = rng.child(2).seed();

  for (std::int64_t c = 0; c < C; ++c) {
    // pool of all non-class-c nodes, in ascending id order
    std::vector<NodeId> pool;
    pool.reserve(static_cast<std::size_t>(n - npc));
    for (std::int64_t v = 0; v < n; ++v)
      if (v / npc != c) pool.push_back(v);
    auto er = cls_rng.child(static_cast<std::uint64_t>(c));
    for (std::int64_t k = 0; k < spec.edges_per_class; ++k) {
      std::vector<NodeId> e;
      auto maj = sample_without_replacement(npc, spec.majority_count, er);
      for (auto i : maj) e.push_back(c * npc + i);
      std::vector<std::int64_t> counts(static_cast<std::size_t>(C));
      for (int attempt = 0;; ++attempt) {
        auto mino = sample_without_replacement(static_cast<std::int64_t>(pool.size()), minority, er);
        std::fill(counts.begin(), counts.end(), 0);
        for (auto i : mino) counts[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)] / npc)]++;
        const auto worst = *std::max_element(counts.begin(), counts.end());
        if (!cap_feasible || worst <= spec.majority_count) {
          for (auto i : mino) e.push_back(pool[static_cast<std::size_t>(i)]);
          break;
        }
      }
      std::sort(e.begin(), e.end());
      h.edges.push_back(std::move(e));
    }
  }

  h.node_features = contextual_features(y, spec.feature_dim, spec.noise_std, feat_seed);
  h.labels = std::move(y);
  h.validate();

  auto [dv, de] = degrees(h);
  const auto isolated = std::count(dv.begin(), dv.end(), 0);
  if (isolated > 0)
    std::fprintf(stderr, "warning: synthetic hypergraph has %lld isolated node(s)\n",
                 static_cast<long long>(isolated));
  return h;
}

struct SplitAssignment {
  std::vector<std::int64_t> train, val, test;
};

// Uniform random partition with exact rounded sizes: |train| = round(r0*N),
// |val| = round(r1*N), |test| = the rest.
inline SplitAssignment make_splits(std::int64_t n, double r_train, double r_val, double r_test,
                                   std::uint64_t seed) {
  if (std::abs(r_train + r_val + r_test - 1.0) > 1e-9)
    throw DataError("split ratios must sum to 1");
  const std::int64_t n_train = rounded_fraction(r_train, n);
  const std::int64_t n_val = rounded_fraction(r_val, n);
  if (n_train + n_val > n) throw DataError("split ratios leave no test set");
  RngStream rng(seed);
  auto perm = sample_without_replacement(n, n, rng);
  SplitAssignment s;
  s.train.assign(perm.begin(), perm.begin() + n_train);
  s.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
  s.test.assign(perm.begin() + n_train + n_val, perm.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

}  // namespace bhygnn
