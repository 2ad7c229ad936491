#pragma once

// The hypergraph encoder: variational action sampling (VBA-Net), the gated
// two-phase convolution layer (edge update then node update), input
// projections, readout, and the projection head.
//
// The convolution is evaluated in batched form: all incidence rows of a phase
// are processed together, with per-incidence gates scaling the stacked
// [row-pair] inputs and a masked segment softmax realizing attention over each
// edge's (or node's) active incorporation set. This is numerically the same
// map as per-set multihead_set_attention over the active rows.

#include <cstdint>
#include <memory>
#include <vector>

#include "bhygnn/hypergraph.hpp"
#include "bhygnn/nn.hpp"

namespace bhygnn {

// Incidence arrays shared by all ops of one view; order matches
// incidence_pairs (sorted by edge, then node).
struct IncidenceIndex {
  ad::IndexVec node_of;  // per incidence
  ad::IndexVec edge_of;
  std::int64_t n_nodes = 0;
  std::int64_t n_edges = 0;

  static IncidenceIndex build(const Hypergraph& h) {
    auto nodes = std::make_shared<std::vector<std::int64_t>>();
    auto edges = std::make_shared<std::vector<std::int64_t>>();
    for (EdgeId j = 0; j < h.num_edges(); ++j)
      for (NodeId v : h.edges[static_cast<std::size_t>(j)]) {
        nodes->push_back(v);
        edges->push_back(j);
      }
    IncidenceIndex idx;
    idx.node_of = nodes;
    idx.edge_of = edges;
    idx.n_nodes = h.num_nodes;
    idx.n_edges = h.num_edges();
    return idx;
  }

  std::int64_t count() const { return static_cast<std::int64_t>(node_of->size()); }
};

enum class ActionMode {
  HardSample,  // straight-through one-hot samples (training default)
  SoftSample,  // relaxed samples in (0,1), everything differentiable
  Expected     // a = p, H = mu; deterministic (inference)
};

struct VbaNetParams {
  AffineParams node_trunk, node_mu, node_lv;
  AffineParams edge_trunk, edge_mu, edge_lv;
  std::int64_t latent = 0;

  static VbaNetParams create(ParamStore& store, const std::string& prefix, std::int64_t hidden,
                             std::int64_t latent, RngStream& rng) {
    VbaNetParams p;
    p.latent = latent;
    auto r0 = rng.child(0), r1 = rng.child(1), r2 = rng.child(2);
    auto r3 = rng.child(3), r4 = rng.child(4), r5 = rng.child(5);
    p.node_trunk = AffineParams::create(store, prefix + "/node", hidden, hidden, r0);
    p.node_mu = AffineParams::create(store, prefix + "/node_mu", hidden, latent, r1);
    p.node_lv = AffineParams::create(store, prefix + "/node_lv", hidden, latent, r2);
    p.edge_trunk = AffineParams::create(store, prefix + "/edge", hidden, hidden, r3);
    p.edge_mu = AffineParams::create(store, prefix + "/edge_mu", hidden, latent, r4);
    p.edge_lv = AffineParams::create(store, prefix + "/edge_lv", hidden, latent, r5);
    return p;
  }
};

struct ActionSample {
  ad::Var action = nullptr;  // R x 1, in [0,1]
  ad::Var prob = nullptr;    // R x 1, in (0,1)
  ad::Var mu_node = nullptr, lv_node = nullptr;
  ad::Var mu_edge = nullptr, lv_edge = nullptr;
  std::vector<std::uint8_t> active;  // per incidence; hard mode only excludes rows
};

// H_V and H_E from the variational posteriors; per incidence (v,e):
// p = sigmoid(H_v . H_e) and the action is component 0 of Gumbel-Softmax on
// [log p, log(1-p)]. In Expected mode H = mu and a = p.
inline ActionSample vba_sample(ad::Tape& t, const VbaNetParams& vba, ad::Var zv, ad::Var ze,
                               const IncidenceIndex& idx, ActionMode mode, double tau,
                               RngStream rng) {
  ActionSample s;
  ad::Var tn = t.relu(vba.node_trunk.apply(t, zv));
  s.mu_node = vba.node_mu.apply(t, tn);
  s.lv_node = vba.node_lv.apply(t, tn);
  ad::Var te = t.relu(vba.edge_trunk.apply(t, ze));
  s.mu_edge = vba.edge_mu.apply(t, te);
  s.lv_edge = vba.edge_lv.apply(t, te);

  auto rng_n = rng.child(0);
  auto rng_e = rng.child(1);
  ad::Var hv = mode == ActionMode::Expected ? s.mu_node
                                            : reparameterize(t, s.mu_node, s.lv_node, rng_n);
  ad::Var he = mode == ActionMode::Expected ? s.mu_edge
                                            : reparameterize(t, s.mu_edge, s.lv_edge, rng_e);

  s.prob = t.sigmoid(t.incidence_dot(hv, idx.node_of, he, idx.edge_of));

  const std::int64_t r = idx.count();
  if (mode == ActionMode::Expected) {
    s.action = s.prob;
    s.active.assign(static_cast<std::size_t>(r), 1);
    return s;
  }
  auto rng_g = rng.child(2);
  Tensor noise = Tensor::uninit(r, 2);
  for (std::int64_t i = 0; i < r; ++i) {
    noise(i, 0) = rng_g.gumbel();
    noise(i, 1) = rng_g.gumbel();
  }
  s.action = t.binary_gumbel_action(s.prob, tau, mode == ActionMode::HardSample, std::move(noise));
  s.active.assign(static_cast<std::size_t>(r), 1);
  if (mode == ActionMode::HardSample)
    for (std::int64_t i = 0; i < r; ++i)
      s.active[static_cast<std::size_t>(i)] = s.action->value(i, 0) > 0.5 ? 1 : 0;
  return s;
}

namespace enc_detail {

// Gated, masked multi-head set attention over incidence rows, batched across
// all segments of a phase. left/right are the two halves of the stacked rows;
// rows with active=0 are excluded from the softmax, and segments with no
// active row fall back to the self pair [fb || fb].
inline ad::Var attention_phase(ad::Tape& t, const AttentionParams& att, ad::Var left_src,
                               ad::IndexVec left_idx, ad::Var right_src, ad::IndexVec right_idx,
                               ad::IndexVec seg, std::int64_t segments, ad::Var gate,
                               const std::vector<std::uint8_t>& active, ad::Var fb_src,
                               std::int64_t hidden) {
  const auto heads = static_cast<std::int64_t>(att.heads.size());
  const std::int64_t dh = att.d_head;
  const std::int64_t r = static_cast<std::int64_t>(seg->size());

  // First layers of every head's K and V MLP fused into one matrix per side:
  // column blocks [K_0 .. K_{h-1} V_0 .. V_{h-1}].
  std::vector<ad::Var> wl, wr, bias;
  for (std::int64_t i = 0; i < heads; ++i) {
    ad::Var w = t.leaf(*att.heads[static_cast<std::size_t>(i)].key.l1.w);
    wl.push_back(t.slice_rows(w, 0, hidden));
    wr.push_back(t.slice_rows(w, hidden, hidden));
    bias.push_back(t.leaf(*att.heads[static_cast<std::size_t>(i)].key.l1.b));
  }
  for (std::int64_t i = 0; i < heads; ++i) {
    ad::Var w = t.leaf(*att.heads[static_cast<std::size_t>(i)].value.l1.w);
    wl.push_back(t.slice_rows(w, 0, hidden));
    wr.push_back(t.slice_rows(w, hidden, hidden));
    bias.push_back(t.leaf(*att.heads[static_cast<std::size_t>(i)].value.l1.b));
  }
  ad::Var w_left = t.concat_cols(wl);
  ad::Var w_right = t.concat_cols(wr);
  ad::Var bias_all = t.concat_cols(bias);

  ad::Var f = t.matmul(left_src, w_left);
  ad::Var g = t.matmul(right_src, w_right);
  ad::Var x = t.gather_sum_rows(f, left_idx, g, right_idx);
  x = t.scale_rows_bias_relu(x, gate, bias_all);

  // Per-segment bookkeeping (constants w.r.t. the graph).
  std::vector<std::uint8_t> seg_active(static_cast<std::size_t>(segments), 0);
  for (std::int64_t i = 0; i < r; ++i)
    if (active[static_cast<std::size_t>(i)]) seg_active[static_cast<std::size_t>((*seg)[i])] = 1;
  auto inactive_ids = std::make_shared<std::vector<std::int64_t>>();
  for (std::int64_t s = 0; s < segments; ++s)
    if (!seg_active[static_cast<std::size_t>(s)]) inactive_ids->push_back(s);

  bool all_active = true;
  for (std::int64_t i = 0; i < r; ++i)
    if (!active[static_cast<std::size_t>(i)]) all_active = false;
  ad::Var mask_c = nullptr;
  if (!all_active) {
    Tensor mask = Tensor::uninit(r, 1);
    for (std::int64_t i = 0; i < r; ++i)
      mask(i, 0) = active[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    mask_c = t.constant(std::move(mask));
  }

  std::vector<ad::Var> outs;
  for (std::int64_t i = 0; i < heads; ++i) {
    const auto& head = att.heads[static_cast<std::size_t>(i)];
    // theta . K_r folded through the key MLP's linear output layer:
    // (h W2 + b2) theta^T = h (W2 theta^T) + b2 theta^T
    ad::Var theta = t.leaf(*head.theta);
    ad::Var w2t = t.matmul(t.leaf(*head.key.l2.w), theta, false, true);     // dh x 1
    ad::Var b2t = t.matmul(t.leaf(*head.key.l2.b), theta, false, true);     // 1 x 1
    ad::Var logit = t.affine_cols(x, i * dh, dh, w2t, b2t);                 // r x 1

    // Detached per-segment max over active rows keeps exp() in range; the
    // shift cancels exactly in the softmax.
    Tensor shift = Tensor::uninit(r, 1);
    {
      std::vector<double> seg_max(static_cast<std::size_t>(segments),
                                  -std::numeric_limits<double>::infinity());
      for (std::int64_t q = 0; q < r; ++q)
        if (active[static_cast<std::size_t>(q)]) {
          auto sgi = static_cast<std::size_t>((*seg)[q]);
          seg_max[sgi] = std::max(seg_max[sgi], logit->value(q, 0));
        }
      for (std::int64_t q = 0; q < r; ++q) {
        const double m = seg_max[static_cast<std::size_t>((*seg)[q])];
        shift(q, 0) = std::isfinite(m) ? -m : 0.0;
      }
    }
    ad::Var e = t.exp(t.add(logit, t.constant(std::move(shift))));
    if (mask_c) e = t.mul(e, mask_c);
    ad::Var denom = t.segment_sum_rows(e, seg, segments);
    if (!inactive_ids->empty()) {
      Tensor adj(segments, 1);
      for (auto s : *inactive_ids) adj(s, 0) = 1.0;  // avoid 0/0 in empty segments
      denom = t.add(denom, t.constant(std::move(adj)));
    }
    ad::Var w = t.div(e, t.gather_rows(denom, seg));

    ad::Var v = t.affine_cols(x, (heads + i) * dh, dh, t.leaf(*head.value.l2.w),
                              t.leaf(*head.value.l2.b));
    outs.push_back(t.segment_weighted_sum(v, w, seg, segments));
  }
  ad::Var out = t.concat_cols(outs);  // segments x (heads*d_head)

  if (inactive_ids->empty()) return out;

  // Self-pair fallback rows for the segments with empty incorporation sets;
  // their pooled rows are exactly zero, so the patch just adds in place.
  ad::Var fb_rows = t.gather_rows(fb_src, inactive_ids);
  ad::Var fbx = t.relu(
      t.add_rowvec(t.add(t.matmul(fb_rows, w_left), t.matmul(fb_rows, w_right)), bias_all));
  std::vector<ad::Var> fb_outs;
  for (std::int64_t i = 0; i < heads; ++i) {
    const auto& head = att.heads[static_cast<std::size_t>(i)];
    fb_outs.push_back(t.affine_cols(fbx, (heads + i) * dh, dh, t.leaf(*head.value.l2.w),
                                    t.leaf(*head.value.l2.b)));
  }
  return t.scatter_add_rows(out, inactive_ids, t.concat_cols(fb_outs));
}

}  // namespace enc_detail

struct BhygnnLayerParams {
  VbaNetParams vba_broadcast, vba_receive;
  AttentionParams att_edge, att_node;
  std::int64_t hidden = 0;

  static BhygnnLayerParams create(ParamStore& store, const std::string& prefix,
                                  std::int64_t hidden, std::int64_t heads, std::int64_t d_head,
                                  std::int64_t latent, RngStream& rng) {
    if (heads * d_head != hidden)
      throw DataError("layer params: heads * d_head must equal hidden");
    BhygnnLayerParams p;
    p.hidden = hidden;
    auto r0 = rng.child(0), r1 = rng.child(1), r2 = rng.child(2), r3 = rng.child(3);
    p.vba_broadcast = VbaNetParams::create(store, prefix + "/vbaB", hidden, latent, r0);
    p.vba_receive = VbaNetParams::create(store, prefix + "/vbaR", hidden, latent, r1);
    p.att_edge = AttentionParams::create(store, prefix + "/attE", heads, 2 * hidden, d_head, r2);
    p.att_node = AttentionParams::create(store, prefix + "/attV", heads, 2 * hidden, d_head, r3);
    return p;
  }
};

struct ConvResult {
  ad::Var zv = nullptr;
  ad::Var ze = nullptr;
  ActionSample broadcast, receive;
};

// One convolution: sample broadcast actions, update hyperedges from gated
// [Z_v || Z_e] rows, sample receive actions against the updated edges, update
// nodes from gated [Z_e' || Z_v] rows.
inline ConvResult bhygnn_conv(ad::Tape& t, const BhygnnLayerParams& layer,
                              const IncidenceIndex& idx, ad::Var zv, ad::Var ze, ActionMode mode,
                              double tau, RngStream rng) {
  ConvResult res;
  res.broadcast = vba_sample(t, layer.vba_broadcast, zv, ze, idx, mode, tau, rng.child(0));
  res.ze = enc_detail::attention_phase(t, layer.att_edge, zv, idx.node_of, ze, idx.edge_of,
                                       idx.edge_of, idx.n_edges, res.broadcast.action,
                                       res.broadcast.active, ze, layer.hidden);
  res.receive = vba_sample(t, layer.vba_receive, zv, res.ze, idx, mode, tau, rng.child(1));
  res.zv = enc_detail::attention_phase(t, layer.att_node, res.ze, idx.edge_of, zv, idx.node_of,
                                       idx.node_of, idx.n_nodes, res.receive.action,
                                       res.receive.active, zv, layer.hidden);
  return res;
}

enum class ViewSide { Primal, Dual };

struct EncoderParams {
  AffineParams primal_node_proj, primal_edge_proj;
  AffineParams dual_node_proj, dual_edge_proj;
  std::vector<BhygnnLayerParams> layers;
  AffineParams head1, head2;  // projection head
  std::int64_t hidden = 0, heads = 0, d_head = 0, latent = 0, proj_dim = 0;

  // d_node / d_edge are the primal feature dims; the dual view swaps them.
  static EncoderParams create(ParamStore& store, std::int64_t d_node, std::int64_t d_edge,
                              std::int64_t hidden, std::int64_t heads, std::int64_t d_head,
                              std::int64_t num_layers, std::int64_t latent, std::int64_t proj_dim,
                              RngStream rng) {
    if (num_layers < 1) throw DataError("encoder: need at least one layer");
    EncoderParams e;
    e.hidden = hidden;
    e.heads = heads;
    e.d_head = d_head;
    e.latent = latent;
    e.proj_dim = proj_dim;
    auto r0 = rng.child(0), r1 = rng.child(1), r2 = rng.child(2), r3 = rng.child(3);
    e.primal_node_proj = AffineParams::create(store, "enc/proj_primal_node", d_node, hidden, r0);
    e.primal_edge_proj = AffineParams::create(store, "enc/proj_primal_edge", d_edge, hidden, r1);
    e.dual_node_proj = AffineParams::create(store, "enc/proj_dual_node", d_edge, hidden, r2);
    e.dual_edge_proj = AffineParams::create(store, "enc/proj_dual_edge", d_node, hidden, r3);
    for (std::int64_t l = 0; l < num_layers; ++l) {
      auto rl = rng.child(100 + static_cast<std::uint64_t>(l));
      e.layers.push_back(BhygnnLayerParams::create(store, "enc/layer" + std::to_string(l), hidden,
                                                   heads, d_head, latent, rl));
    }
    auto rh1 = rng.child(200), rh2 = rng.child(201);
    e.head1 = AffineParams::create(store, "enc/head1", hidden, hidden, rh1);
    e.head2 = AffineParams::create(store, "enc/head2", hidden, proj_dim, rh2);
    return e;
  }
};

struct EncodeResult {
  ad::Var zv = nullptr;  // N x hidden
  ad::Var ze = nullptr;  // M x hidden
  std::vector<ConvResult> layers;
};

inline EncodeResult encode(ad::Tape& t, const EncoderParams& enc, const Hypergraph& view,
                           ViewSide side, ActionMode mode, double tau, RngStream rng) {
  const AffineParams& node_proj =
      side == ViewSide::Primal ? enc.primal_node_proj : enc.dual_node_proj;
  const AffineParams& edge_proj =
      side == ViewSide::Primal ? enc.primal_edge_proj : enc.dual_edge_proj;
  if (view.node_features.cols() != node_proj.w->value.rows())
    throw DataError("encode: node feature dim does not match projection");

  Tensor xe = view.edge_features ? *view.edge_features : synthesize_edge_features(view);
  if (xe.cols() != edge_proj.w->value.rows())
    throw DataError("encode: edge feature dim does not match projection");

  EncodeResult res;
  ad::Var zv = node_proj.apply(t, t.constant(view.node_features));
  ad::Var ze = edge_proj.apply(t, t.constant(std::move(xe)));
  auto idx = IncidenceIndex::build(view);
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    auto conv = bhygnn_conv(t, enc.layers[l], idx, zv, ze, mode, tau,
                            rng.child(static_cast<std::uint64_t>(l)));
    zv = conv.zv;
    ze = conv.ze;
    res.layers.push_back(std::move(conv));
  }
  res.zv = zv;
  res.ze = ze;
  return res;
}

// Column-wise mean of the node embeddings.
inline ad::Var readout(ad::Tape& t, ad::Var zv) {
  if (zv->value.rows() < 1) throw DataError("readout: no nodes");
  return t.col_mean(zv);
}

// Two-layer projection head; used only for the contrastive objective.
inline ad::Var project(ad::Tape& t, const EncoderParams& enc, ad::Var z) {
  return enc.head2.apply(t, t.relu(enc.head1.apply(t, z)));
}

}  // namespace bhygnn
