#pragma once

// Training loops (supervised and self-supervised), deterministic inference
// embedding, and the frozen-encoder probe.
//
// Randomness layout: with root = RngStream(cfg.seed),
//   child(1)              encoder init
//   child(2)              classifier init (supervised only)
//   child(3)              split assignment
//   child(4).child(epoch) per-epoch base; then .child(view) and, inside a
//                         view, .child(0/1) augmentation seeds (primal/dual)
//                         and .child(2/3) encode streams (primal/dual)
// The SSL loop never reads labels; probe evaluation (when labels are given)
// only snapshots values and cannot influence the trajectory.

#include <atomic>
#include <cstdlib>
#include <optional>
#include <thread>
#include <vector>

#include "bhygnn/augment.hpp"
#include "bhygnn/checkpoint.hpp"
#include "bhygnn/config.hpp"
#include "bhygnn/datagen.hpp"
#include "bhygnn/losses.hpp"

namespace bhygnn {

inline int worker_threads() {
  if (const char* env = std::getenv("BHYGNN_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1 && v <= 64) return v;
  }
  return 2;
}

struct Model {
  std::unique_ptr<ParamStore> store;
  EncoderParams encoder;
  MlpParams classifier;  // empty unless supervised
};

inline Model build_model(const TrainConfig& cfg, std::int64_t d_node, std::int64_t d_edge,
                         std::int64_t num_classes) {
  Model m;
  m.store = std::make_unique<ParamStore>();
  RngStream root(cfg.seed);
  auto enc_rng = root.child(1);
  m.encoder = EncoderParams::create(*m.store, d_node, d_edge, cfg.hidden, cfg.heads, cfg.head_dim,
                                    cfg.layers, cfg.latent, cfg.proj_dim, enc_rng);
  if (cfg.mode == TrainMode::Supervised) {
    if (num_classes < 2) throw DataError("supervised training needs at least 2 classes");
    auto cls_rng = root.child(2);
    m.classifier = MlpParams::create(*m.store, "cls",
                                     {cfg.hidden, cfg.hidden, num_classes}, cls_rng);
  }
  return m;
}

inline SplitAssignment splits_for(const TrainConfig& cfg, std::int64_t n) {
  return make_splits(n, cfg.split_train, cfg.split_val, cfg.split_test,
                     RngStream(cfg.seed).child(3).seed());
}

struct MetricsRow {
  std::int64_t epoch = 0;
  double total = 0.0;
  double task = 0.0;     // l_ce or l_con depending on mode
  double vlb_sum = 0.0;  // per-layer sums (view-averaged in SSL)
  double reg_sum = 0.0;
  std::optional<double> train_acc;
  std::optional<double> val_acc;
};

inline std::string trace_header() { return "epoch,total,task,vlb,reg,train_acc,val_acc"; }

inline std::string format_trace_row(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.12g,%.12g,%.12g,%.12g", static_cast<long long>(r.epoch),
                r.total, r.task, r.vlb_sum, r.reg_sum);
  std::string s(buf);
  s += ",";
  if (r.train_acc) s += std::to_string(*r.train_acc);
  s += ",";
  if (r.val_acc) s += std::to_string(*r.val_acc);
  return s;
}

struct TrainOutcome {
  Model model;  // holds final-epoch values
  std::map<std::string, Tensor> best_values;
  double best_val_acc = -1.0;
  std::int64_t best_epoch = -1;
  std::vector<MetricsRow> trace;
};

// Deterministic node embeddings: expected actions (a = p), posterior means,
// no augmentation, no projection head.
inline Tensor embed(const Model& m, const Hypergraph& h,
                    ViewSide side = ViewSide::Primal) {
  ad::Tape t;
  auto res = encode(t, m.encoder, h, side, ActionMode::Expected, 1.0, RngStream(0));
  return res.zv->value;
}

struct ProbeResult {
  double train_acc = 0.0, val_acc = 0.0, test_acc = 0.0;
};

// Trains a fresh two-layer MLP on the train-split rows of fixed embeddings.
// Accuracies are reported at the best-validation epoch.
inline ProbeResult probe(const Tensor& embeddings, const std::vector<std::int64_t>& labels,
                         const SplitAssignment& splits, const ProbeConfig& cfg) {
  if (static_cast<std::int64_t>(labels.size()) != embeddings.rows())
    throw DataError("probe: label count != embedding rows");
  if (splits.train.empty() || splits.val.empty() || splits.test.empty())
    throw DataError("probe: empty split");
  std::int64_t classes = 0;
  for (auto y : labels) classes = std::max(classes, y + 1);

  ParamStore store;
  RngStream rng(cfg.seed);
  auto mlp = MlpParams::create(store, "probe", {embeddings.cols(), cfg.hidden, classes}, rng);
  AdamConfig adam;
  adam.lr = cfg.lr;

  double best_val = -1.0;
  std::map<std::string, Tensor> best;
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    store.zero_grads();
    ad::Tape t;
    ad::Var logits = mlp.apply(t, t.constant(embeddings));
    ad::Var loss = cross_entropy(t, logits, labels, splits.train);
    if (!std::isfinite(loss->value(0, 0)))
      throw NumericError("probe diverged at epoch " + std::to_string(epoch));
    t.backward(loss);
    t.harvest_param_grads();
    adam_step(store, adam);
    const double val = accuracy(logits->value, labels, splits.val);
    if (val > best_val) {
      best_val = val;
      best = store.snapshot_values();
    }
  }
  store.restore_values(best);
  ad::Tape t;
  const Tensor logits = mlp.apply(t, t.constant(embeddings))->value;
  ProbeResult r;
  r.train_acc = accuracy(logits, labels, splits.train);
  r.val_acc = accuracy(logits, labels, splits.val);
  r.test_acc = accuracy(logits, labels, splits.test);
  return r;
}

// ---- supervised ----

inline TrainOutcome train_supervised(const Hypergraph& h, const TrainConfig& cfg) {
  if (!h.labels) throw DataError("supervised training requires labels");
  h.validate();
  const auto& labels = *h.labels;
  const auto splits = splits_for(cfg, h.num_nodes);
  if (splits.train.empty() || splits.val.empty()) throw DataError("empty train or val split");

  const std::int64_t d_edge =
      h.edge_features ? h.edge_features->cols() : h.node_features.cols();
  TrainOutcome out;
  out.model = build_model(cfg, h.node_features.cols(), d_edge, h.num_classes());
  Model& m = out.model;
  RngStream root(cfg.seed);
  AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
  const ActionMode mode = cfg.hard ? ActionMode::HardSample : ActionMode::SoftSample;

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    m.store->zero_grads();
    ad::Tape t;
    auto enc_rng = root.child(4).child(static_cast<std::uint64_t>(epoch)).child(0).child(2);
    auto res = encode(t, m.encoder, h, ViewSide::Primal, mode, cfg.tau, enc_rng);
    ad::Var logits = m.classifier.apply(t, res.zv);
    ad::Var l_ce = cross_entropy(t, logits, labels, splits.train);

    LossBreakdown bd;
    ad::Var var_sum = nullptr;
    for (const auto& conv : res.layers) {
      auto lv = layer_var_loss(t, conv, cfg.lambda, cfg.recon_soft);
      bd.vlb_b.push_back(lv.vlb_b->value(0, 0));
      bd.reg_b.push_back(lv.reg_b->value(0, 0));
      bd.vlb_r.push_back(lv.vlb_r->value(0, 0));
      bd.reg_r.push_back(lv.reg_r->value(0, 0));
      var_sum = var_sum ? t.add(var_sum, lv.total) : lv.total;
    }
    ad::Var total = t.add(l_ce, t.scale(var_sum, cfg.alpha));
    bd.l_ce = l_ce->value(0, 0);
    bd.total = total->value(0, 0);
    if (!std::isfinite(bd.total))
      throw NumericError("supervised training diverged at epoch " + std::to_string(epoch));

    t.backward(total);
    t.harvest_param_grads();
    adam_step(*m.store, adam);

    MetricsRow row;
    row.epoch = epoch;
    row.total = bd.total;
    row.task = *bd.l_ce;
    row.vlb_sum = bd.sum_vlb();
    row.reg_sum = bd.sum_reg();
    row.train_acc = accuracy(logits->value, labels, splits.train);
    row.val_acc = accuracy(logits->value, labels, splits.val);
    out.trace.push_back(row);
    if (*row.val_acc > out.best_val_acc) {
      out.best_val_acc = *row.val_acc;
      out.best_epoch = epoch;
      out.best_values = m.store->snapshot_values();
    }
  }
  return out;
}

// Deterministic (expected-action) classification accuracies for a trained
// supervised model.
inline ProbeResult evaluate_supervised(const Model& m, const Hypergraph& h,
                                       const SplitAssignment& splits) {
  ad::Tape t;
  auto res = encode(t, m.encoder, h, ViewSide::Primal, ActionMode::Expected, 1.0, RngStream(0));
  const Tensor logits = m.classifier.apply(t, res.zv)->value;
  ProbeResult r;
  r.train_acc = accuracy(logits, *h.labels, splits.train);
  r.val_acc = accuracy(logits, *h.labels, splits.val);
  r.test_acc = accuracy(logits, *h.labels, splits.test);
  return r;
}

// ---- self-supervised ----

namespace train_detail {

inline AugKind view_kind(std::int64_t i) {
  switch (i % 4) {
    case 0: return AugKind::MaskNodeAttrs;
    case 1: return AugKind::PerturbHyperedges;
    case 2: return AugKind::DropHyperedges;
    default: return AugKind::DropNodes;
  }
}

inline AugmentationSpec view_spec(const TrainConfig& cfg, std::int64_t i, std::uint64_t seed) {
  AugmentationSpec s;
  s.kind = view_kind(i);
  switch (s.kind) {
    case AugKind::MaskNodeAttrs: s.ratio = cfg.p_mask; break;
    case AugKind::PerturbHyperedges: s.ratio = cfg.p_pert; break;
    case AugKind::DropHyperedges: s.ratio = cfg.p_drop_edge; break;
    case AugKind::DropNodes: s.ratio = cfg.p_drop_node; break;
  }
  s.noise_std = cfg.aug_noise_std;
  s.member_removal_fraction = cfg.member_removal_fraction;
  s.seed = seed;
  return s;
}

struct ViewOutcome {
  std::unique_ptr<ad::Tape> tape;
  double total = 0.0;      // this view's contribution to the objective
  double cos = 0.0;        // cosine similarity of the pair
  std::vector<double> vlb_b, reg_b, vlb_r, reg_r;  // per layer, both sides summed
};

}  // namespace train_detail

// One SSL epoch view: augment primal and dual, encode both with shared layer
// parameters, readout + project, and assemble
//   -(1/D) cos_i + alpha/(2D) * sum over both sides and layers of L_var.
inline train_detail::ViewOutcome run_ssl_view(const Model& m, const Hypergraph& h,
                                              const Hypergraph& h_dual, const TrainConfig& cfg,
                                              std::int64_t view, RngStream view_rng) {
  using train_detail::view_spec;
  train_detail::ViewOutcome out;
  out.tape = std::make_unique<ad::Tape>();
  ad::Tape& t = *out.tape;
  const std::int64_t d = cfg.num_views;
  const ActionMode mode = cfg.hard ? ActionMode::HardSample : ActionMode::SoftSample;

  const Hypergraph view_primal =
      apply_augmentation(h, view_spec(cfg, view, view_rng.child(0).seed()));
  const Hypergraph view_dual =
      apply_augmentation(h_dual, view_spec(cfg, view, view_rng.child(1).seed()));

  auto res_p = encode(t, m.encoder, view_primal, ViewSide::Primal, mode, cfg.tau, view_rng.child(2));
  auto res_d = encode(t, m.encoder, view_dual, ViewSide::Dual, mode, cfg.tau, view_rng.child(3));

  ad::Var zp = readout(t, res_p.zv);
  ad::Var zd = readout(t, res_d.zv);
  if (cfg.contrast_on_projection) {
    zp = project(t, m.encoder, zp);
    zd = project(t, m.encoder, zd);
  }
  ad::Var pair_loss = contrastive_loss(t, {{zd, zp}});  // = -cos
  out.cos = -pair_loss->value(0, 0);

  ad::Var var_sum = nullptr;
  const std::size_t layers = m.encoder.layers.size();
  out.vlb_b.assign(layers, 0.0);
  out.reg_b.assign(layers, 0.0);
  out.vlb_r.assign(layers, 0.0);
  out.reg_r.assign(layers, 0.0);
  for (const auto* res : {&res_p, &res_d}) {
    for (std::size_t l = 0; l < layers; ++l) {
      auto lv = layer_var_loss(t, res->layers[l], cfg.lambda, cfg.recon_soft);
      out.vlb_b[l] += lv.vlb_b->value(0, 0);
      out.reg_b[l] += lv.reg_b->value(0, 0);
      out.vlb_r[l] += lv.vlb_r->value(0, 0);
      out.reg_r[l] += lv.reg_r->value(0, 0);
      var_sum = var_sum ? t.add(var_sum, lv.total) : lv.total;
    }
  }
  ad::Var total = t.add(t.scale(pair_loss, 1.0 / static_cast<double>(d)),
                        t.scale(var_sum, cfg.alpha / (2.0 * static_cast<double>(d))));
  out.total = total->value(0, 0);
  if (std::isfinite(out.total)) {
    t.backward(total);
  }
  return out;
}

inline TrainOutcome train_ssl(const Hypergraph& h, const TrainConfig& cfg,
                              bool probe_checkpoints = true) {
  h.validate();
  const Hypergraph h_dual = dual(h);
  const std::int64_t d_edge =
      h.edge_features ? h.edge_features->cols() : h.node_features.cols();

  TrainOutcome out;
  out.model = build_model(cfg, h.node_features.cols(), d_edge, 0);
  Model& m = out.model;
  RngStream root(cfg.seed);
  AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};

  const bool can_probe = probe_checkpoints && h.labels.has_value();
  SplitAssignment splits;
  if (can_probe) splits = splits_for(cfg, h.num_nodes);

  const int threads = std::min<int>(worker_threads(), static_cast<int>(cfg.num_views));
  const std::int64_t d = cfg.num_views;

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    m.store->zero_grads();
    auto epoch_rng = root.child(4).child(static_cast<std::uint64_t>(epoch));

    std::vector<train_detail::ViewOutcome> results(static_cast<std::size_t>(d));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    auto run_range = [&](int worker) {
      try {
        for (std::int64_t i = worker; i < d; i += threads)
          results[static_cast<std::size_t>(i)] =
              run_ssl_view(m, h, h_dual, cfg, i, epoch_rng.child(static_cast<std::uint64_t>(i)));
      } catch (...) {
        errors[static_cast<std::size_t>(worker)] = std::current_exception();
      }
    };
    if (threads > 1) {
      std::vector<std::thread> pool;
      for (int w = 0; w < threads; ++w) pool.emplace_back(run_range, w);
      for (auto& th : pool) th.join();
    } else {
      run_range(0);
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);

    // Fixed reduction order: view 0..D-1, leaves in creation order.
    LossBreakdown bd;
    bd.vlb_b.assign(m.encoder.layers.size(), 0.0);
    bd.reg_b.assign(m.encoder.layers.size(), 0.0);
    bd.vlb_r.assign(m.encoder.layers.size(), 0.0);
    bd.reg_r.assign(m.encoder.layers.size(), 0.0);
    double total = 0.0, cos_sum = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
      auto& r = results[static_cast<std::size_t>(i)];
      total += r.total;
      cos_sum += r.cos;
      for (std::size_t l = 0; l < m.encoder.layers.size(); ++l) {
        bd.vlb_b[l] += r.vlb_b[l] / (2.0 * static_cast<double>(d));
        bd.reg_b[l] += r.reg_b[l] / (2.0 * static_cast<double>(d));
        bd.vlb_r[l] += r.vlb_r[l] / (2.0 * static_cast<double>(d));
        bd.reg_r[l] += r.reg_r[l] / (2.0 * static_cast<double>(d));
      }
      r.tape->harvest_param_grads();
      r.tape.reset();
    }
    if (!std::isfinite(total))
      throw NumericError("ssl training diverged at epoch " + std::to_string(epoch));
    bd.l_con = -cos_sum / static_cast<double>(d);
    bd.total = total;
    adam_step(*m.store, adam);

    MetricsRow row;
    row.epoch = epoch;
    row.total = total;
    row.task = *bd.l_con;
    row.vlb_sum = bd.sum_vlb();
    row.reg_sum = bd.sum_reg();

    if (can_probe && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      const Tensor emb = embed(m, h);
      const ProbeResult pr = probe(emb, *h.labels, splits, cfg.probe);
      row.val_acc = pr.val_acc;
      if (pr.val_acc > out.best_val_acc) {
        out.best_val_acc = pr.val_acc;
        out.best_epoch = epoch;
        out.best_values = m.store->snapshot_values();
      }
    }
    out.trace.push_back(row);
  }
  if (out.best_values.empty()) {
    out.best_values = m.store->snapshot_values();
    out.best_epoch = cfg.epochs;
  }
  return out;
}

}  // namespace bhygnn
