#pragma once

// Loss terms: masked softmax cross-entropy, the per-layer variational loss
// (negative ELBO + incidence regularizer, for broadcast and receive actions),
// the dual-view cosine contrastive loss, and the combined objectives.
//
// Sign convention: every term is minimized. The ELBO and the cosine
// similarity are maximized quantities in their usual form, so they enter
// negated; LossBreakdown carries both conventions.

#include <cstdio>
#include <optional>
#include <vector>

#include "bhygnn/encoder.hpp"
#include "bhygnn/nn.hpp"

namespace bhygnn {

// Mean softmax cross-entropy over the masked rows.
inline ad::Var cross_entropy(ad::Tape& t, ad::Var logits,
                             const std::vector<std::int64_t>& labels,
                             const std::vector<std::int64_t>& mask) {
  if (mask.empty()) throw DataError("cross_entropy: empty mask");
  auto idx = std::make_shared<std::vector<std::int64_t>>(mask);
  ad::Var sel = t.gather_rows(logits, idx);
  ad::Var logp = log_softmax_rows(t, sel);
  Tensor onehot(static_cast<std::int64_t>(mask.size()), logits->value.cols());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const auto y = labels[static_cast<std::size_t>(mask[i])];
    if (y < 0 || y >= logits->value.cols()) throw DataError("cross_entropy: label out of range");
    onehot(static_cast<std::int64_t>(i), y) = 1.0;
  }
  ad::Var picked = t.sum(t.mul(logp, t.constant(std::move(onehot))));
  return t.scale(picked, -1.0 / static_cast<double>(mask.size()));
}

inline double accuracy(const Tensor& logits, const std::vector<std::int64_t>& labels,
                       const std::vector<std::int64_t>& mask) {
  if (mask.empty()) throw DataError("accuracy: empty mask");
  std::int64_t hit = 0;
  for (auto r : mask) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    if (best == labels[static_cast<std::size_t>(r)]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(mask.size());
}

// Negative ELBO for one action set:
//   -sum log p(a_{v,e}) + KL(q(H_V)||N(0,I)) + KL(q(H_E)||N(0,I))
// The reconstruction term is the Bernoulli log-likelihood of the sampled
// actions (detached, treated as observations) under the clamped incidence
// probabilities; with soft_targets the detached relaxed actions weight a
// binary cross-entropy instead.
inline ad::Var vlb_loss(ad::Tape& t, const ActionSample& s, bool soft_targets = false) {
  ad::Var pc = t.clamp(s.prob, 1e-7, 1.0 - 1e-7);
  ad::Var log_p = t.log(pc);
  ad::Var log_1mp = t.log(t.add_scalar(t.scale(pc, -1.0), 1.0));
  Tensor a = s.action->value;  // detached targets
  if (!soft_targets)
    for (std::int64_t i = 0; i < a.size(); ++i) a[i] = a[i] > 0.5 ? 1.0 : 0.0;
  Tensor one_minus_a(a.rows(), a.cols());
  for (std::int64_t i = 0; i < a.size(); ++i) one_minus_a[i] = 1.0 - a[i];
  ad::Var recon = t.scale(t.sum(t.add(t.mul(log_p, t.constant(std::move(a))),
                                      t.mul(log_1mp, t.constant(std::move(one_minus_a))))),
                          -1.0);
  ad::Var kl = t.add(gaussian_kl(t, s.mu_node, s.lv_node), gaussian_kl(t, s.mu_edge, s.lv_edge));
  return t.add(recon, kl);
}

// || lambda*M - M_hat ||_F with M_hat carrying the incidence probabilities;
// both matrices vanish off-incidence, so the sum runs over incidences only.
inline ad::Var reg_loss(ad::Tape& t, ad::Var prob, double lambda) {
  ad::Var diff = t.add_scalar(t.scale(prob, -1.0), lambda);
  return t.sqrt(t.sum(t.mul(diff, diff)));
}

struct LayerVarTerms {
  ad::Var vlb_b = nullptr, reg_b = nullptr, vlb_r = nullptr, reg_r = nullptr;
  ad::Var total = nullptr;
};

inline LayerVarTerms layer_var_loss(ad::Tape& t, const ConvResult& conv, double lambda,
                                    bool soft_targets = false) {
  LayerVarTerms out;
  out.vlb_b = vlb_loss(t, conv.broadcast, soft_targets);
  out.reg_b = reg_loss(t, conv.broadcast.prob, lambda);
  out.vlb_r = vlb_loss(t, conv.receive, soft_targets);
  out.reg_r = reg_loss(t, conv.receive.prob, lambda);
  out.total = t.add(t.add(out.vlb_b, out.reg_b), t.add(out.vlb_r, out.reg_r));
  return out;
}

// -(1/D) * sum_i cos(z_dual_i, z_primal_i). Zero-norm vectors contribute a
// cosine of 0 (with a warning).
inline ad::Var contrastive_loss(ad::Tape& t,
                                const std::vector<std::pair<ad::Var, ad::Var>>& pairs) {
  if (pairs.empty()) throw DataError("contrastive_loss: no pairs");
  ad::Var acc = nullptr;
  for (const auto& [za, zb] : pairs) {
    ad::Var dot = t.sum(t.mul(za, zb));
    ad::Var na = t.sqrt(t.sum(t.mul(za, za)));
    ad::Var nb = t.sqrt(t.sum(t.mul(zb, zb)));
    if (na->value(0, 0) == 0.0 || nb->value(0, 0) == 0.0)
      std::fprintf(stderr, "warning: contrastive pair with zero-norm vector, cosine taken as 0\n");
    ad::Var cos = t.div(dot, t.clamp(t.mul(na, nb), 1e-12, std::numeric_limits<double>::max()));
    acc = acc ? t.add(acc, cos) : cos;
  }
  return t.scale(acc, -1.0 / static_cast<double>(pairs.size()));
}

// L_sl = L_ce + alpha * sum_l L_var^(l)
inline double total_supervised(double l_ce, const std::vector<double>& layer_var, double alpha) {
  double s = 0.0;
  for (double v : layer_var) s += v;
  return l_ce + alpha * s;
}

// L_ssl = L_con + alpha * sum_l L_var^(l)
inline double total_ssl(double l_con, const std::vector<double>& layer_var, double alpha) {
  return total_supervised(l_con, layer_var, alpha);
}

inline ad::Var total_objective(ad::Tape& t, ad::Var task, const std::vector<ad::Var>& layer_vars,
                               double alpha) {
  ad::Var acc = nullptr;
  for (ad::Var v : layer_vars) acc = acc ? t.add(acc, v) : v;
  return acc ? t.add(task, t.scale(acc, alpha)) : task;
}

struct LossBreakdown {
  std::optional<double> l_ce;   // supervised task term
  std::optional<double> l_con;  // contrastive term (minimized form)
  std::vector<double> vlb_b, reg_b, vlb_r, reg_r;  // per layer (averaged over views)
  double total = 0.0;

  double sum_vlb() const {
    double s = 0.0;
    for (double v : vlb_b) s += v;
    for (double v : vlb_r) s += v;
    return s;
  }
  double sum_reg() const {
    double s = 0.0;
    for (double v : reg_b) s += v;
    for (double v : reg_r) s += v;
    return s;
  }
  double task() const { return l_ce ? *l_ce : (l_con ? *l_con : 0.0); }
  // Reconstructs the total from the parts (alpha-weighted variational sum).
  double recombine(double alpha) const { return task() + alpha * (sum_vlb() + sum_reg()); }
};

}  // namespace bhygnn
