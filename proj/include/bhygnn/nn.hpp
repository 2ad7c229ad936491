#pragma once

// Neural-net building blocks on top of the autodiff tape: parameter store,
// affine/MLP layers, Gaussian reparameterization, closed-form KL, Gumbel-
// Softmax sampling, softmax-based set attention, and the Adam optimizer.

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bhygnn/autodiff.hpp"
#include "bhygnn/rng.hpp"

namespace bhygnn {

class ParamStore {
 public:
  Parameter* create(const std::string& name, std::int64_t rows, std::int64_t cols) {
    if (by_name_.count(name)) throw DataError("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Parameter>(name, rows, cols));
    Parameter* p = params_.back().get();
    by_name_[name] = p;
    return p;
  }

  Parameter* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }

  void zero_grads() {
    for (auto& p : params_) p->grad.fill(0.0);
  }

  bool grads_finite() const {
    for (auto& p : params_)
      if (!p->grad.all_finite()) return false;
    return true;
  }

  // Deep copy of values only (optimizer state not carried).
  std::map<std::string, Tensor> snapshot_values() const {
    std::map<std::string, Tensor> out;
    for (auto& p : params_) out[p->name] = p->value;
    return out;
  }

  void restore_values(const std::map<std::string, Tensor>& snap) {
    for (auto& p : params_) {
      auto it = snap.find(p->name);
      if (it == snap.end()) throw DataError("snapshot missing parameter: " + p->name);
      if (!it->second.same_shape(p->value))
        throw DataError("snapshot shape mismatch for: " + p->name);
      p->value = it->second;
    }
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> by_name_;
};

inline void init_xavier_uniform(Parameter& p, RngStream& rng) {
  const double fan_in = static_cast<double>(p.value.rows());
  const double fan_out = static_cast<double>(p.value.cols());
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (std::int64_t i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(-limit, limit);
}

// ---- layers ----

struct AffineParams {
  Parameter* w = nullptr;
  Parameter* b = nullptr;

  static AffineParams create(ParamStore& store, const std::string& prefix, std::int64_t in,
                             std::int64_t out, RngStream& rng) {
    AffineParams a;
    a.w = store.create(prefix + "/W", in, out);
    a.b = store.create(prefix + "/b", 1, out);
    init_xavier_uniform(*a.w, rng);
    return a;
  }

  ad::Var apply(ad::Tape& t, ad::Var x) const {
    return t.affine(x, t.leaf(*w), t.leaf(*b));
  }
};

// Affine layers with ReLU between them (none after the last).
struct MlpParams {
  std::vector<AffineParams> layers;

  static MlpParams create(ParamStore& store, const std::string& prefix,
                          const std::vector<std::int64_t>& dims, RngStream& rng) {
    MlpParams m;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      auto sub = rng.child(i);
      m.layers.push_back(
          AffineParams::create(store, prefix + "/l" + std::to_string(i), dims[i], dims[i + 1], sub));
    }
    return m;
  }

  ad::Var apply(ad::Tape& t, ad::Var x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i].apply(t, x);
      if (i + 1 < layers.size()) x = t.relu(x);
    }
    return x;
  }
};

inline ad::Var mlp_forward(ad::Tape& t, const MlpParams& m, ad::Var x) { return m.apply(t, x); }

// ---- variational pieces ----

// KL( N(mu, exp(log_var)) || N(0, I) ) summed over all entries:
// 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2)
inline ad::Var gaussian_kl(ad::Tape& t, ad::Var mu, ad::Var log_var) {
  if (!mu->value.same_shape(log_var->value)) throw DataError("gaussian_kl: shape mismatch");
  if (!mu->value.all_finite() || !log_var->value.all_finite())
    throw NumericError("gaussian_kl: non-finite input");
  ad::Var term = t.sub(t.add(t.mul(mu, mu), t.exp(log_var)), t.add_scalar(log_var, 1.0));
  return t.scale(t.sum(term), 0.5);
}

// H = mu + sigma .* rho with rho ~ N(0, I); sigma = exp(0.5*log_var) clamped
// to >= 1e-8. Gradients flow to mu and log_var only.
inline ad::Var reparameterize(ad::Tape& t, ad::Var mu, ad::Var log_var, RngStream& rng) {
  if (!mu->value.same_shape(log_var->value)) throw DataError("reparameterize: shape mismatch");
  Tensor rho(mu->value.rows(), mu->value.cols());
  for (std::int64_t i = 0; i < rho.size(); ++i) rho[i] = rng.normal();
  ad::Var sigma = t.clamp(t.exp(t.scale(log_var, 0.5)), 1e-8, std::numeric_limits<double>::max());
  return t.add(t.mul(sigma, t.constant(std::move(rho))), mu);
}

struct GumbelConfig {
  double temperature = 1.0;
  bool hard = true;
};

// Row softmax with a detached max shift; rows sum to 1 to ~1e-16.
inline ad::Var softmax_rows(ad::Tape& t, ad::Var x) {
  Tensor shift(x->value.rows(), 1);
  for (std::int64_t r = 0; r < x->value.rows(); ++r) {
    double m = x->value(r, 0);
    for (std::int64_t c = 1; c < x->value.cols(); ++c) m = std::max(m, x->value(r, c));
    shift(r, 0) = -m;
  }
  ad::Var e = t.exp(t.add_colvec(x, t.constant(std::move(shift))));
  return t.div(e, t.add_colvec(t.constant(Tensor(x->value.rows(), x->value.cols())),
                               t.row_sum(e)));
}

inline ad::Var log_softmax_rows(ad::Tape& t, ad::Var x) {
  Tensor shift(x->value.rows(), 1);
  for (std::int64_t r = 0; r < x->value.rows(); ++r) {
    double m = x->value(r, 0);
    for (std::int64_t c = 1; c < x->value.cols(); ++c) m = std::max(m, x->value(r, c));
    shift(r, 0) = -m;
  }
  ad::Var xs = t.add_colvec(x, t.constant(std::move(shift)));
  ad::Var log_z = t.log(t.row_sum(t.exp(xs)));
  return t.add_colvec(xs, t.scale(log_z, -1.0));
}

// Per row: softmax((logits + g)/tau) with g i.i.d. standard Gumbel. In hard
// mode the output is the one-hot row argmax with a straight-through gradient.
inline ad::Var gumbel_softmax(ad::Tape& t, ad::Var logits, const GumbelConfig& cfg,
                              RngStream& rng) {
  if (cfg.temperature <= 0.0) throw DataError("gumbel_softmax: temperature must be > 0");
  Tensor noise(logits->value.rows(), logits->value.cols());
  for (std::int64_t i = 0; i < noise.size(); ++i) noise[i] = rng.gumbel();
  ad::Var y = softmax_rows(
      t, t.scale(t.add(logits, t.constant(std::move(noise))), 1.0 / cfg.temperature));
  return cfg.hard ? t.hard_onehot_st(y) : y;
}

// ---- multi-head set attention ----

// Key/value MLP: single hidden layer of width d_head, ReLU, then d_head out.
struct KvMlp {
  AffineParams l1, l2;

  static KvMlp create(ParamStore& store, const std::string& prefix, std::int64_t in,
                      std::int64_t d_head, RngStream& rng) {
    KvMlp m;
    auto r1 = rng.child(1), r2 = rng.child(2);
    m.l1 = AffineParams::create(store, prefix + "/l1", in, d_head, r1);
    m.l2 = AffineParams::create(store, prefix + "/l2", d_head, d_head, r2);
    return m;
  }

  ad::Var apply(ad::Tape& t, ad::Var x) const { return l2.apply(t, t.relu(l1.apply(t, x))); }
};

struct AttentionHeadParams {
  KvMlp key, value;
  Parameter* theta = nullptr;  // 1 x d_head
};

struct AttentionParams {
  std::vector<AttentionHeadParams> heads;
  std::int64_t d_in = 0;
  std::int64_t d_head = 0;

  static AttentionParams create(ParamStore& store, const std::string& prefix, std::int64_t heads,
                                std::int64_t d_in, std::int64_t d_head, RngStream& rng) {
    AttentionParams a;
    a.d_in = d_in;
    a.d_head = d_head;
    for (std::int64_t h = 0; h < heads; ++h) {
      auto hr = rng.child(h);
      AttentionHeadParams hp;
      auto rk = hr.child(0), rv = hr.child(1), rt = hr.child(2);
      hp.key = KvMlp::create(store, prefix + "/h" + std::to_string(h) + "/K", d_in, d_head, rk);
      hp.value = KvMlp::create(store, prefix + "/h" + std::to_string(h) + "/V", d_in, d_head, rv);
      hp.theta = store.create(prefix + "/h" + std::to_string(h) + "/theta", 1, d_head);
      init_xavier_uniform(*hp.theta, rt);
      a.heads.push_back(hp);
    }
    return a;
  }
};

// Pools a set of c rows into a single 1 x (heads * d_head) row. Per head:
// K = MLP_K(S), V = MLP_V(S), w = softmax(theta * K^T), out = w * V.
// Permutation invariant in the rows of S.
inline ad::Var multihead_set_attention(ad::Tape& t, const AttentionParams& att, ad::Var s) {
  if (s->value.rows() < 1) throw DataError("multihead_set_attention: empty set");
  if (s->value.cols() != att.d_in) throw DataError("multihead_set_attention: input dim mismatch");
  const std::int64_t c = s->value.rows();
  std::vector<ad::Var> outs;
  for (const auto& head : att.heads) {
    ad::Var k = head.key.apply(t, s);
    ad::Var v = head.value.apply(t, s);
    ad::Var logits = t.matmul(k, t.leaf(*head.theta), false, true);  // c x 1
    double m = logits->value(0, 0);
    for (std::int64_t r = 1; r < c; ++r) m = std::max(m, logits->value(r, 0));
    ad::Var e = t.exp(t.add_scalar(logits, -m));
    // softmax down the column: broadcast the total back to c x 1
    ad::Var total = t.matmul(t.constant(Tensor::full(c, 1, 1.0)), t.sum(e));
    ad::Var weights = t.div(e, total);
    outs.push_back(t.matmul(weights, v, true, false));  // 1 x d_head
  }
  return t.concat_cols(outs);
}

// ---- optimizer ----

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Standard Adam with bias correction. Decoupled weight decay is applied as
// value *= (1 - lr*wd) before the moment update.
inline void adam_step(ParamStore& store, const AdamConfig& cfg) {
  for (auto& up : store.all()) {
    Parameter& p = *up;
    p.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
    if (cfg.weight_decay != 0.0)
      for (std::int64_t i = 0; i < p.value.size(); ++i)
        p.value[i] *= (1.0 - cfg.lr * cfg.weight_decay);
    for (std::int64_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
      p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = p.m[i] / bc1;
      const double vhat = p.v[i] / bc2;
      p.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace bhygnn
