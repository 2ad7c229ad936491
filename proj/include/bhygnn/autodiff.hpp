#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// Define-by-run: every op computes its value eagerly and records a backprop
// closure on the owning Tape. Creation order is a topological order, so
// backward() just walks the tape in reverse. A Tape is confined to one thread;
// gradients for shared Parameters are harvested afterwards so concurrent tapes
// never write to the same buffer.
//
// Gradient buffers take their first contribution by assignment (or a beta=0
// dgemm) instead of zero-fill-then-add; with single-consumer chains making up
// most of a training graph this halves the gradient memory traffic.

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "bhygnn/errors.hpp"
#include "bhygnn/tensor.hpp"

namespace bhygnn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  // Adam state
  Tensor m, v;
  std::int64_t step = 0;

  Parameter(std::string n, std::int64_t rows, std::int64_t cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols), m(rows, cols), v(rows, cols) {}
};

namespace ad {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first contribution
  bool needs_grad = false;
  bool has_grad = false;
  Parameter* param = nullptr;
  std::function<void(Node&)> backprop;

  void accumulate(const Tensor& g) {
    if (!has_grad) {
      grad = g;
      has_grad = true;
    } else {
      grad.add_scaled(g, 1.0);
    }
  }

  void accumulate(Tensor&& g) {
    if (!has_grad) {
      grad = std::move(g);
      has_grad = true;
    } else {
      grad.add_scaled(g, 1.0);
    }
  }

  void accumulate_scaled(const Tensor& g, double s) {
    if (!has_grad) {
      grad = Tensor::uninit(value.rows(), value.cols());
      for (std::int64_t i = 0; i < grad.size(); ++i) grad[i] = s * g[i];
      has_grad = true;
    } else {
      grad.add_scaled(g, s);
    }
  }

  // Zeroed gradient buffer for scatter-style backward writers.
  Tensor& grad_accum() {
    if (!has_grad) {
      grad = Tensor(value.rows(), value.cols());
      has_grad = true;
    }
    return grad;
  }

  // dgemm into the gradient; beta=0 on the first contribution.
  void matmul_grad(const Tensor& a, const Tensor& b, bool ta, bool tb) {
    if (!has_grad) {
      grad = Tensor::uninit(value.rows(), value.cols());
      has_grad = true;
      matmul_into(grad, a, b, ta, tb, 0.0);
    } else {
      matmul_into(grad, a, b, ta, tb, 1.0);
    }
  }
};

using Var = Node*;

using IndexVec = std::shared_ptr<const std::vector<std::int64_t>>;

class Tape {
 public:
  Var leaf(Parameter& p) {
    Var n = make(p.value);
    n->needs_grad = true;
    n->param = &p;
    leaves_.push_back(n);
    return n;
  }

  Var constant(Tensor t) { return make(std::move(t)); }

  Var scalar(double v) { return constant(Tensor::full(1, 1, v)); }

  // ---- arithmetic ----

  Var add(Var a, Var b) {
    require(a->value.same_shape(b->value), "add: shape mismatch");
    Tensor out = Tensor::uninit(a->value.rows(), a->value.cols());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
    return unary_or_binary(std::move(out), a, b, [](Node& n, Var a, Var b) {
      if (a->needs_grad) a->accumulate(n.grad);
      if (b->needs_grad) b->accumulate(n.grad);
    });
  }

  Var sub(Var a, Var b) {
    require(a->value.same_shape(b->value), "sub: shape mismatch");
    Tensor out = Tensor::uninit(a->value.rows(), a->value.cols());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
    return unary_or_binary(std::move(out), a, b, [](Node& n, Var a, Var b) {
      if (a->needs_grad) a->accumulate(n.grad);
      if (b->needs_grad) b->accumulate_scaled(n.grad, -1.0);
    });
  }

  Var mul(Var a, Var b) {
    require(a->value.same_shape(b->value), "mul: shape mismatch");
    Tensor out = Tensor::uninit(a->value.rows(), a->value.cols());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
    return unary_or_binary(std::move(out), a, b, [](Node& n, Var a, Var b) {
      if (a->needs_grad) {
        Tensor g = Tensor::uninit(n.grad.rows(), n.grad.cols());
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * b->value[i];
        a->accumulate(std::move(g));
      }
      if (b->needs_grad) {
        Tensor g = Tensor::uninit(n.grad.rows(), n.grad.cols());
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * a->value[i];
        b->accumulate(std::move(g));
      }
    });
  }

  Var div(Var a, Var b) {
    require(a->value.same_shape(b->value), "div: shape mismatch");
    Tensor out = Tensor::uninit(a->value.rows(), a->value.cols());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] / b->value[i];
    return unary_or_binary(std::move(out), a, b, [](Node& n, Var a, Var b) {
      if (a->needs_grad) {
        Tensor g = Tensor::uninit(n.grad.rows(), n.grad.cols());
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] / b->value[i];
        a->accumulate(std::move(g));
      }
      if (b->needs_grad) {
        Tensor g = Tensor::uninit(n.grad.rows(), n.grad.cols());
        for (std::int64_t i = 0; i < g.size(); ++i)
          g[i] = -n.grad[i] * a->value[i] / (b->value[i] * b->value[i]);
        b->accumulate(std::move(g));
      }
    });
  }

  Var scale(Var a, double s) {
    Tensor out = Tensor::uninit(a->value.rows(), a->value.cols());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = s * a->value[i];
    return unary(std::move(out), a, [s](Node& n, Var a) { a->accumulate_scaled(n.grad, s); });
  }

  Var add_scalar(Var a, double s) {
    Tensor out = Tensor::uninit(a->value.rows(), a->value.cols());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + s;
    return unary(std::move(out), a, [](Node& n, Var a) { a->accumulate(n.grad); });
  }

  // X (R x d) + row vector (1 x d), broadcast over rows.
  Var add_rowvec(Var x, Var b) {
    require(b->value.rows() == 1 && b->value.cols() == x->value.cols(),
            "add_rowvec: shape mismatch");
    const std::int64_t d = x->value.cols();
    Tensor out = Tensor::uninit(x->value.rows(), d);
    for (std::int64_t r = 0; r < out.rows(); ++r)
      for (std::int64_t c = 0; c < d; ++c) out(r, c) = x->value(r, c) + b->value[c];
    return unary_or_binary(std::move(out), x, b, [](Node& n, Var x, Var b) {
      if (x->needs_grad) x->accumulate(n.grad);
      if (b->needs_grad) b->accumulate(col_sums(n.grad));
    });
  }

  // X (R x d) + column vector (R x 1), broadcast over columns.
  Var add_colvec(Var x, Var c) {
    require(c->value.cols() == 1 && c->value.rows() == x->value.rows(),
            "add_colvec: shape mismatch");
    const std::int64_t d = x->value.cols();
    Tensor out = Tensor::uninit(x->value.rows(), d);
    for (std::int64_t r = 0; r < out.rows(); ++r) {
      const double cv = c->value(r, 0);
      for (std::int64_t j = 0; j < d; ++j) out(r, j) = x->value(r, j) + cv;
    }
    return unary_or_binary(std::move(out), x, c, [](Node& n, Var x, Var c) {
      if (x->needs_grad) x->accumulate(n.grad);
      if (c->needs_grad) c->accumulate(row_sums(n.grad));
    });
  }

  // X (R x d) scaled per row by column vector (R x 1).
  Var mul_colvec(Var x, Var c) {
    require(c->value.cols() == 1 && c->value.rows() == x->value.rows(),
            "mul_colvec: shape mismatch");
    const std::int64_t d = x->value.cols();
    Tensor out = Tensor::uninit(x->value.rows(), d);
    for (std::int64_t r = 0; r < out.rows(); ++r) {
      const double cv = c->value(r, 0);
      for (std::int64_t j = 0; j < d; ++j) out(r, j) = x->value(r, j) * cv;
    }
    return unary_or_binary(std::move(out), x, c, [](Node& n, Var x, Var c) {
      const std::int64_t d = n.grad.cols();
      if (x->needs_grad) {
        Tensor g = Tensor::uninit(n.grad.rows(), d);
        for (std::int64_t r = 0; r < g.rows(); ++r) {
          const double cv = c->value(r, 0);
          for (std::int64_t j = 0; j < d; ++j) g(r, j) = n.grad(r, j) * cv;
        }
        x->accumulate(std::move(g));
      }
      if (c->needs_grad) {
        Tensor g = Tensor::uninit(n.grad.rows(), 1);
        for (std::int64_t r = 0; r < g.rows(); ++r) {
          double s = 0.0;
          for (std::int64_t j = 0; j < d; ++j) s += n.grad(r, j) * x->value(r, j);
          g(r, 0) = s;
        }
        c->accumulate(std::move(g));
      }
    });
  }

  // X (R x d) / column vector (R x 1).
  Var div_colvec(Var x, Var c) {
    require(c->value.cols() == 1 && c->value.rows() == x->value.rows(),
            "div_colvec: shape mismatch");
    const std::int64_t d = x->value.cols();
    Tensor out = Tensor::uninit(x->value.rows(), d);
    for (std::int64_t r = 0; r < out.rows(); ++r) {
      const double inv = 1.0 / c->value(r, 0);
      for (std::int64_t j = 0; j < d; ++j) out(r, j) = x->value(r, j) * inv;
    }
    return unary_or_binary(std::move(out), x, c, [](Node& n, Var x, Var c) {
      const std::int64_t d = n.grad.cols();
      if (x->needs_grad) {
        Tensor g = Tensor::uninit(n.grad.rows(), d);
        for (std::int64_t r = 0; r < g.rows(); ++r) {
          const double inv = 1.0 / c->value(r, 0);
          for (std::int64_t j = 0; j < d; ++j) g(r, j) = n.grad(r, j) * inv;
        }
        x->accumulate(std::move(g));
      }
      if (c->needs_grad) {
        Tensor g = Tensor::uninit(n.grad.rows(), 1);
        for (std::int64_t r = 0; r < g.rows(); ++r) {
          const double cv = c->value(r, 0);
          double s = 0.0;
          for (std::int64_t j = 0; j < d; ++j) s += n.grad(r, j) * x->value(r, j);
          g(r, 0) = -s / (cv * cv);
        }
        c->accumulate(std::move(g));
      }
    });
  }

  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    Tensor out = bhygnn::matmul(a->value, b->value, ta, tb);
    return unary_or_binary(std::move(out), a, b, [ta, tb](Node& n, Var a, Var b) {
      if (a->needs_grad) {
        if (!ta)
          a->matmul_grad(n.grad, b->value, false, !tb);
        else
          a->matmul_grad(b->value, n.grad, tb, true);
      }
      if (b->needs_grad) {
        if (!tb)
          b->matmul_grad(a->value, n.grad, !ta, false);
        else
          b->matmul_grad(n.grad, a->value, true, ta);
      }
    });
  }

  // x * W + bias (bias broadcast over rows)
  Var affine(Var x, Var w, Var b) {
    require(b->value.rows() == 1 && b->value.cols() == w->value.cols(), "affine: bias shape");
    Tensor out = bhygnn::matmul(x->value, w->value);
    const std::int64_t d = out.cols();
    for (std::int64_t r = 0; r < out.rows(); ++r) {
      double* row = out.data() + r * d;
      for (std::int64_t c = 0; c < d; ++c) row[c] += b->value[c];
    }
    Var n = make(std::move(out));
    n->needs_grad = x->needs_grad || w->needs_grad || b->needs_grad;
    if (n->needs_grad)
      n->backprop = [x, w, b](Node& nd) {
        if (x->needs_grad) x->matmul_grad(nd.grad, w->value, false, true);
        if (w->needs_grad) w->matmul_grad(x->value, nd.grad, true, false);
        if (b->needs_grad) b->accumulate(col_sums(nd.grad));
      };
    return n;
  }

  // Affine over a column window of x: x[:, c0:c0+w_in] * W + bias, without
  // materializing the slice (strided dgemm).
  Var affine_cols(Var x, std::int64_t c0, std::int64_t w_in, Var w, Var b) {
    require(c0 >= 0 && c0 + w_in <= x->value.cols(), "affine_cols: window out of range");
    require(w->value.rows() == w_in, "affine_cols: weight rows != window width");
    require(b->value.rows() == 1 && b->value.cols() == w->value.cols(), "affine_cols: bias shape");
    const std::int64_t m = x->value.rows();
    const std::int64_t d = w->value.cols();
    Tensor out = Tensor::uninit(m, d);
    dgemm_raw(false, false, m, d, w_in, x->value.data() + c0, x->value.cols(), w->value.data(), d,
              0.0, out.data(), d);
    for (std::int64_t r = 0; r < m; ++r) {
      double* row = out.data() + r * d;
      for (std::int64_t c = 0; c < d; ++c) row[c] += b->value[c];
    }
    Var n = make(std::move(out));
    n->needs_grad = x->needs_grad || w->needs_grad || b->needs_grad;
    if (n->needs_grad)
      n->backprop = [x, c0, w_in, w, b](Node& nd) {
        const std::int64_t m = nd.grad.rows();
        const std::int64_t d = nd.grad.cols();
        if (x->needs_grad) {
          Tensor& g = x->grad_accum();
          dgemm_raw(false, true, m, w_in, d, nd.grad.data(), d, w->value.data(), d, 1.0,
                    g.data() + c0, g.cols());
        }
        if (w->needs_grad) {
          Tensor& g = w->grad_accum();
          dgemm_raw(true, false, w_in, d, m, x->value.data() + c0, x->value.cols(), nd.grad.data(),
                    d, 1.0, g.data(), d);
        }
        if (b->needs_grad) b->accumulate(col_sums(nd.grad));
      };
    return n;
  }

  // ---- nonlinearities ----

  Var relu(Var a) {
    Tensor out = Tensor::uninit(a->value.rows(), a->value.cols());
    for (std::int64_t i = 0; i < out.size(); ++i) {
      const double v = a->value[i];
      out[i] = v > 0.0 ? v : 0.0;
    }
    return unary(std::move(out), a, [](Node& n, Var a) {
      Tensor g = Tensor::uninit(n.grad.rows(), n.grad.cols());
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] = n.value[i] > 0.0 ? n.grad[i] : 0.0;
      a->accumulate(std::move(g));
    });
  }

  Var sigmoid(Var a) {
    Tensor out = Tensor::uninit(a->value.rows(), a->value.cols());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a->value[i]));
    return unary(std::move(out), a, [](Node& n, Var a) {
      Tensor g = Tensor::uninit(n.grad.rows(), n.grad.cols());
      for (std::int64_t i = 0; i < g.size(); ++i)
        g[i] = n.grad[i] * n.value[i] * (1.0 - n.value[i]);
      a->accumulate(std::move(g));
    });
  }

  Var exp(Var a) {
    Tensor out = Tensor::uninit(a->value.rows(), a->value.cols());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(a->value[i]);
    return unary(std::move(out), a, [](Node& n, Var a) {
      Tensor g = Tensor::uninit(n.grad.rows(), n.grad.cols());
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * n.value[i];
      a->accumulate(std::move(g));
    });
  }

  Var log(Var a) {
    Tensor out = Tensor::uninit(a->value.rows(), a->value.cols());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::log(a->value[i]);
    return unary(std::move(out), a, [](Node& n, Var a) {
      Tensor g = Tensor::uninit(n.grad.rows(), n.grad.cols());
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] / a->value[i];
      a->accumulate(std::move(g));
    });
  }

  Var sqrt(Var a) {
    Tensor out = Tensor::uninit(a->value.rows(), a->value.cols());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a->value[i]);
    return unary(std::move(out), a, [](Node& n, Var a) {
      Tensor g = Tensor::uninit(n.grad.rows(), n.grad.cols());
      for (std::int64_t i = 0; i < g.size(); ++i)
        g[i] = n.grad[i] * 0.5 / std::max(n.value[i], 1e-12);
      a->accumulate(std::move(g));
    });
  }

  // Pass-through gradient inside (lo, hi), zero where clamped.
  Var clamp(Var a, double lo, double hi) {
    Tensor out = Tensor::uninit(a->value.rows(), a->value.cols());
    for (std::int64_t i = 0; i < out.size(); ++i)
      out[i] = std::min(std::max(a->value[i], lo), hi);
    return unary(std::move(out), a, [lo, hi](Node& n, Var a) {
      Tensor g = Tensor::uninit(n.grad.rows(), n.grad.cols());
      for (std::int64_t i = 0; i < g.size(); ++i) {
        const double v = a->value[i];
        g[i] = (v > lo && v < hi) ? n.grad[i] : 0.0;
      }
      a->accumulate(std::move(g));
    });
  }

  // ---- reductions ----

  Var sum(Var a) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
    return unary(Tensor::full(1, 1, s), a, [](Node& n, Var a) {
      const double gv = n.grad(0, 0);
      if (!a->has_grad) {
        a->grad = Tensor::full(a->value.rows(), a->value.cols(), gv);
        a->has_grad = true;
      } else {
        for (std::int64_t i = 0; i < a->grad.size(); ++i) a->grad[i] += gv;
      }
    });
  }

  Var row_sum(Var a) {
    return unary(row_sums(a->value), a, [](Node& n, Var a) {
      Tensor g = Tensor::uninit(a->value.rows(), a->value.cols());
      for (std::int64_t r = 0; r < g.rows(); ++r) {
        const double gv = n.grad(r, 0);
        for (std::int64_t c = 0; c < g.cols(); ++c) g(r, c) = gv;
      }
      a->accumulate(std::move(g));
    });
  }

  Var col_sum(Var a) {
    return unary(col_sums(a->value), a, [](Node& n, Var a) {
      Tensor g = Tensor::uninit(a->value.rows(), a->value.cols());
      for (std::int64_t r = 0; r < g.rows(); ++r)
        for (std::int64_t c = 0; c < g.cols(); ++c) g(r, c) = n.grad(0, c);
      a->accumulate(std::move(g));
    });
  }

  Var col_mean(Var a) { return scale(col_sum(a), 1.0 / static_cast<double>(a->value.rows())); }

  Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a->value.size())); }

  // ---- structure ops ----

  Var gather_rows(Var x, IndexVec idx) {
    const auto& ids = *idx;
    const std::int64_t d = x->value.cols();
    for (auto id : ids)
      require(id >= 0 && id < x->value.rows(), "gather_rows: index out of range");
    Tensor out = Tensor::uninit(static_cast<std::int64_t>(ids.size()), d);
    for (std::size_t i = 0; i < ids.size(); ++i)
      std::memcpy(out.data() + static_cast<std::int64_t>(i) * d, x->value.data() + ids[i] * d,
                  sizeof(double) * static_cast<std::size_t>(d));
    return unary(std::move(out), x, [idx](Node& n, Var x) {
      Tensor& g = x->grad_accum();
      const auto& ids = *idx;
      const std::int64_t d = g.cols();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* dst = g.data() + ids[i] * d;
        const double* src = n.grad.data() + static_cast<std::int64_t>(i) * d;
        for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    });
  }

  // out[i] = f[idx_f[i]] + g[idx_g[i]] in one pass
  Var gather_sum_rows(Var f, IndexVec idx_f, Var g, IndexVec idx_g) {
    require(f->value.cols() == g->value.cols(), "gather_sum_rows: column mismatch");
    require(idx_f->size() == idx_g->size(), "gather_sum_rows: index mismatch");
    for (auto id : *idx_f)
      require(id >= 0 && id < f->value.rows(), "gather_sum_rows: index out of range");
    for (auto id : *idx_g)
      require(id >= 0 && id < g->value.rows(), "gather_sum_rows: index out of range");
    const std::int64_t d = f->value.cols();
    Tensor out = Tensor::uninit(static_cast<std::int64_t>(idx_f->size()), d);
    for (std::size_t i = 0; i < idx_f->size(); ++i) {
      const double* __restrict fr = f->value.data() + (*idx_f)[i] * d;
      const double* __restrict gr = g->value.data() + (*idx_g)[i] * d;
      double* __restrict o = out.data() + static_cast<std::int64_t>(i) * d;
      for (std::int64_t c = 0; c < d; ++c) o[c] = fr[c] + gr[c];
    }
    return unary_or_binary(std::move(out), f, g, [idx_f, idx_g](Node& n, Var f, Var g) {
      const std::int64_t d = n.grad.cols();
      if (f->needs_grad) {
        Tensor& gf = f->grad_accum();
        for (std::size_t i = 0; i < idx_f->size(); ++i) {
          double* dst = gf.data() + (*idx_f)[i] * d;
          const double* src = n.grad.data() + static_cast<std::int64_t>(i) * d;
          for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
        }
      }
      if (g->needs_grad) {
        Tensor& gg = g->grad_accum();
        for (std::size_t i = 0; i < idx_g->size(); ++i) {
          double* dst = gg.data() + (*idx_g)[i] * d;
          const double* src = n.grad.data() + static_cast<std::int64_t>(i) * d;
          for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
        }
      }
    });
  }

  // Per-incidence inner products: out[i] = a[idx_a[i]] . b[idx_b[i]], R x 1.
  Var incidence_dot(Var a, IndexVec idx_a, Var b, IndexVec idx_b) {
    require(a->value.cols() == b->value.cols(), "incidence_dot: column mismatch");
    require(idx_a->size() == idx_b->size(), "incidence_dot: index mismatch");
    for (auto id : *idx_a)
      require(id >= 0 && id < a->value.rows(), "incidence_dot: index out of range");
    for (auto id : *idx_b)
      require(id >= 0 && id < b->value.rows(), "incidence_dot: index out of range");
    const std::int64_t d = a->value.cols();
    const auto r = static_cast<std::int64_t>(idx_a->size());
    Tensor out = Tensor::uninit(r, 1);
    for (std::int64_t i = 0; i < r; ++i) {
      const double* ar = a->value.data() + (*idx_a)[static_cast<std::size_t>(i)] * d;
      const double* br = b->value.data() + (*idx_b)[static_cast<std::size_t>(i)] * d;
      double s = 0.0;
      for (std::int64_t c = 0; c < d; ++c) s += ar[c] * br[c];
      out(i, 0) = s;
    }
    return unary_or_binary(std::move(out), a, b, [idx_a, idx_b](Node& n, Var a, Var b) {
      const std::int64_t d = a->value.cols();
      const auto r = static_cast<std::int64_t>(idx_a->size());
      Tensor* ga = a->needs_grad ? &a->grad_accum() : nullptr;
      Tensor* gb = b->needs_grad ? &b->grad_accum() : nullptr;
      for (std::int64_t i = 0; i < r; ++i) {
        const double gv = n.grad(i, 0);
        const double* ar = a->value.data() + (*idx_a)[static_cast<std::size_t>(i)] * d;
        const double* br = b->value.data() + (*idx_b)[static_cast<std::size_t>(i)] * d;
        if (ga) {
          double* dst = ga->data() + (*idx_a)[static_cast<std::size_t>(i)] * d;
          for (std::int64_t c = 0; c < d; ++c) dst[c] += gv * br[c];
        }
        if (gb) {
          double* dst = gb->data() + (*idx_b)[static_cast<std::size_t>(i)] * d;
          for (std::int64_t c = 0; c < d; ++c) dst[c] += gv * ar[c];
        }
      }
    });
  }

  // out = relu(x * a_row + bias); a is R x 1, bias 1 x d. Fused to keep the
  // per-incidence tensors in the encoder hot path to a minimum.
  Var scale_rows_bias_relu(Var x, Var a, Var b) {
    require(a->value.cols() == 1 && a->value.rows() == x->value.rows(),
            "scale_rows_bias_relu: gate shape");
    require(b->value.rows() == 1 && b->value.cols() == x->value.cols(),
            "scale_rows_bias_relu: bias shape");
    const std::int64_t d = x->value.cols();
    Tensor out = Tensor::uninit(x->value.rows(), d);
    for (std::int64_t r = 0; r < out.rows(); ++r) {
      const double av = a->value(r, 0);
      const double* __restrict xr = x->value.data() + r * d;
      const double* __restrict bp = b->value.data();
      double* __restrict o = out.data() + r * d;
      for (std::int64_t c = 0; c < d; ++c) {
        const double pre = xr[c] * av + bp[c];
        o[c] = pre > 0.0 ? pre : 0.0;
      }
    }
    Var n = make(std::move(out));
    n->needs_grad = x->needs_grad || a->needs_grad || b->needs_grad;
    if (n->needs_grad)
      n->backprop = [x, a, b](Node& nd) {
        const std::int64_t rows = nd.value.rows();
        const std::int64_t d = nd.value.cols();
        if (x->needs_grad && a->needs_grad && b->needs_grad) {
          Tensor gx = Tensor::uninit(rows, d);
          Tensor ga = Tensor::uninit(rows, 1);
          Tensor gb(1, d);
          double* __restrict gbp = gb.data();
          for (std::int64_t r = 0; r < rows; ++r) {
            const double av = a->value(r, 0);
            const double* __restrict ov = nd.value.data() + r * d;
            const double* __restrict gv = nd.grad.data() + r * d;
            const double* __restrict xr = x->value.data() + r * d;
            double* __restrict gxr = gx.data() + r * d;
            double acc = 0.0;
            for (std::int64_t c = 0; c < d; ++c) {
              const double gp = ov[c] > 0.0 ? gv[c] : 0.0;  // relu mask: pre > 0 iff out > 0
              gxr[c] = gp * av;
              acc += gp * xr[c];
              gbp[c] += gp;
            }
            ga(r, 0) = acc;
          }
          x->accumulate(std::move(gx));
          a->accumulate(std::move(ga));
          b->accumulate(std::move(gb));
          return;
        }
        for (std::int64_t r = 0; r < rows; ++r) {
          const double av = a->value(r, 0);
          const double* xr = x->value.data() + r * d;
          const double* out = nd.value.data() + r * d;
          const double* gr = nd.grad.data() + r * d;
          double acc_a = 0.0;
          for (std::int64_t c = 0; c < d; ++c) {
            const double gp = out[c] > 0.0 ? gr[c] : 0.0;
            if (x->needs_grad) x->grad_accum().data()[r * d + c] += gp * av;
            acc_a += gp * xr[c];
            if (b->needs_grad) b->grad_accum().data()[c] += gp;
          }
          if (a->needs_grad) a->grad_accum().data()[r] += acc_a;
        }
      };
    return n;
  }

  // out[i] = relu(gate[i] * (f[idx_f[i]] + g[idx_g[i]]) + bias): the gathered,
  // gated, biased first layer of the batched attention phase in one pass.
  Var gather_scale_bias_relu(Var f, IndexVec idx_f, Var g, IndexVec idx_g, Var gate, Var bias) {
    require(f->value.cols() == g->value.cols(), "gather_scale_bias_relu: column mismatch");
    require(idx_f->size() == idx_g->size(), "gather_scale_bias_relu: index mismatch");
    const auto r = static_cast<std::int64_t>(idx_f->size());
    require(gate->value.cols() == 1 && gate->value.rows() == r,
            "gather_scale_bias_relu: gate shape");
    require(bias->value.rows() == 1 && bias->value.cols() == f->value.cols(),
            "gather_scale_bias_relu: bias shape");
    for (auto id : *idx_f)
      require(id >= 0 && id < f->value.rows(), "gather_scale_bias_relu: index out of range");
    for (auto id : *idx_g)
      require(id >= 0 && id < g->value.rows(), "gather_scale_bias_relu: index out of range");
    const std::int64_t d = f->value.cols();
    Tensor out = Tensor::uninit(r, d);
    for (std::int64_t i = 0; i < r; ++i) {
      const double av = gate->value(i, 0);
      const double* __restrict fr = f->value.data() + (*idx_f)[static_cast<std::size_t>(i)] * d;
      const double* __restrict gr = g->value.data() + (*idx_g)[static_cast<std::size_t>(i)] * d;
      const double* __restrict bp = bias->value.data();
      double* __restrict o = out.data() + i * d;
      for (std::int64_t c = 0; c < d; ++c) {
        const double pre = av * (fr[c] + gr[c]) + bp[c];
        o[c] = pre > 0.0 ? pre : 0.0;
      }
    }
    Var n = make(std::move(out));
    n->needs_grad = f->needs_grad || g->needs_grad || gate->needs_grad || bias->needs_grad;
    if (n->needs_grad)
      n->backprop = [f, idx_f, g, idx_g, gate, bias](Node& nd) {
        const auto r = static_cast<std::int64_t>(idx_f->size());
        const std::int64_t d = nd.value.cols();
        if (f->needs_grad && g->needs_grad && gate->needs_grad && bias->needs_grad) {
          // single fused pass
          Tensor& gf = f->grad_accum();
          Tensor& gg = g->grad_accum();
          Tensor ggate = Tensor::uninit(r, 1);
          Tensor gb(1, d);
          double* __restrict gbp = gb.data();
          for (std::int64_t i = 0; i < r; ++i) {
            const double av = gate->value(i, 0);
            const double* __restrict ov = nd.value.data() + i * d;
            const double* __restrict gv = nd.grad.data() + i * d;
            const double* __restrict fr = f->value.data() + (*idx_f)[static_cast<std::size_t>(i)] * d;
            const double* __restrict gr = g->value.data() + (*idx_g)[static_cast<std::size_t>(i)] * d;
            double* __restrict dfr = gf.data() + (*idx_f)[static_cast<std::size_t>(i)] * d;
            double* __restrict dgr = gg.data() + (*idx_g)[static_cast<std::size_t>(i)] * d;
            double acc = 0.0;
            for (std::int64_t c = 0; c < d; ++c) {
              const double gp = ov[c] > 0.0 ? gv[c] : 0.0;
              const double scaled = gp * av;
              dfr[c] += scaled;
              dgr[c] += scaled;
              acc += gp * (fr[c] + gr[c]);
              gbp[c] += gp;
            }
            ggate(i, 0) = acc;
          }
          gate->accumulate(std::move(ggate));
          bias->accumulate(std::move(gb));
          return;
        }
        // generic path
        for (std::int64_t i = 0; i < r; ++i) {
          const double av = gate->value(i, 0);
          const double* ov = nd.value.data() + i * d;
          const double* gv = nd.grad.data() + i * d;
          const double* fr = f->value.data() + (*idx_f)[static_cast<std::size_t>(i)] * d;
          const double* gr = g->value.data() + (*idx_g)[static_cast<std::size_t>(i)] * d;
          double acc = 0.0;
          for (std::int64_t c = 0; c < d; ++c) {
            const double gp = ov[c] > 0.0 ? gv[c] : 0.0;
            if (f->needs_grad) f->grad_accum().data()[(*idx_f)[static_cast<std::size_t>(i)] * d + c] += gp * av;
            if (g->needs_grad) g->grad_accum().data()[(*idx_g)[static_cast<std::size_t>(i)] * d + c] += gp * av;
            acc += gp * (fr[c] + gr[c]);
            if (bias->needs_grad) bias->grad_accum().data()[c] += gp;
          }
          if (gate->needs_grad) gate->grad_accum()(i, 0) += acc;
        }
      };
    return n;
  }

  // Scatter-add of rows into `segments` buckets: out[seg[i]] += x[i].
  Var segment_sum_rows(Var x, IndexVec seg, std::int64_t segments) {
    require(static_cast<std::int64_t>(seg->size()) == x->value.rows(),
            "segment_sum_rows: one segment id per row required");
    for (auto id : *seg)
      require(id >= 0 && id < segments, "segment_sum_rows: segment id out of range");
    const std::int64_t d = x->value.cols();
    Tensor out(segments, d);
    for (std::size_t i = 0; i < seg->size(); ++i) {
      const double* src = x->value.data() + static_cast<std::int64_t>(i) * d;
      double* dst = out.data() + (*seg)[i] * d;
      for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
    }
    return unary(std::move(out), x, [seg](Node& n, Var x) {
      const std::int64_t d = n.grad.cols();
      Tensor g = Tensor::uninit(x->value.rows(), d);
      for (std::size_t i = 0; i < seg->size(); ++i)
        std::memcpy(g.data() + static_cast<std::int64_t>(i) * d, n.grad.data() + (*seg)[i] * d,
                    sizeof(double) * static_cast<std::size_t>(d));
      x->accumulate(std::move(g));
    });
  }

  // out[seg[i]] += w[i] * v[i]: the attention-weighted pooling of value rows.
  Var segment_weighted_sum(Var v, Var w, IndexVec seg, std::int64_t segments) {
    require(w->value.cols() == 1 && w->value.rows() == v->value.rows(),
            "segment_weighted_sum: weight shape");
    require(static_cast<std::int64_t>(seg->size()) == v->value.rows(),
            "segment_weighted_sum: one segment id per row required");
    for (auto id : *seg)
      require(id >= 0 && id < segments, "segment_weighted_sum: segment id out of range");
    const std::int64_t d = v->value.cols();
    Tensor out(segments, d);
    for (std::size_t i = 0; i < seg->size(); ++i) {
      const double wv = w->value(static_cast<std::int64_t>(i), 0);
      const double* src = v->value.data() + static_cast<std::int64_t>(i) * d;
      double* dst = out.data() + (*seg)[i] * d;
      for (std::int64_t c = 0; c < d; ++c) dst[c] += wv * src[c];
    }
    return unary_or_binary(std::move(out), v, w, [seg](Node& n, Var v, Var w) {
      const std::int64_t d = n.grad.cols();
      const auto r = static_cast<std::int64_t>(seg->size());
      if (v->needs_grad) {
        Tensor g = Tensor::uninit(r, d);
        for (std::int64_t i = 0; i < r; ++i) {
          const double wv = w->value(i, 0);
          const double* __restrict src = n.grad.data() + (*seg)[static_cast<std::size_t>(i)] * d;
          double* __restrict dst = g.data() + i * d;
          for (std::int64_t c = 0; c < d; ++c) dst[c] = wv * src[c];
        }
        v->accumulate(std::move(g));
      }
      if (w->needs_grad) {
        Tensor g = Tensor::uninit(r, 1);
        for (std::int64_t i = 0; i < r; ++i) {
          const double* __restrict gs = n.grad.data() + (*seg)[static_cast<std::size_t>(i)] * d;
          const double* __restrict vr = v->value.data() + i * d;
          double s = 0.0;
          for (std::int64_t c = 0; c < d; ++c) s += gs[c] * vr[c];
          g(i, 0) = s;
        }
        w->accumulate(std::move(g));
      }
    });
  }

  // out = base with patch rows added at the given row indices.
  Var scatter_add_rows(Var base, IndexVec rows, Var patch) {
    require(base->value.cols() == patch->value.cols(), "scatter_add_rows: column mismatch");
    require(static_cast<std::int64_t>(rows->size()) == patch->value.rows(),
            "scatter_add_rows: one index per patch row");
    for (auto id : *rows)
      require(id >= 0 && id < base->value.rows(), "scatter_add_rows: index out of range");
    const std::int64_t d = base->value.cols();
    Tensor out = base->value;
    for (std::size_t i = 0; i < rows->size(); ++i) {
      const double* src = patch->value.data() + static_cast<std::int64_t>(i) * d;
      double* dst = out.data() + (*rows)[i] * d;
      for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
    }
    return unary_or_binary(std::move(out), base, patch, [rows](Node& n, Var base, Var patch) {
      if (base->needs_grad) base->accumulate(n.grad);
      if (patch->needs_grad) {
        const std::int64_t d = n.grad.cols();
        Tensor g = Tensor::uninit(patch->value.rows(), d);
        for (std::size_t i = 0; i < rows->size(); ++i)
          std::memcpy(g.data() + static_cast<std::int64_t>(i) * d, n.grad.data() + (*rows)[i] * d,
                      sizeof(double) * static_cast<std::size_t>(d));
        patch->accumulate(std::move(g));
      }
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: empty");
    std::int64_t cols = 0;
    for (Var p : parts) cols += p->value.cols();
    const std::int64_t rows = parts.front()->value.rows();
    Tensor out = Tensor::uninit(rows, cols);
    std::int64_t off = 0;
    for (Var p : parts) {
      require(p->value.rows() == rows, "concat_cols: row mismatch");
      const std::int64_t pc = p->value.cols();
      for (std::int64_t r = 0; r < rows; ++r)
        std::memcpy(out.data() + r * cols + off, p->value.data() + r * pc,
                    sizeof(double) * static_cast<std::size_t>(pc));
      off += pc;
    }
    Var n = make(std::move(out));
    for (Var p : parts) n->needs_grad = n->needs_grad || p->needs_grad;
    if (n->needs_grad) {
      std::vector<Var> ps = parts;
      n->backprop = [ps](Node& nd) {
        const std::int64_t cols = nd.grad.cols();
        std::int64_t off = 0;
        for (Var p : ps) {
          const std::int64_t pc = p->value.cols();
          if (p->needs_grad) {
            Tensor g = Tensor::uninit(p->value.rows(), pc);
            for (std::int64_t r = 0; r < g.rows(); ++r)
              std::memcpy(g.data() + r * pc, nd.grad.data() + r * cols + off,
                          sizeof(double) * static_cast<std::size_t>(pc));
            p->accumulate(std::move(g));
          }
          off += pc;
        }
      };
    }
    return n;
  }

  Var slice_cols(Var x, std::int64_t c0, std::int64_t width) {
    require(c0 >= 0 && c0 + width <= x->value.cols(), "slice_cols: out of range");
    const std::int64_t xc = x->value.cols();
    Tensor out = Tensor::uninit(x->value.rows(), width);
    for (std::int64_t r = 0; r < out.rows(); ++r)
      std::memcpy(out.data() + r * width, x->value.data() + r * xc + c0,
                  sizeof(double) * static_cast<std::size_t>(width));
    return unary(std::move(out), x, [c0, width](Node& n, Var x) {
      Tensor& g = x->grad_accum();
      const std::int64_t xc = g.cols();
      for (std::int64_t r = 0; r < n.grad.rows(); ++r) {
        double* dst = g.data() + r * xc + c0;
        const double* src = n.grad.data() + r * width;
        for (std::int64_t c = 0; c < width; ++c) dst[c] += src[c];
      }
    });
  }

  Var slice_rows(Var x, std::int64_t r0, std::int64_t height) {
    require(r0 >= 0 && r0 + height <= x->value.rows(), "slice_rows: out of range");
    const std::int64_t d = x->value.cols();
    Tensor out = Tensor::uninit(height, d);
    std::memcpy(out.data(), x->value.data() + r0 * d,
                sizeof(double) * static_cast<std::size_t>(height * d));
    return unary(std::move(out), x, [r0, height](Node& n, Var x) {
      Tensor& g = x->grad_accum();
      const std::int64_t d = g.cols();
      double* dst = g.data() + r0 * d;
      const double* src = n.grad.data();
      for (std::int64_t i = 0; i < height * d; ++i) dst[i] += src[i];
    });
  }

  // Forward: one-hot of the row argmax. Backward: straight-through (gradient
  // passes to the soft input unchanged).
  Var hard_onehot_st(Var soft) {
    Tensor out(soft->value.rows(), soft->value.cols());
    for (std::int64_t r = 0; r < out.rows(); ++r) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < out.cols(); ++c)
        if (soft->value(r, c) > soft->value(r, best)) best = c;
      out(r, best) = 1.0;
    }
    return unary(std::move(out), soft, [](Node& n, Var s) { s->accumulate(n.grad); });
  }

  // Fused binary Gumbel-Softmax action head over probabilities p (R x 1):
  // component 0 of softmax(([log p~, log(1-p~)] + g) / tau) with p~ clamped to
  // [1e-7, 1-1e-7]. noise holds the two standard-Gumbel draws per row. Hard
  // mode thresholds with a straight-through gradient; either way the gradient
  // to p is that of the relaxed component (zero where p was clamped).
  Var binary_gumbel_action(Var p, double tau, bool hard, Tensor noise) {
    require(p->value.cols() == 1, "binary_gumbel_action: p must be a column");
    require(noise.rows() == p->value.rows() && noise.cols() == 2,
            "binary_gumbel_action: noise must be R x 2");
    require(tau > 0.0, "binary_gumbel_action: temperature must be > 0");
    const std::int64_t r = p->value.rows();
    Tensor soft = Tensor::uninit(r, 1);
    Tensor out = Tensor::uninit(r, 1);
    for (std::int64_t i = 0; i < r; ++i) {
      const double pc = std::min(std::max(p->value(i, 0), 1e-7), 1.0 - 1e-7);
      const double l0 = std::log(pc) + noise(i, 0);
      const double l1 = std::log(1.0 - pc) + noise(i, 1);
      const double y0 = 1.0 / (1.0 + std::exp((l1 - l0) / tau));
      soft(i, 0) = y0;
      out(i, 0) = hard ? (y0 > 0.5 ? 1.0 : 0.0) : y0;
    }
    Var n = make(std::move(out));
    n->needs_grad = p->needs_grad;
    if (n->needs_grad)
      n->backprop = [p, tau, soft = std::move(soft)](Node& nd) {
        const std::int64_t r = nd.grad.rows();
        Tensor g = Tensor::uninit(r, 1);
        for (std::int64_t i = 0; i < r; ++i) {
          const double pv = p->value(i, 0);
          if (pv <= 1e-7 || pv >= 1.0 - 1e-7) {
            g(i, 0) = 0.0;
            continue;
          }
          const double y0 = soft(i, 0);
          // dy0/dp = y0(1-y0)/tau * (1/p + 1/(1-p))
          g(i, 0) = nd.grad(i, 0) * y0 * (1.0 - y0) / tau * (1.0 / pv + 1.0 / (1.0 - pv));
        }
        p->accumulate(std::move(g));
      };
    return n;
  }

  Var detach(Var a) { return constant(a->value); }

  // ---- driver ----

  void backward(Var root) {
    require(root->value.rows() == 1 && root->value.cols() == 1, "backward: root must be scalar");
    if (!root->has_grad) {
      root->grad = Tensor::full(1, 1, 1.0);
      root->has_grad = true;
    } else {
      root->grad(0, 0) = 1.0;
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& n = **it;
      if (!n.has_grad || !n.backprop) continue;
      n.backprop(n);
      if (!n.param) {  // keep leaf grads for harvesting
        n.grad = Tensor();
        n.has_grad = false;
      }
    }
  }

  // Add this tape's leaf gradients into their Parameters. Call from one thread
  // at a time; leaf order is creation order, so reduction order is fixed.
  void harvest_param_grads() {
    for (Var l : leaves_)
      if (l->has_grad) l->param->grad.add_scaled(l->grad, 1.0);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  static void require(bool ok, const char* msg) {
    if (!ok) throw DataError(msg);
  }

  Var make(Tensor t) {
    nodes_.push_back(std::make_unique<Node>());
    Node* n = nodes_.back().get();
    n->value = std::move(t);
    return n;
  }

  template <typename F>
  Var unary(Tensor out, Var a, F&& f) {
    Var n = make(std::move(out));
    n->needs_grad = a->needs_grad;
    if (n->needs_grad) n->backprop = [a, f = std::forward<F>(f)](Node& nd) { f(nd, a); };
    return n;
  }

  template <typename F>
  Var unary_or_binary(Tensor out, Var a, Var b, F&& f) {
    Var n = make(std::move(out));
    n->needs_grad = a->needs_grad || b->needs_grad;
    if (n->needs_grad) n->backprop = [a, b, f = std::forward<F>(f)](Node& nd) { f(nd, a, b); };
    return n;
  }

  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<Var> leaves_;
};

}  // namespace ad
}  // namespace bhygnn
