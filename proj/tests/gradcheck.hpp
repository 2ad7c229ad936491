#pragma once

// Finite-difference gradient oracle for tests. Independent of the backward
// pass: it only evaluates freshly built forward graphs at perturbed parameter
// values (central differences, step 1e-5) and compares against one analytic
// backward sweep.

#include <cmath>
#include <functional>
#include <string>

#include "bhygnn/autodiff.hpp"
#include "bhygnn/nn.hpp"

namespace bhygnn::test {

struct GradCheckReport {
  double max_abs_diff = 0.0;
  double max_rel_err = 0.0;
  std::string worst;
  std::int64_t checked = 0;
  bool ok = true;
};

// forward: rebuilds the scalar loss from the store's current parameter values.
inline GradCheckReport check_gradients(ParamStore& store,
                                       const std::function<double()>& forward,
                                       const std::function<ad::Var(ad::Tape&)>& build,
                                       double step = 1e-5, double rel_tol = 1e-4,
                                       double abs_floor = 1e-6) {
  GradCheckReport rep;
  store.zero_grads();
  {
    ad::Tape t;
    ad::Var loss = build(t);
    t.backward(loss);
    t.harvest_param_grads();
  }
  for (const auto& p : store.all()) {
    for (std::int64_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const double fp = forward();
      p->value[i] = saved - step;
      const double fm = forward();
      p->value[i] = saved;
      const double fd = (fp - fm) / (2.0 * step);
      const double an = p->grad[i];
      const double diff = std::abs(fd - an);
      const double rel = diff / std::max({std::abs(fd), std::abs(an), 1e-12});
      rep.checked++;
      if (diff > rep.max_abs_diff) rep.max_abs_diff = diff;
      if (diff > abs_floor && rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = p->name + "[" + std::to_string(i) + "] fd=" + std::to_string(fd) +
                    " an=" + std::to_string(an);
      }
      if (diff > abs_floor && rel > rel_tol) rep.ok = false;
    }
  }
  return rep;
}

// Convenience wrapper when the same builder serves both purposes.
inline GradCheckReport check_gradients(ParamStore& store,
                                       const std::function<ad::Var(ad::Tape&)>& build,
                                       double step = 1e-5, double rel_tol = 1e-4,
                                       double abs_floor = 1e-6) {
  auto forward = [&]() {
    ad::Tape t;
    return build(t)->value(0, 0);
  };
  return check_gradients(store, forward, build, step, rel_tol, abs_floor);
}

}  // namespace bhygnn::test
