#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fuxib/params.hpp"
#include "fuxib/tape.hpp"

namespace fuxib {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked_scalars = 0;
  std::vector<std::string> skipped;  // non-trainable parameters
};

// |fd - ad| relative to the larger magnitude; tiny absolute differences are
// treated as exact so zero-gradient parameters do not trip the floor.
inline double grad_rel_error(double fd, double ad) {
  double diff = std::abs(fd - ad);
  if (diff < 1e-9) return 0.0;
  double denom = std::max({std::abs(fd), std::abs(ad), 1e-6});
  return diff / denom;
}

// Central-difference check of reverse-mode gradients. loss_fn must be a
// deterministic function of the store values: it records the forward pass on
// the given tape and returns the scalar loss ref.
template <class Real>
GradCheckReport grad_check(
    const std::function<typename Tape<Real>::Ref(Tape<Real>&, ParamStore<Real>&)>& loss_fn,
    ParamStore<Real>& store, double h) {
  auto eval_loss = [&](void) -> double {
    Tape<Real> t;
    auto ref = loss_fn(t, store);
    double v = static_cast<double>(t.val(ref)(0, 0));
    if (!std::isfinite(v)) throw numeric_error("grad_check: non-finite loss");
    return v;
  };

  // reverse-mode gradients
  store.zero_grads();
  {
    Tape<Real> t;
    auto ref = loss_fn(t, store);
    if (!std::isfinite(static_cast<double>(t.val(ref)(0, 0))))
      throw numeric_error("grad_check: non-finite loss");
    t.backward(ref);
    t.accumulate_param_grads();
  }

  GradCheckReport rep;
  for (auto& e : store.entries()) {
    if (!e.trainable) {
      rep.skipped.push_back(e.name);
      continue;
    }
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const Real saved = e.value.data()[i];
      e.value.data()[i] = saved + static_cast<Real>(h);
      double lp = eval_loss();
      e.value.data()[i] = saved - static_cast<Real>(h);
      double lm = eval_loss();
      e.value.data()[i] = saved;
      double fd = (lp - lm) / (2.0 * h);
      double ad = static_cast<double>(e.grad.data()[i]);
      double err = grad_rel_error(fd, ad);
      ++rep.checked_scalars;
      if (err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst_param = e.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return rep;
}

}  // namespace fuxib
