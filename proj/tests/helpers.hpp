#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fuxib/gradcheck.hpp"
#include "fuxib/tape.hpp"

namespace testutil {

using fuxib::Matd;
using fuxib::ParamStored;
using fuxib::Rng;
using fuxib::Taped;

// FD-checks an op by reducing its output through a fixed random weighting,
// which makes the check sensitive to per-entry mistakes.
template <class BuildOp>
double op_fd_error(BuildOp&& build, std::vector<std::pair<std::string, Matd>> inputs,
                   std::uint64_t seed, double h = 1e-6) {
  ParamStored store;
  for (auto& [name, m] : inputs) store.add(name, m);
  std::function<Taped::Ref(Taped&, ParamStored&)> loss_fn =
      [&build, seed](Taped& t, ParamStored& s) -> Taped::Ref {
    auto out = build(t, s);
    Rng rng(seed + 12345);
    auto w = t.constant(
        Matd::random_normal(t.val(out).rows(), t.val(out).cols(), rng, 1.0));
    return t.sum_all(t.mul(out, w));
  };
  auto rep = fuxib::grad_check<double>(loss_fn, store, h);
  return rep.max_rel_error;
}

inline Matd random_mat(int rows, int cols, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  return Matd::random_normal(rows, cols, rng, sd);
}

inline double max_abs_diff(const Matd& a, const Matd& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace testutil
