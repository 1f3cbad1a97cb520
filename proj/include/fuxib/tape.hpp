#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fuxib/params.hpp"
#include "fuxib/tensor.hpp"

namespace fuxib {

// Reverse-mode tape over a fixed op set. Each recorded node owns its forward
// value; backward() replays nodes in exact reverse of recording order.
// Parameters are bound leaves: after backward(), accumulate_param_grads()
// adds their tape gradients into the owning ParamStore.
//
// The op set is deliberately small (matmul variants, add, mul, scale,
// silu/sigmoid, elementwise exp/log/sin/pow, rmsnorm, concat/slice, causal
// mask). Composite model-specific nodes are built on push() by the modules
// that own them.
template <class Real>
class Tape {
 public:
  using Ref = int;
  using BackwardFn = std::function<void(Tape&)>;

  struct Node {
    Mat<Real> value;
    Mat<Real> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Ref constant(Mat<Real> v) { return push(std::move(v), false, nullptr); }

  Ref leaf(Mat<Real> v) { return push(std::move(v), true, nullptr); }

  Ref param(ParamStore<Real>& store, const std::string& name) {
    int pid = store.id_of(name);
    Ref r = push(store.at(pid).value, true, nullptr);
    bindings_.push_back({r, &store, pid});
    return r;
  }

  const Mat<Real>& val(Ref r) const { return nodes_[static_cast<std::size_t>(r)].value; }
  Mat<Real>& grad(Ref r) { return nodes_[static_cast<std::size_t>(r)].grad; }
  bool requires_grad(Ref r) const {
    return nodes_[static_cast<std::size_t>(r)].requires_grad;
  }
  std::size_t node_count() const { return nodes_.size(); }

  // index the next push() will occupy; lets ops capture their output ref
  Ref next_ref() const { return static_cast<Ref>(nodes_.size()); }

  Ref push(Mat<Real> value, bool requires_grad, BackwardFn bw,
           const char* opname = "op") {
    if (!value.all_finite())
      throw numeric_error(std::string("non-finite output from ") + opname);
    Node n;
    n.value = std::move(value);
    n.backward = std::move(bw);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<Ref>(nodes_.size()) - 1;
  }

  bool any_requires(std::initializer_list<Ref> rs) const {
    for (Ref r : rs)
      if (requires_grad(r)) return true;
    return false;
  }

  // ---- core ops ----

  Ref matmul(Ref a, Ref b, instrument::FlopTag tag = instrument::FlopTag::untagged) {
    const Ref out = next_ref();
    Mat<Real> c = fuxib::matmul(val(a), val(b), tag);
    return push(std::move(c), any_requires({a, b}), [a, b, out](Tape& t) {
      if (t.requires_grad(a)) add_inplace(t.grad(a), fuxib::matmul_nt(t.grad(out), t.val(b)));
      if (t.requires_grad(b)) add_inplace(t.grad(b), fuxib::matmul_tn(t.val(a), t.grad(out)));
    }, "matmul");
  }

  // a * b^T
  Ref matmul_nt(Ref a, Ref b, instrument::FlopTag tag = instrument::FlopTag::untagged) {
    const Ref out = next_ref();
    Mat<Real> c = fuxib::matmul_nt(val(a), val(b), tag);
    return push(std::move(c), any_requires({a, b}), [a, b, out](Tape& t) {
      if (t.requires_grad(a)) add_inplace(t.grad(a), fuxib::matmul(t.grad(out), t.val(b)));
      if (t.requires_grad(b)) add_inplace(t.grad(b), fuxib::matmul_tn(t.grad(out), t.val(a)));
    }, "matmul_nt");
  }

  Ref add(Ref a, Ref b) {
    detail::require(val(a).same_shape(val(b)), "add: shape mismatch");
    const Ref out = next_ref();
    Mat<Real> c = val(a);
    add_inplace(c, val(b));
    return push(std::move(c), any_requires({a, b}), [a, b, out](Tape& t) {
      if (t.requires_grad(a)) add_inplace(t.grad(a), t.grad(out));
      if (t.requires_grad(b)) add_inplace(t.grad(b), t.grad(out));
    }, "add");
  }

  Ref mul(Ref a, Ref b) {
    detail::require(val(a).same_shape(val(b)), "mul: shape mismatch");
    const Ref out = next_ref();
    Mat<Real> c = val(a);
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= val(b).data()[i];
    return push(std::move(c), any_requires({a, b}), [a, b, out](Tape& t) {
      const auto& g = t.grad(out);
      if (t.requires_grad(a)) {
        auto& ga = t.grad(a);
        const auto& vb = t.val(b);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * vb.data()[i];
      }
      if (t.requires_grad(b)) {
        auto& gb = t.grad(b);
        const auto& va = t.val(a);
        for (std::size_t i = 0; i < g.size(); ++i) gb.data()[i] += g.data()[i] * va.data()[i];
      }
    }, "mul");
  }

  Ref scale(Ref a, Real s) {
    const Ref out = next_ref();
    Mat<Real> c = val(a);
    for (auto& x : c.data()) x *= s;
    return push(std::move(c), requires_grad(a), [a, s, out](Tape& t) {
      if (!t.requires_grad(a)) return;
      auto& ga = t.grad(a);
      const auto& g = t.grad(out);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += s * g.data()[i];
    }, "scale");
  }

  Ref silu(Ref a) {
    const Ref out = next_ref();
    Mat<Real> c = val(a);
    for (auto& x : c.data()) x = static_cast<Real>(fuxib::silu(static_cast<double>(x)));
    return push(std::move(c), requires_grad(a), [a, out](Tape& t) {
      if (!t.requires_grad(a)) return;
      auto& ga = t.grad(a);
      const auto& va = t.val(a);
      const auto& g = t.grad(out);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.data()[i] += g.data()[i] *
                        static_cast<Real>(silu_grad(static_cast<double>(va.data()[i])));
    }, "silu");
  }

  Ref sigmoid(Ref a) {
    const Ref out = next_ref();
    Mat<Real> c = val(a);
    for (auto& x : c.data()) x = static_cast<Real>(fuxib::sigmoid(static_cast<double>(x)));
    return push(std::move(c), requires_grad(a), [a, out](Tape& t) {
      if (!t.requires_grad(a)) return;
      auto& ga = t.grad(a);
      const auto& vc = t.val(out);
      const auto& g = t.grad(out);
      for (std::size_t i = 0; i < g.size(); ++i) {
        Real s = vc.data()[i];
        ga.data()[i] += g.data()[i] * s * (Real(1) - s);
      }
    }, "sigmoid");
  }

  Ref exp_elem(Ref a) {
    const Ref out = next_ref();
    Mat<Real> c = val(a);
    for (auto& x : c.data()) x = std::exp(x);
    return push(std::move(c), requires_grad(a), [a, out](Tape& t) {
      if (!t.requires_grad(a)) return;
      auto& ga = t.grad(a);
      const auto& vc = t.val(out);
      const auto& g = t.grad(out);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * vc.data()[i];
    }, "exp");
  }

  Ref log_elem(Ref a) {
    const Ref out = next_ref();
    Mat<Real> c = val(a);
    for (auto& x : c.data()) x = std::log(x);
    return push(std::move(c), requires_grad(a), [a, out](Tape& t) {
      if (!t.requires_grad(a)) return;
      auto& ga = t.grad(a);
      const auto& va = t.val(a);
      const auto& g = t.grad(out);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] / va.data()[i];
    }, "log");
  }

  Ref sin_elem(Ref a) {
    const Ref out = next_ref();
    Mat<Real> c = val(a);
    for (auto& x : c.data()) x = std::sin(x);
    return push(std::move(c), requires_grad(a), [a, out](Tape& t) {
      if (!t.requires_grad(a)) return;
      auto& ga = t.grad(a);
      const auto& va = t.val(a);
      const auto& g = t.grad(out);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.data()[i] += g.data()[i] * std::cos(va.data()[i]);
    }, "sin");
  }

  // x^p for constant p; defined for positive x
  Ref pow_const(Ref a, Real p) {
    const Ref out = next_ref();
    Mat<Real> c = val(a);
    for (auto& x : c.data()) x = std::pow(x, p);
    return push(std::move(c), requires_grad(a), [a, p, out](Tape& t) {
      if (!t.requires_grad(a)) return;
      auto& ga = t.grad(a);
      const auto& va = t.val(a);
      const auto& g = t.grad(out);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.data()[i] += g.data()[i] * p * std::pow(va.data()[i], p - Real(1));
    }, "pow");
  }

  // row-wise y_j = gain_j * x_j / sqrt(mean(x^2) + eps); gain is 1 x cols
  Ref rmsnorm(Ref x, Ref gain, Real eps = Real(1e-6)) {
    const auto& vx = val(x);
    const auto& vg = val(gain);
    detail::require(vg.rows() == 1 && vg.cols() == vx.cols(),
                    "rmsnorm: gain must be 1 x cols");
    const Ref out = next_ref();
    const int rows = vx.rows(), cols = vx.cols();
    Mat<Real> c(rows, cols);
    for (int i = 0; i < rows; ++i) {
      const Real* xi = vx.row(i);
      Real ms = Real(0);
      for (int j = 0; j < cols; ++j) ms += xi[j] * xi[j];
      ms = ms / Real(cols) + eps;
      const Real inv = Real(1) / std::sqrt(ms);
      Real* ci = c.row(i);
      for (int j = 0; j < cols; ++j) ci[j] = vg.row(0)[j] * xi[j] * inv;
    }
    return push(std::move(c), any_requires({x, gain}), [x, gain, eps, out](Tape& t) {
      const auto& vx = t.val(x);
      const auto& vg = t.val(gain);
      const auto& g = t.grad(out);
      const int rows = vx.rows(), cols = vx.cols();
      for (int i = 0; i < rows; ++i) {
        const Real* xi = vx.row(i);
        const Real* gi = g.row(i);
        Real ms = Real(0);
        for (int j = 0; j < cols; ++j) ms += xi[j] * xi[j];
        ms = ms / Real(cols) + eps;
        const Real inv = Real(1) / std::sqrt(ms);
        if (t.requires_grad(x)) {
          Real s = Real(0);
          for (int j = 0; j < cols; ++j) s += gi[j] * vg.row(0)[j] * xi[j];
          Real* gx = t.grad(x).row(i);
          const Real inv3 = inv * inv * inv;
          for (int j = 0; j < cols; ++j)
            gx[j] += gi[j] * vg.row(0)[j] * inv - xi[j] * s * inv3 / Real(cols);
        }
        if (t.requires_grad(gain)) {
          Real* gg = t.grad(gain).row(0);
          for (int j = 0; j < cols; ++j) gg[j] += gi[j] * xi[j] * inv;
        }
      }
    }, "rmsnorm");
  }

  Ref concat_cols(Ref a, Ref b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    detail::require(va.rows() == vb.rows(), "concat_cols: row mismatch");
    const Ref out = next_ref();
    Mat<Real> c(va.rows(), va.cols() + vb.cols());
    for (int i = 0; i < va.rows(); ++i) {
      Real* ci = c.row(i);
      const Real* ai = va.row(i);
      const Real* bi = vb.row(i);
      for (int j = 0; j < va.cols(); ++j) ci[j] = ai[j];
      for (int j = 0; j < vb.cols(); ++j) ci[va.cols() + j] = bi[j];
    }
    return push(std::move(c), any_requires({a, b}), [a, b, out](Tape& t) {
      const auto& g = t.grad(out);
      const int ac = t.val(a).cols(), bc = t.val(b).cols();
      for (int i = 0; i < g.rows(); ++i) {
        const Real* gi = g.row(i);
        if (t.requires_grad(a)) {
          Real* ga = t.grad(a).row(i);
          for (int j = 0; j < ac; ++j) ga[j] += gi[j];
        }
        if (t.requires_grad(b)) {
          Real* gb = t.grad(b).row(i);
          for (int j = 0; j < bc; ++j) gb[j] += gi[ac + j];
        }
      }
    }, "concat_cols");
  }

  Ref slice_cols(Ref a, int begin, int width) {
    const auto& va = val(a);
    detail::require(begin >= 0 && begin + width <= va.cols(), "slice_cols: out of range");
    const Ref out = next_ref();
    Mat<Real> c(va.rows(), width);
    for (int i = 0; i < va.rows(); ++i)
      for (int j = 0; j < width; ++j) c(i, j) = va(i, begin + j);
    return push(std::move(c), requires_grad(a), [a, begin, width, out](Tape& t) {
      if (!t.requires_grad(a)) return;
      auto& ga = t.grad(a);
      const auto& g = t.grad(out);
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < width; ++j) ga(i, begin + j) += g(i, j);
    }, "slice_cols");
  }

  // zero the strictly upper triangle (j > i)
  Ref mask_causal_zero(Ref a) {
    const auto& va = val(a);
    detail::require(va.rows() == va.cols(), "mask: square matrix expected");
    const Ref out = next_ref();
    Mat<Real> c = va;
    for (int i = 0; i < c.rows(); ++i)
      for (int j = i + 1; j < c.cols(); ++j) c(i, j) = Real(0);
    return push(std::move(c), requires_grad(a), [a, out](Tape& t) {
      if (!t.requires_grad(a)) return;
      auto& ga = t.grad(a);
      const auto& g = t.grad(out);
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j <= i; ++j) ga(i, j) += g(i, j);
    }, "mask_causal_zero");
  }

  Ref sum_all(Ref a) {
    const Ref out = next_ref();
    Real s = Real(0);
    for (auto x : val(a).data()) s += x;
    Mat<Real> c(1, 1);
    c(0, 0) = s;
    return push(std::move(c), requires_grad(a), [a, out](Tape& t) {
      if (!t.requires_grad(a)) return;
      const Real g = t.grad(out)(0, 0);
      for (auto& x : t.grad(a).data()) x += g;
    }, "sum_all");
  }

  // ---- backward ----

  void backward(Ref root) {
    const auto& rv = val(root);
    detail::require(rv.rows() == 1 && rv.cols() == 1, "backward: root must be scalar");
    for (auto& n : nodes_) n.grad = Mat<Real>(n.value.rows(), n.value.cols());
    nodes_[static_cast<std::size_t>(root)].grad(0, 0) = Real(1);
    for (int i = root; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || !n.backward) continue;
      n.backward(*this);
    }
  }

  // add bound leaf gradients into their ParamStore grad buffers
  void accumulate_param_grads() {
    for (const auto& b : bindings_) {
      auto& e = b.store->at(b.param_id);
      const auto& g = nodes_[static_cast<std::size_t>(b.ref)].grad;
      if (g.empty()) continue;  // backward never ran
      add_inplace(e.grad, g);
    }
  }

  // same, but into external buffers aligned with the store's entry ids; used
  // by batch workers so the shared store is never written concurrently
  void accumulate_param_grads_into(std::vector<Mat<Real>>& bufs) const {
    for (const auto& b : bindings_) {
      const auto& g = nodes_[static_cast<std::size_t>(b.ref)].grad;
      if (g.empty()) continue;
      auto& dst = bufs[static_cast<std::size_t>(b.param_id)];
      if (dst.empty()) dst = Mat<Real>(g.rows(), g.cols());
      add_inplace(dst, g);
    }
  }

 private:
  struct Binding {
    Ref ref;
    ParamStore<Real>* store;
    int param_id;
  };

  std::vector<Node> nodes_;
  std::vector<Binding> bindings_;
};

using Taped = Tape<double>;

}  // namespace fuxib
