#pragma once

#include <cstdint>
#include <string>

#include "fuxib/bias.hpp"
#include "fuxib/tape.hpp"

namespace fuxib {

enum class MixerMode { aftm, qk_baseline };

inline const char* mixer_mode_name(MixerMode m) {
  return m == MixerMode::aftm ? "aftm" : "qk_baseline";
}

// Which attention maps participate in mixing. In aftm mode there is no
// query-key path at all; in qk_baseline mode the flags drop summands of the
// attention logits and zero the corresponding mixer channels.
struct MixerConfig {
  MixerMode mode = MixerMode::aftm;
  bool use_qk_map = false;
  bool use_positional_map = true;
  bool use_temporal_map = true;
  int heads = 4;

  void validate(int d) const {
    if (mode == MixerMode::aftm && use_qk_map)
      throw config_error("aftm mode has no query-key attention map");
    bool any = use_positional_map || use_temporal_map ||
               (mode == MixerMode::qk_baseline && use_qk_map);
    if (!any) throw config_error("at least one attention map must be enabled");
    if (mode == MixerMode::qk_baseline) {
      if (heads < 1) throw config_error("heads must be >= 1");
      if (d % heads != 0) throw config_error("heads must divide the embedding dim");
    }
  }
};

// Tape refs for one block's mixer parameters. Negative refs mean absent
// (aftm mode carries no query-key parameters).
template <class Real>
struct MixerRefs {
  using Ref = typename Tape<Real>::Ref;
  Ref W_u = -1;       // d x 2d
  Ref W_v = -1;       // d x d
  Ref W_q = -1;       // d x d, baseline only
  Ref W_k = -1;       // d x d, baseline only
  Ref W_v_attn = -1;  // d x d, baseline only
  Ref W_o = -1;       // d x d, baseline only
};

// out = s*a (+ b) (+ c); pass ref -1 to drop a summand
template <class Real>
typename Tape<Real>::Ref tape_scale_add(Tape<Real>& t, typename Tape<Real>::Ref a,
                                        Real s, typename Tape<Real>::Ref b,
                                        typename Tape<Real>::Ref c) {
  const auto out = t.next_ref();
  Mat<Real> v = t.val(a);
  for (auto& x : v.data()) x *= s;
  if (b >= 0) add_inplace(v, t.val(b));
  if (c >= 0) add_inplace(v, t.val(c));
  bool req = t.requires_grad(a) || (b >= 0 && t.requires_grad(b)) ||
             (c >= 0 && t.requires_grad(c));
  return t.push(std::move(v), req, [a, s, b, c, out](Tape<Real>& tt) {
    const auto& g = tt.grad(out);
    if (tt.requires_grad(a)) {
      auto& ga = tt.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += s * g.data()[i];
    }
    if (b >= 0 && tt.requires_grad(b)) add_inplace(tt.grad(b), g);
    if (c >= 0 && tt.requires_grad(c)) add_inplace(tt.grad(c), g);
  }, "scale_add");
}

// out = s * mask(silu(a)): SiLU, zero the strict upper triangle, scale.
// One node instead of three keeps the big n^2 intermediates off the tape.
template <class Real>
typename Tape<Real>::Ref tape_silu_mask_scale(Tape<Real>& t,
                                              typename Tape<Real>::Ref a, Real s) {
  const auto& va = t.val(a);
  detail::require(va.rows() == va.cols(), "silu_mask_scale: square matrix expected");
  const auto out = t.next_ref();
  const int n = va.rows();
  Mat<Real> v(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j)
      v(i, j) = s * static_cast<Real>(fuxib::silu(static_cast<double>(va(i, j))));
  return t.push(std::move(v), t.requires_grad(a), [a, s, out](Tape<Real>& tt) {
    if (!tt.requires_grad(a)) return;
    auto& ga = tt.grad(a);
    const auto& va = tt.val(a);
    const auto& g = tt.grad(out);
    const int n = g.rows();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j)
        ga(i, j) += g(i, j) * s *
                    static_cast<Real>(silu_grad(static_cast<double>(va(i, j))));
  }, "silu_mask_scale");
}

// f_AFTM(X, t) = U ⊙ concat(B V, B^t V) with U = SiLU(X W_u), V = SiLU(X W_v).
// B and B_t must be causally masked with mask value 0. Output is n x 2d; no
// query or key is computed anywhere on this path.
template <class Real>
typename Tape<Real>::Ref aftm_forward(Tape<Real>& t, typename Tape<Real>::Ref Xn,
                                      typename Tape<Real>::Ref B,
                                      typename Tape<Real>::Ref B_t,
                                      const MixerRefs<Real>& p) {
  using instrument::FlopTag;
  const int d = t.val(Xn).cols();
  detail::require(t.val(p.W_u).rows() == d && t.val(p.W_u).cols() == 2 * d,
                  "aftm: W_u must be d x 2d");
  detail::require(t.val(p.W_v).rows() == d && t.val(p.W_v).cols() == d,
                  "aftm: W_v must be d x d");
  auto U = t.silu(t.matmul(Xn, p.W_u, FlopTag::projection));
  auto V = t.silu(t.matmul(Xn, p.W_v, FlopTag::projection));
  auto BV = t.matmul(B, V, FlopTag::attention_map);
  auto BtV = t.matmul(B_t, V, FlopTag::attention_map);
  return t.mul(U, t.concat_cols(BV, BtV));
}

// Multi-head attention in the gated-SiLU style: per head
//   A_h = mask(SiLU(Q_h K_h^T / sqrt(d_h) + B + B^t)) * (1/n)
// output = concat_h(A_h V_h) W_o. Each summand is dropped when its flag is
// off. B/B_t enter the logits unscaled; masking happens after the activation
// so their masked entries never leak.
template <class Real>
typename Tape<Real>::Ref qk_attention_forward(Tape<Real>& t,
                                              typename Tape<Real>::Ref Xn,
                                              typename Tape<Real>::Ref B,
                                              typename Tape<Real>::Ref B_t,
                                              const MixerRefs<Real>& p,
                                              const MixerConfig& cfg) {
  using instrument::FlopTag;
  detail::require(cfg.mode == MixerMode::qk_baseline,
                  "qk_attention_forward requires qk_baseline mode");
  const int n = t.val(Xn).rows();
  const int d = t.val(Xn).cols();
  const int h = cfg.heads;
  const int dh = d / h;
  const Real inv_n = Real(1) / static_cast<Real>(n);
  const Real inv_sqrt_dh = Real(1) / static_cast<Real>(std::sqrt(double(dh)));

  typename Tape<Real>::Ref Q = -1, K = -1;
  if (cfg.use_qk_map) {
    Q = t.matmul(Xn, p.W_q, FlopTag::projection);
    K = t.matmul(Xn, p.W_k, FlopTag::projection);
  }
  auto V = t.matmul(Xn, p.W_v_attn, FlopTag::projection);
  auto Bpos = cfg.use_positional_map ? B : typename Tape<Real>::Ref(-1);
  auto Btime = cfg.use_temporal_map ? B_t : typename Tape<Real>::Ref(-1);

  // without the query-key summand the logits are head-independent
  typename Tape<Real>::Ref shared_A = -1;
  if (!cfg.use_qk_map) {
    typename Tape<Real>::Ref logits;
    if (Bpos >= 0)
      logits = tape_scale_add(t, Bpos, Real(1), Btime, -1);
    else if (Btime >= 0)
      logits = tape_scale_add(t, Btime, Real(1), -1, -1);
    else
      logits = t.constant(Mat<Real>(n, n));
    shared_A = tape_silu_mask_scale(t, logits, inv_n);
  }

  typename Tape<Real>::Ref heads_out = -1;
  for (int i = 0; i < h; ++i) {
    typename Tape<Real>::Ref A = shared_A;
    if (cfg.use_qk_map) {
      auto Qh = t.slice_cols(Q, i * dh, dh);
      auto Kh = t.slice_cols(K, i * dh, dh);
      auto S = t.matmul_nt(Qh, Kh, FlopTag::attention_map);
      auto logits = tape_scale_add(t, S, inv_sqrt_dh, Bpos, Btime);
      A = tape_silu_mask_scale(t, logits, inv_n);
    }
    auto Vh = t.slice_cols(V, i * dh, dh);
    auto Oh = t.matmul(A, Vh, FlopTag::attention_map);
    heads_out = (heads_out < 0) ? Oh : t.concat_cols(heads_out, Oh);
  }
  return t.matmul(heads_out, p.W_o, FlopTag::projection);
}

// Counted multiplies grouped by term class, for comparison with closed-form
// leading coefficients.
struct TermCounts {
  std::uint64_t proj = 0;  // ~ n d^2
  std::uint64_t map = 0;   // ~ n^2 d
  std::uint64_t ffn = 0;   // ~ n d_ffn d
  std::uint64_t untagged = 0;
  std::uint64_t gathers = 0;

  // exact integer coefficient, or -1 when the counted work is not an exact
  // multiple of the term
  static long long coefficient(std::uint64_t mults, std::uint64_t term) {
    if (term == 0 || mults % term != 0) return -1;
    return static_cast<long long>(mults / term);
  }
  long long nd2_coefficient(int n, int d) const {
    return coefficient(proj, std::uint64_t(n) * std::uint64_t(d) * std::uint64_t(d));
  }
  long long n2d_coefficient(int n, int d) const {
    return coefficient(map, std::uint64_t(n) * std::uint64_t(n) * std::uint64_t(d));
  }
  long long ffn_coefficient(int n, int d, int d_ffn) const {
    return coefficient(ffn, std::uint64_t(n) * std::uint64_t(d_ffn) * std::uint64_t(d));
  }
};

// Runs fwd with fresh counters and returns the tagged totals.
template <class Fn>
TermCounts measure_terms(Fn&& fwd) {
  instrument::reset();
  fwd();
  auto c = instrument::snapshot();
  TermCounts tc;
  tc.proj = c.mults[static_cast<int>(instrument::FlopTag::projection)];
  tc.map = c.mults[static_cast<int>(instrument::FlopTag::attention_map)];
  tc.ffn = c.mults[static_cast<int>(instrument::FlopTag::ffn)];
  tc.untagged = c.mults[static_cast<int>(instrument::FlopTag::untagged)];
  tc.gathers = c.gathers;
  return tc;
}

}  // namespace fuxib
