#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "fuxib/bias.hpp"
#include "fuxib/data.hpp"
#include "fuxib/mixer.hpp"
#include "fuxib/tape.hpp"

namespace fuxib {

// Temporal-bias settings shared by all blocks (each block owns its own
// learnable parameters).
struct BiasConfig {
  BiasKind kind = BiasKind::pow;
  bool softplus_exponent = true;  // pow exponent through softplus
  double time_scale = 86400.0;    // seconds per model time unit
  int max_bucket = 128;           // bucketed baseline table size
  bool scale_by_inv_n = true;     // scale B/B^t by 1/n when used as maps
};

struct ModelConfig {
  int item_count = 0;
  int max_len = 200;  // n
  int d = 50;
  int blocks = 2;  // L
  int d_ffn = 50;
  int negatives = 128;  // N for the sampled softmax
  MixerConfig mixer;
  BiasConfig bias;
  std::uint64_t seed = 42;

  void validate() const {
    if (item_count < 1) throw config_error("item_count must be >= 1");
    if (max_len < 2) throw config_error("max_len must be >= 2");
    if (d < 1) throw config_error("embedding dim must be >= 1");
    if (blocks < 1) throw config_error("block count must be >= 1");
    if (d_ffn < d) throw config_error("d_ffn must be >= d");
    if (negatives < 1) throw config_error("negatives must be >= 1");
    if (bias.time_scale <= 0.0) throw config_error("time_scale must be positive");
    if (bias.max_bucket < 1) throw config_error("max_bucket must be >= 1");
    mixer.validate(d);
  }
};

// Per-position candidate item ids for the sampled softmax: column 0 is the
// positive target, the rest are negatives.
struct Candidates {
  int rows = 0;
  int width = 0;
  std::vector<std::int32_t> idx;  // rows x width, row-major

  std::int32_t at(int r, int c) const {
    return idx[static_cast<std::size_t>(r) * width + c];
  }
};

// rows k < true_len: E[items[k]] + P[k]; padded rows stay exactly zero.
template <class Real>
typename Tape<Real>::Ref tape_embed(Tape<Real>& t, typename Tape<Real>::Ref E,
                                    typename Tape<Real>::Ref P,
                                    const std::vector<std::int32_t>& items,
                                    int true_len) {
  const auto& vE = t.val(E);
  const auto& vP = t.val(P);
  const int n = static_cast<int>(items.size());
  const int d = vE.cols();
  detail::require(vP.cols() == d && vP.rows() >= n, "embed: P shape mismatch");
  detail::require(true_len <= n, "embed: true_length exceeds sequence length");
  Mat<Real> x(n, d);
  for (int k = 0; k < true_len; ++k) {
    int item = items[static_cast<std::size_t>(k)];
    if (item < 0 || item >= vE.rows())
      throw config_error("embed: item index out of range: " + std::to_string(item));
    const Real* e = vE.row(item);
    const Real* p = vP.row(k);
    Real* xr = x.row(k);
    for (int j = 0; j < d; ++j) xr[j] = e[j] + p[j];
  }
  const auto out = t.next_ref();
  auto its = items;
  return t.push(std::move(x), t.any_requires({E, P}),
                [E, P, its, true_len, out](Tape<Real>& tt) {
    const auto& g = tt.grad(out);
    const int d = g.cols();
    for (int k = 0; k < true_len; ++k) {
      const Real* gr = g.row(k);
      if (tt.requires_grad(E)) {
        Real* ge = tt.grad(E).row(its[static_cast<std::size_t>(k)]);
        for (int j = 0; j < d; ++j) ge[j] += gr[j];
      }
      if (tt.requires_grad(P)) {
        Real* gp = tt.grad(P).row(k);
        for (int j = 0; j < d; ++j) gp[j] += gr[j];
      }
    }
  }, "embed");
}

// S[k][c] = x_k . E[idx[k][c]] for the first `rows` positions of X.
template <class Real>
typename Tape<Real>::Ref tape_sampled_scores(Tape<Real>& t,
                                             typename Tape<Real>::Ref X,
                                             typename Tape<Real>::Ref E,
                                             const Candidates& cand) {
  const auto& vX = t.val(X);
  const auto& vE = t.val(E);
  const int d = vX.cols();
  detail::require(vE.cols() == d, "sampled_scores: dim mismatch");
  detail::require(cand.rows <= vX.rows(), "sampled_scores: too many rows");
  Mat<Real> s(cand.rows, cand.width);
  for (int k = 0; k < cand.rows; ++k) {
    const Real* xk = vX.row(k);
    Real* sk = s.row(k);
    for (int c = 0; c < cand.width; ++c) {
      int item = cand.at(k, c);
      if (item < 0 || item >= vE.rows())
        throw config_error("sampled_scores: candidate out of range");
      const Real* e = vE.row(item);
      Real acc = Real(0);
      for (int j = 0; j < d; ++j) acc += xk[j] * e[j];
      sk[c] = acc;
    }
  }
  const auto out = t.next_ref();
  auto c2 = cand;
  return t.push(std::move(s), t.any_requires({X, E}), [X, E, c2, out](Tape<Real>& tt) {
    const auto& g = tt.grad(out);
    const auto& vX = tt.val(X);
    const auto& vE = tt.val(E);
    const int d = vX.cols();
    for (int k = 0; k < c2.rows; ++k) {
      const Real* gk = g.row(k);
      const Real* xk = vX.row(k);
      for (int c = 0; c < c2.width; ++c) {
        const Real gs = gk[c];
        if (gs == Real(0)) continue;
        const int item = c2.at(k, c);
        if (tt.requires_grad(X)) {
          Real* gx = tt.grad(X).row(k);
          const Real* e = vE.row(item);
          for (int j = 0; j < d; ++j) gx[j] += gs * e[j];
        }
        if (tt.requires_grad(E)) {
          Real* ge = tt.grad(E).row(item);
          for (int j = 0; j < d; ++j) ge[j] += gs * xk[j];
        }
      }
    }
  }, "sampled_scores");
}

// mean over rows of log_sum_exp(row) - row[0] (column 0 holds the positive)
template <class Real>
typename Tape<Real>::Ref tape_sampled_softmax_loss(Tape<Real>& t,
                                                   typename Tape<Real>::Ref S) {
  const auto& vS = t.val(S);
  const int rows = vS.rows(), width = vS.cols();
  detail::require(rows >= 1 && width >= 2, "loss: need a positive and negatives");
  std::vector<double> row(static_cast<std::size_t>(width));
  double loss = 0.0;
  for (int k = 0; k < rows; ++k) {
    for (int c = 0; c < width; ++c) row[static_cast<std::size_t>(c)] =
        static_cast<double>(vS(k, c));
    loss += log_sum_exp(row.data(), width) - row[0];
  }
  loss /= rows;
  Mat<Real> out_v(1, 1);
  out_v(0, 0) = static_cast<Real>(loss);
  const auto out = t.next_ref();
  return t.push(std::move(out_v), t.requires_grad(S), [S, out](Tape<Real>& tt) {
    if (!tt.requires_grad(S)) return;
    const auto& vS = tt.val(S);
    const int rows = vS.rows(), width = vS.cols();
    const double g = static_cast<double>(tt.grad(out)(0, 0)) / rows;
    std::vector<double> row(static_cast<std::size_t>(width));
    std::vector<double> sm(static_cast<std::size_t>(width));
    auto& gS = tt.grad(S);
    for (int k = 0; k < rows; ++k) {
      for (int c = 0; c < width; ++c) row[static_cast<std::size_t>(c)] =
          static_cast<double>(vS(k, c));
      softmax_row(row.data(), width, sm.data());
      for (int c = 0; c < width; ++c) {
        double d = sm[static_cast<std::size_t>(c)] - (c == 0 ? 1.0 : 0.0);
        gS(k, c) += static_cast<Real>(g * d);
      }
    }
  }, "sampled_softmax_loss");
}

// -log(exp(s+) / (exp(s+) + sum exp(s-))), stabilized
inline double sampled_softmax_loss(double pos_score,
                                   const std::vector<double>& neg_scores) {
  if (neg_scores.empty()) throw config_error("loss needs at least one negative");
  std::vector<double> all;
  all.reserve(neg_scores.size() + 1);
  all.push_back(pos_score);
  for (double s : neg_scores) all.push_back(s);
  for (double s : all)
    if (!std::isfinite(s)) throw numeric_error("non-finite score in loss");
  return log_sum_exp(all.data(), static_cast<int>(all.size())) - pos_score;
}

// scores = X_final E^T; ranking later forces the padding column to -inf
template <class Real>
Mat<Real> predict_scores(const Mat<Real>& x_final, const Mat<Real>& E) {
  return matmul_nt(x_final, E);
}

template <class Real = double>
class Model {
 public:
  using Ref = typename Tape<Real>::Ref;

  struct ForwardRefs {
    Ref x_final = -1;
    Ref E = -1;
  };

  ModelConfig cfg;
  ParamStore<Real> params;

  explicit Model(ModelConfig c) : cfg(c) {
    cfg.validate();
    init_params();
  }

  static std::string block_prefix(int i) { return "block" + std::to_string(i) + "."; }

  // ---- tape assembly ----

  ForwardRefs forward_on(Tape<Real>& t, const InteractionSequence& seq) {
    detail::require(static_cast<int>(seq.items.size()) == cfg.max_len,
                    "sequence length does not match the model");
    ForwardRefs fr;
    fr.E = t.param(params, "embed.E");
    Ref P = t.param(params, "embed.P");
    Ref x = tape_embed(t, fr.E, P, seq.items, seq.true_length);
    for (int b = 0; b < cfg.blocks; ++b) x = block_on(t, x, seq.timestamps, b);
    fr.x_final = x;
    return fr;
  }

  // One decoder block: pre-norm AFTM mixing into a 2d->d down-projection
  // with residual, then a pre-norm SwiGLU FFN with residual. The qk_baseline
  // mode adds the multi-head attention branch into the first residual sum.
  Ref block_on(Tape<Real>& t, Ref X, const std::vector<std::int64_t>& timestamps,
               int b) {
    using instrument::FlopTag;
    const std::string pre = block_prefix(b);
    const int n = t.val(X).rows();
    const Real inv_n = Real(1) / static_cast<Real>(n);

    Ref Xn = t.rmsnorm(X, t.param(params, pre + "norm1.gain"));

    // positional map
    Ref B_raw = -1;
    if (cfg.mixer.use_positional_map)
      B_raw = tape_rab_positional(t, t.param(params, pre + "rab_pos.beta"), n);
    // temporal map
    Ref Bt_raw = -1;
    if (cfg.mixer.use_temporal_map && cfg.bias.kind != BiasKind::zero) {
      if (cfg.bias.kind == BiasKind::bucket) {
        Bt_raw = tape_rab_bucketed_temporal(t, t.param(params, pre + "rab_t.beta"),
                                            timestamps, cfg.bias.time_scale,
                                            cfg.bias.max_bucket);
      } else {
        Bt_raw = tape_frab(t, t.param(params, pre + "frab.theta"), timestamps,
                           cfg.bias.kind, cfg.bias.softplus_exponent,
                           cfg.bias.time_scale);
      }
    }
    Ref zero_map = -1;
    auto zeros = [&]() {
      if (zero_map < 0) zero_map = t.constant(Mat<Real>(n, n));
      return zero_map;
    };
    auto as_channel = [&](Ref raw) {
      if (raw < 0) return zeros();
      return cfg.bias.scale_by_inv_n ? t.scale(raw, inv_n) : raw;
    };
    Ref B = as_channel(B_raw);
    Ref Bt = as_channel(Bt_raw);

    MixerRefs<Real> mr;
    mr.W_u = t.param(params, pre + "aftm.W_u");
    mr.W_v = t.param(params, pre + "aftm.W_v");
    Ref M = aftm_forward(t, Xn, B, Bt, mr);
    Ref H = t.add(X, t.matmul(M, t.param(params, pre + "mffn.W_down"),
                              FlopTag::projection));
    if (cfg.mixer.mode == MixerMode::qk_baseline) {
      mr.W_q = t.param(params, pre + "attn.W_q");
      mr.W_k = t.param(params, pre + "attn.W_k");
      mr.W_v_attn = t.param(params, pre + "attn.W_v");
      mr.W_o = t.param(params, pre + "attn.W_o");
      // the additive summands enter the logits unscaled
      Ref Ba = cfg.mixer.use_positional_map && B_raw >= 0 ? B_raw : zeros();
      Ref Bta = cfg.mixer.use_temporal_map && Bt_raw >= 0 ? Bt_raw : zeros();
      H = t.add(H, qk_attention_forward(t, Xn, Ba, Bta, mr, cfg.mixer));
    }

    Ref Hn = t.rmsnorm(H, t.param(params, pre + "norm2.gain"));
    Ref gate = t.silu(t.matmul(Hn, t.param(params, pre + "ffn.W_g"), FlopTag::ffn));
    Ref lin = t.matmul(Hn, t.param(params, pre + "ffn.W_1"), FlopTag::ffn);
    Ref F = t.matmul(t.mul(gate, lin), t.param(params, pre + "ffn.W_2"), FlopTag::ffn);
    return t.add(H, F);
  }

  Candidates draw_candidates(const InteractionSequence& seq, Rng& rng) const {
    Candidates c;
    c.rows = seq.true_length;
    c.width = cfg.negatives + 1;
    c.idx.resize(static_cast<std::size_t>(c.rows) * c.width);
    for (int k = 0; k < c.rows; ++k) {
      std::int32_t target = seq.target_at(k);
      c.idx[static_cast<std::size_t>(k) * c.width] = target;
      auto negs = sample_negatives(rng, cfg.item_count, {target}, cfg.negatives);
      for (int j = 0; j < cfg.negatives; ++j)
        c.idx[static_cast<std::size_t>(k) * c.width + 1 + j] = negs[static_cast<std::size_t>(j)];
    }
    return c;
  }

  Ref loss_on(Tape<Real>& t, const InteractionSequence& seq, const Candidates& cand) {
    auto fr = forward_on(t, seq);
    Ref S = tape_sampled_scores(t, fr.x_final, fr.E, cand);
    return tape_sampled_softmax_loss(t, S);
  }

  // ---- evaluation paths (no gradients) ----

  Mat<Real> final_states(const InteractionSequence& seq) {
    Tape<Real> t;
    auto fr = forward_on(t, seq);
    return t.val(fr.x_final);
  }

  // next-item scores after the last non-padded position
  std::vector<double> score_last(const InteractionSequence& seq) {
    detail::require(seq.true_length >= 1, "score_last: empty sequence");
    Tape<Real> t;
    auto fr = forward_on(t, seq);
    const auto& x = t.val(fr.x_final);
    const auto& E = params.value("embed.E");
    const int last = seq.true_length - 1;
    std::vector<double> scores(static_cast<std::size_t>(E.rows()));
    for (int i = 0; i < E.rows(); ++i) {
      const Real* e = E.row(i);
      const Real* xr = x.row(last);
      double acc = 0.0;
      for (int j = 0; j < E.cols(); ++j)
        acc += static_cast<double>(xr[j]) * static_cast<double>(e[j]);
      scores[static_cast<std::size_t>(i)] = acc;
    }
    return scores;
  }

  // ---- parameter audit ----

  std::size_t analytic_param_count() const {
    const auto n = static_cast<std::size_t>(cfg.max_len);
    const auto d = static_cast<std::size_t>(cfg.d);
    const auto dffn = static_cast<std::size_t>(cfg.d_ffn);
    std::size_t total = (static_cast<std::size_t>(cfg.item_count) + 1) * d + n * d;
    std::size_t per_block = 2 * d;                       // norm gains
    per_block += 2 * d * d + d * d + 2 * d * d;          // W_u, W_v, W_down
    per_block += 2 * d * dffn + dffn * d;                // W_g, W_1, W_2
    if (cfg.mixer.mode == MixerMode::qk_baseline) per_block += 4 * d * d;
    if (cfg.mixer.use_positional_map) per_block += n;    // rab_pos.beta
    if (cfg.mixer.use_temporal_map) {
      if (cfg.bias.kind == BiasKind::bucket)
        per_block += static_cast<std::size_t>(cfg.bias.max_bucket);
      else
        per_block += static_cast<std::size_t>(bias_param_count(cfg.bias.kind));
    }
    return total + static_cast<std::size_t>(cfg.blocks) * per_block;
  }

  std::string describe() const {
    std::ostringstream os;
    os << "model: mode=" << mixer_mode_name(cfg.mixer.mode)
       << " bias=" << bias_kind_name(cfg.bias.kind) << " items=" << cfg.item_count
       << " n=" << cfg.max_len << " d=" << cfg.d << " L=" << cfg.blocks
       << " d_ffn=" << cfg.d_ffn << "\n";
    std::size_t total = 0;
    for (const auto& e : params.entries()) {
      os << "  " << e.name << "  " << e.value.rows() << "x" << e.value.cols()
         << "  " << e.value.size() << (e.trainable ? "" : "  (frozen)") << "\n";
      if (e.trainable) total += e.value.size();
    }
    os << "trainable scalars: " << total << "\n";
    os << "analytic count:    " << analytic_param_count()
       << (total == analytic_param_count() ? "  (match)" : "  (MISMATCH)") << "\n";
    return os.str();
  }

 private:
  void init_params() {
    Rng rng(cfg.seed);
    const int d = cfg.d;
    const double sd = 0.02;
    auto E = Mat<Real>::random_normal(cfg.item_count + 1, d, rng, sd);
    for (int j = 0; j < d; ++j) E(0, j) = Real(0);  // padding row stays zero
    params.add("embed.E", std::move(E));
    params.add("embed.P", Mat<Real>::random_normal(cfg.max_len, d, rng, sd));
    for (int b = 0; b < cfg.blocks; ++b) {
      const std::string pre = block_prefix(b);
      params.add(pre + "norm1.gain", Mat<Real>::full(1, d, Real(1)));
      params.add(pre + "norm2.gain", Mat<Real>::full(1, d, Real(1)));
      params.add(pre + "aftm.W_u", Mat<Real>::random_normal(d, 2 * d, rng, sd));
      params.add(pre + "aftm.W_v", Mat<Real>::random_normal(d, d, rng, sd));
      params.add(pre + "mffn.W_down", Mat<Real>::random_normal(2 * d, d, rng, sd));
      if (cfg.mixer.mode == MixerMode::qk_baseline) {
        params.add(pre + "attn.W_q", Mat<Real>::random_normal(d, d, rng, sd));
        params.add(pre + "attn.W_k", Mat<Real>::random_normal(d, d, rng, sd));
        params.add(pre + "attn.W_v", Mat<Real>::random_normal(d, d, rng, sd));
        params.add(pre + "attn.W_o", Mat<Real>::random_normal(d, d, rng, sd));
      }
      params.add(pre + "ffn.W_g", Mat<Real>::random_normal(d, cfg.d_ffn, rng, sd));
      params.add(pre + "ffn.W_1", Mat<Real>::random_normal(d, cfg.d_ffn, rng, sd));
      params.add(pre + "ffn.W_2", Mat<Real>::random_normal(cfg.d_ffn, d, rng, sd));
      if (cfg.mixer.use_positional_map)
        params.add(pre + "rab_pos.beta", Mat<Real>(cfg.max_len, 1));
      if (cfg.mixer.use_temporal_map) {
        if (cfg.bias.kind == BiasKind::bucket) {
          params.add(pre + "rab_t.beta", Mat<Real>(cfg.bias.max_bucket, 1));
        } else if (cfg.bias.kind != BiasKind::zero) {
          BiasFunction fn = BiasFunction::make(cfg.bias.kind, cfg.bias.softplus_exponent);
          fn.init_random(rng);
          Mat<Real> theta(fn.param_count(), 1);
          for (int i = 0; i < fn.param_count(); ++i)
            theta(i, 0) = static_cast<Real>(fn.theta[static_cast<std::size_t>(i)]);
          params.add(pre + "frab.theta", std::move(theta));
        }
      }
    }
  }
};

using Modeld = Model<double>;

// Runs one block forward at the given dims and returns the tagged multiply
// counts for comparison with the closed-form coefficients.
template <class Real = double>
TermCounts measure_block_terms(MixerMode mode, BiasKind kind, int n, int d,
                               int d_ffn, int heads = 4) {
  ModelConfig cfg;
  cfg.item_count = 1;
  cfg.max_len = n;
  cfg.d = d;
  cfg.d_ffn = d_ffn;
  cfg.blocks = 1;
  cfg.negatives = 1;
  cfg.mixer.mode = mode;
  cfg.mixer.use_qk_map = (mode == MixerMode::qk_baseline);
  cfg.mixer.heads = heads;
  cfg.bias.kind = kind;
  Model<Real> m(cfg);
  Rng rng(7);
  std::vector<std::int64_t> ts(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ts[static_cast<std::size_t>(i)] = std::int64_t(i) * 86400;
  Tape<Real> t;
  auto X = t.leaf(Mat<Real>::random_normal(n, d, rng, 0.5));
  return measure_terms([&] { m.block_on(t, X, ts, 0); });
}

}  // namespace fuxib
