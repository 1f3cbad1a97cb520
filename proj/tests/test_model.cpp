#include <catch2/catch_amalgamated.hpp>

#include "fuxib/gradcheck.hpp"
#include "fuxib/model.hpp"
#include "fuxib/synth.hpp"
#include "helpers.hpp"

using namespace fuxib;
using Catch::Approx;
using testutil::max_abs_diff;
using testutil::random_mat;

namespace {

ModelConfig tiny_config(int items = 10, int n = 8, int d = 6, int blocks = 1,
                        MixerMode mode = MixerMode::aftm,
                        BiasKind kind = BiasKind::pow) {
  ModelConfig cfg;
  cfg.item_count = items;
  cfg.max_len = n;
  cfg.d = d;
  cfg.d_ffn = d;
  cfg.blocks = blocks;
  cfg.negatives = 3;
  cfg.mixer.mode = mode;
  cfg.mixer.use_qk_map = (mode == MixerMode::qk_baseline);
  cfg.mixer.heads = 2;
  cfg.bias.kind = kind;
  cfg.seed = 99;
  return cfg;
}

InteractionSequence make_seq(const ModelConfig& cfg, std::vector<std::int32_t> items,
                             std::int32_t target, std::uint64_t t0 = 0) {
  InteractionSequence s;
  s.user_id = 1;
  s.true_length = static_cast<int>(items.size());
  s.items = std::move(items);
  s.items.resize(static_cast<std::size_t>(cfg.max_len), 0);
  s.timestamps.assign(static_cast<std::size_t>(cfg.max_len), 0);
  for (int k = 0; k < s.true_length; ++k)
    s.timestamps[static_cast<std::size_t>(k)] = static_cast<std::int64_t>(t0) + std::int64_t(k) * 86400;
  s.target = target;
  return s;
}

}  // namespace

TEST_CASE("embed: all-padding sequence gives the zero matrix") {
  auto cfg = tiny_config();
  Model<double> m(cfg);
  auto seq = make_seq(cfg, {}, 1);
  Taped t;
  auto E = t.param(m.params, "embed.E");
  auto P = t.param(m.params, "embed.P");
  auto x = tape_embed(t, E, P, seq.items, 0);
  for (auto v : t.val(x).data()) REQUIRE(v == 0.0);
}

TEST_CASE("embed: single real position") {
  auto cfg = tiny_config();
  Model<double> m(cfg);
  auto seq = make_seq(cfg, {4}, 5);
  Taped t;
  auto E = t.param(m.params, "embed.E");
  auto P = t.param(m.params, "embed.P");
  auto x = tape_embed(t, E, P, seq.items, 1);
  const auto& vE = m.params.value("embed.E");
  const auto& vP = m.params.value("embed.P");
  for (int j = 0; j < cfg.d; ++j)
    REQUIRE(t.val(x)(0, j) == vE(4, j) + vP(0, j));
  for (int i = 1; i < cfg.max_len; ++i)
    for (int j = 0; j < cfg.d; ++j) REQUIRE(t.val(x)(i, j) == 0.0);
}

TEST_CASE("embed: out-of-range item rejected") {
  auto cfg = tiny_config();
  Model<double> m(cfg);
  auto seq = make_seq(cfg, {99}, 1);
  Taped t;
  auto E = t.param(m.params, "embed.E");
  auto P = t.param(m.params, "embed.P");
  REQUIRE_THROWS_AS(tape_embed(t, E, P, seq.items, 1), config_error);
}

TEST_CASE("gradients of unused embedding rows and padded positions are zero") {
  auto cfg = tiny_config();
  Model<double> m(cfg);
  auto seq = make_seq(cfg, {1, 2, 3}, 4);
  Rng rng(5);
  auto cand = m.draw_candidates(seq, rng);
  Taped t;
  auto loss = m.loss_on(t, seq, cand);
  t.backward(loss);
  m.params.zero_grads();
  t.accumulate_param_grads();
  const auto& gE = m.params.grad("embed.E");
  // padding row of E never receives gradient
  for (int j = 0; j < cfg.d; ++j) REQUIRE(gE(0, j) == 0.0);
  // an item that appears nowhere in the sequence or candidates
  std::unordered_set<int> used(seq.items.begin(), seq.items.end());
  used.insert(cand.idx.begin(), cand.idx.end());
  for (int item = 1; item <= cfg.item_count; ++item) {
    if (used.count(item)) continue;
    for (int j = 0; j < cfg.d; ++j) REQUIRE(gE(item, j) == 0.0);
  }
  // positional rows past true_length receive no gradient
  const auto& gP = m.params.grad("embed.P");
  for (int k = seq.true_length; k < cfg.max_len; ++k)
    for (int j = 0; j < cfg.d; ++j) REQUIRE(gP(k, j) == 0.0);
}

TEST_CASE("block with all-zero weights is the identity") {
  for (MixerMode mode : {MixerMode::aftm, MixerMode::qk_baseline}) {
    auto cfg = tiny_config(10, 8, 6, 1, mode);
    Model<double> m(cfg);
    for (auto& e : m.params.entries()) e.value.fill(0.0);
    Taped t;
    auto X = t.leaf(random_mat(cfg.max_len, cfg.d, 31));
    std::vector<std::int64_t> ts(static_cast<std::size_t>(cfg.max_len));
    for (int i = 0; i < cfg.max_len; ++i) ts[static_cast<std::size_t>(i)] = i * 86400;
    auto y = m.block_on(t, X, ts, 0);
    REQUIRE(max_abs_diff(t.val(y), t.val(X)) == 0.0);
  }
}

TEST_CASE("block output stays finite for large inputs") {
  auto cfg = tiny_config();
  Model<double> m(cfg);
  Taped t;
  auto X = t.leaf(random_mat(cfg.max_len, cfg.d, 32, 100.0));
  std::vector<std::int64_t> ts(static_cast<std::size_t>(cfg.max_len));
  for (int i = 0; i < cfg.max_len; ++i) ts[static_cast<std::size_t>(i)] = i * 86400;
  auto y = m.block_on(t, X, ts, 0);  // push() raises on non-finite values
  REQUIRE(t.val(y).all_finite());
}

TEST_CASE("whole-model gradient check in both modes") {
  for (MixerMode mode : {MixerMode::aftm, MixerMode::qk_baseline}) {
    auto cfg = tiny_config(8, 6, 4, 1, mode);
    Model<double> m(cfg);
    auto seq = make_seq(cfg, {1, 3, 5, 2}, 6);
    Rng rng(17);
    auto cand = m.draw_candidates(seq, rng);
    std::function<Taped::Ref(Taped&, ParamStored&)> loss_fn =
        [&](Taped& t, ParamStored&) { return m.loss_on(t, seq, cand); };
    auto rep = grad_check<double>(loss_fn, m.params, 1e-5);
    INFO(mixer_mode_name(mode) << " worst: " << rep.worst_param);
    REQUIRE(rep.max_rel_error < 1e-4);
    REQUIRE(rep.checked_scalars == m.analytic_param_count());
  }
}

TEST_CASE("whole-model gradient check with the bucketed temporal kind") {
  auto cfg = tiny_config(8, 6, 4, 1, MixerMode::aftm, BiasKind::bucket);
  cfg.bias.max_bucket = 8;
  Model<double> m(cfg);
  auto seq = make_seq(cfg, {1, 3, 5, 2}, 6);
  Rng rng(18);
  auto cand = m.draw_candidates(seq, rng);
  std::function<Taped::Ref(Taped&, ParamStored&)> loss_fn =
      [&](Taped& t, ParamStored&) { return m.loss_on(t, seq, cand); };
  // bucket tables start at zero; nudge them so gradients are informative
  Rng nudge(19);
  for (auto& e : m.params.entries())
    if (e.name.find("rab_t.beta") != std::string::npos)
      for (auto& v : e.value.data()) v = nudge.normal(0, 0.1);
  auto rep = grad_check<double>(loss_fn, m.params, 1e-5);
  REQUIRE(rep.max_rel_error < 1e-4);
}

TEST_CASE("predict_scores: exact-match row ranks its own item first") {
  const int items = 6, d = 4;
  Rng rng(40);
  Matd E(items + 1, d);
  for (int i = 1; i <= items; ++i) {
    double norm = 0;
    for (int j = 0; j < d; ++j) {
      E(i, j) = rng.normal(0, 1);
      norm += E(i, j) * E(i, j);
    }
    norm = std::sqrt(norm);
    for (int j = 0; j < d; ++j) E(i, j) /= norm;
  }
  Matd X(2, d);
  for (int j = 0; j < d; ++j) X(0, j) = E(3, j);
  auto scores = predict_scores(X, E);
  int best = 1;
  for (int i = 2; i <= items; ++i)
    if (scores(0, i) > scores(0, best)) best = i;
  REQUIRE(best == 3);
  // zero state scores everything zero
  for (int i = 0; i <= items; ++i) REQUIRE(scores(1, i) == 0.0);
  // softmax over a score row sums to one
  std::vector<double> row(static_cast<std::size_t>(items) + 1);
  for (int i = 0; i <= items; ++i) row[static_cast<std::size_t>(i)] = scores(0, i);
  auto sm = softmax_row(row);
  double sum = 0;
  for (double v : sm) sum += v;
  REQUIRE(sum == Approx(1.0).margin(1e-12));
}

TEST_CASE("sampled softmax loss values") {
  REQUIRE(sampled_softmax_loss(1.7, {1.7}) == Approx(std::log(2.0)).margin(1e-12));
  REQUIRE(sampled_softmax_loss(100.0, {-100.0, -90.0}) == Approx(0.0).margin(1e-12));
  REQUIRE_THROWS_AS(sampled_softmax_loss(1.0, {}), config_error);
  REQUIRE_THROWS_AS(
      sampled_softmax_loss(std::numeric_limits<double>::quiet_NaN(), {1.0}),
      numeric_error);
}

TEST_CASE("sampled softmax loss matches the naive candidate-set softmax") {
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    int n_neg = 1 + static_cast<int>(rng.uniform_int(0, 6));
    double pos = rng.normal(0, 2);
    std::vector<double> negs(static_cast<std::size_t>(n_neg));
    for (auto& v : negs) v = rng.normal(0, 2);
    double denom = std::exp(pos);
    for (double v : negs) denom += std::exp(v);
    double naive = -std::log(std::exp(pos) / denom);
    REQUIRE(sampled_softmax_loss(pos, negs) == Approx(naive).margin(1e-12));
  }
}

TEST_CASE("tape loss equals the scalar helper") {
  auto cfg = tiny_config();
  Model<double> m(cfg);
  auto seq = make_seq(cfg, {2, 4, 6}, 1);
  Rng rng(42);
  auto cand = m.draw_candidates(seq, rng);
  Taped t;
  auto fr = m.forward_on(t, seq);
  auto S = tape_sampled_scores(t, fr.x_final, fr.E, cand);
  auto loss = tape_sampled_softmax_loss(t, S);
  double manual = 0.0;
  for (int k = 0; k < cand.rows; ++k) {
    std::vector<double> negs;
    for (int c = 1; c < cand.width; ++c) negs.push_back(t.val(S)(k, c));
    manual += sampled_softmax_loss(t.val(S)(k, 0), negs);
  }
  manual /= cand.rows;
  REQUIRE(t.val(loss)(0, 0) == Approx(manual).margin(1e-12));
}

TEST_CASE("end-to-end causality under future-token perturbation") {
  for (MixerMode mode : {MixerMode::aftm, MixerMode::qk_baseline}) {
    auto cfg = tiny_config(12, 10, 6, 2, mode);
    Model<double> m(cfg);
    Rng rng(50);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<std::int32_t> items;
      int len = 4 + static_cast<int>(rng.uniform_int(0, 5));
      for (int k = 0; k < len; ++k)
        items.push_back(static_cast<std::int32_t>(rng.uniform_int(1, cfg.item_count)));
      auto seq = make_seq(cfg, items, 1);
      const int prefix = 3;
      auto base = m.final_states(seq);
      auto seq2 = seq;
      for (int k = prefix; k < len; ++k) {
        seq2.items[static_cast<std::size_t>(k)] =
            static_cast<std::int32_t>(rng.uniform_int(1, cfg.item_count));
        seq2.timestamps[static_cast<std::size_t>(k)] += rng.uniform_int(1, 86400 * 9);
      }
      auto perturbed = m.final_states(seq2);
      for (int i = 0; i < prefix; ++i)
        for (int j = 0; j < cfg.d; ++j)
          REQUIRE(std::abs(base(i, j) - perturbed(i, j)) <= 1e-12);
    }
  }
}

TEST_CASE("padding slots never influence real positions") {
  auto cfg = tiny_config(10, 12, 6, 2);
  Model<double> m(cfg);
  auto seq = make_seq(cfg, {3, 1, 4, 1, 5}, 9);
  auto base = m.final_states(seq);
  auto seq2 = seq;
  // garbage in the padding slots (still within the embedding table)
  for (int k = seq.true_length; k < cfg.max_len; ++k) {
    seq2.items[static_cast<std::size_t>(k)] = 7;
    seq2.timestamps[static_cast<std::size_t>(k)] = 123456789 + k;
  }
  // items at padded slots are ignored entirely; timestamps only affect rows
  // at or past true_length
  auto alt = m.final_states(seq2);
  for (int i = 0; i < seq.true_length; ++i)
    for (int j = 0; j < cfg.d; ++j) REQUIRE(base(i, j) == alt(i, j));
}

TEST_CASE("appending padding capacity leaves scores unchanged") {
  // same parameters exercised at two padded lengths (no 1/n map scaling so
  // the comparison is exact)
  auto cfg_small = tiny_config(10, 12, 6, 2);
  cfg_small.bias.scale_by_inv_n = false;
  auto cfg_big = cfg_small;
  cfg_big.max_len = 20;
  Model<double> a(cfg_small);
  Model<double> b(cfg_big);
  for (auto& e : b.params.entries()) {
    const auto& src = a.params.value(e.name);
    if (e.value.same_shape(src)) {
      e.value = src;
    } else {
      // positional tables: shared prefix, arbitrary tail
      for (int i = 0; i < src.rows(); ++i)
        for (int j = 0; j < src.cols(); ++j) e.value(i, j) = src(i, j);
    }
  }
  auto seq_a = make_seq(cfg_small, {3, 1, 4, 1, 5, 9, 2, 6}, 9);
  auto seq_b = make_seq(cfg_big, {3, 1, 4, 1, 5, 9, 2, 6}, 9);
  auto sa = a.score_last(seq_a);
  auto sb = b.score_last(seq_b);
  for (std::size_t i = 0; i < sa.size(); ++i)
    REQUIRE(std::abs(sa[i] - sb[i]) <= 1e-12);
}

TEST_CASE("parameter count matches the analytic formula across configurations") {
  for (MixerMode mode : {MixerMode::aftm, MixerMode::qk_baseline}) {
    for (BiasKind kind : {BiasKind::pow, BiasKind::zero, BiasKind::bucket,
                          BiasKind::nn, BiasKind::mixed}) {
      auto cfg = tiny_config(20, 16, 8, 3, mode, kind);
      cfg.d_ffn = 24;
      Model<double> m(cfg);
      INFO(mixer_mode_name(mode) << "/" << bias_kind_name(kind));
      REQUIRE(m.params.scalar_count() == m.analytic_param_count());
    }
  }
}

TEST_CASE("describe reports a matching audit") {
  auto cfg = tiny_config();
  Model<double> m(cfg);
  auto text = m.describe();
  REQUIRE(text.find("(match)") != std::string::npos);
  REQUIRE(text.find("embed.E") != std::string::npos);
}
