#include <catch2/catch_amalgamated.hpp>

#include "fuxib/bias.hpp"
#include "fuxib/gradcheck.hpp"
#include "helpers.hpp"

using namespace fuxib;
using Catch::Approx;
using testutil::random_mat;

namespace {

std::vector<std::int64_t> random_timestamps(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::int64_t> ts(static_cast<std::size_t>(n));
  std::int64_t t = rng.uniform_int(0, 86400);
  for (int i = 0; i < n; ++i) {
    ts[static_cast<std::size_t>(i)] = t;
    t += rng.uniform_int(1, 5 * 86400);
  }
  return ts;
}

BiasFunction random_function(BiasKind kind, std::uint64_t seed) {
  BiasFunction fn = BiasFunction::make(kind);
  Rng rng(seed);
  if (kind == BiasKind::nn) {
    fn.init_random(rng);
  } else {
    for (auto& p : fn.theta) p += rng.normal(0.0, 0.3);
  }
  return fn;
}

}  // namespace

TEST_CASE("closed-form function examples") {
  // exp: a=2, b=0, x=0 -> 2
  BiasFunction e = BiasFunction::make(BiasKind::exp);
  e.theta = {2.0, 0.0};
  REQUIRE(eval_bias_function(e, 0.0) == Approx(2.0).margin(1e-15));

  // sin: a=1,b=0,c=1,d=0 at pi/2 -> 1
  BiasFunction s = BiasFunction::make(BiasKind::sin);
  s.theta = {1.0, 0.0, 1.0, 0.0};
  REQUIRE(eval_bias_function(s, 3.14159265358979323846 / 2) == Approx(1.0).margin(1e-12));

  // pow without the positivity transform: a=1.5, b=0.5, x=3 -> 1.5*4^-0.5 = 0.75
  BiasFunction p = BiasFunction::make(BiasKind::pow, /*softplus_exp=*/false);
  p.theta = {1.5, 0.5};
  REQUIRE(eval_bias_function(p, 3.0) == Approx(0.75).margin(1e-12));

  // pow boundary: f(0) = a for any exponent
  for (double b : {-2.0, 0.3, 5.0}) {
    p.theta = {1.23, b};
    REQUIRE(eval_bias_function(p, 0.0) == Approx(1.23).margin(1e-15));
  }

  REQUIRE(eval_bias_function(BiasFunction::make(BiasKind::zero), 7.0) == 0.0);
  REQUIRE_THROWS_AS(eval_bias_function(p, -0.5), config_error);
}

TEST_CASE("mixed function is the mean of its five parts") {
  auto fn = random_function(BiasKind::mixed, 5);
  const double x = 2.75;
  BiasFunction lin = BiasFunction::make(BiasKind::linear);
  lin.theta.assign(fn.theta.begin(), fn.theta.begin() + 2);
  BiasFunction lg = BiasFunction::make(BiasKind::log);
  lg.theta.assign(fn.theta.begin() + 2, fn.theta.begin() + 5);
  BiasFunction ex = BiasFunction::make(BiasKind::exp);
  ex.theta.assign(fn.theta.begin() + 5, fn.theta.begin() + 7);
  BiasFunction sn = BiasFunction::make(BiasKind::sin);
  sn.theta.assign(fn.theta.begin() + 7, fn.theta.begin() + 11);
  BiasFunction pw = BiasFunction::make(BiasKind::pow);
  pw.theta.assign(fn.theta.begin() + 11, fn.theta.end());
  double mean = (lin.eval(x) + lg.eval(x) + ex.eval(x) + sn.eval(x) + pw.eval(x)) / 5.0;
  REQUIRE(fn.eval(x) == Approx(mean).margin(1e-12));
}

TEST_CASE("frab with equal timestamps and unit pow parameters") {
  BiasFunction p = BiasFunction::make(BiasKind::pow, false);
  p.theta = {1.0, 1.0};
  std::vector<std::int64_t> ts(6, 1234567);
  auto b = frab_matrix<double>(ts, p, 86400.0);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j <= i; ++j) REQUIRE(b.values(i, j) == Approx(1.0).margin(1e-15));
}

TEST_CASE("frab zero kind removes the temporal map") {
  auto ts = random_timestamps(8, 3);
  auto b = frab_matrix<double>(ts, BiasFunction::make(BiasKind::zero), 86400.0);
  for (auto v : b.values.data()) REQUIRE(v == 0.0);
}

TEST_CASE("frab matches the per-entry loop oracle for every kind") {
  for (BiasKind kind : all_bias_kinds()) {
    if (kind == BiasKind::bucket) continue;
    for (int trial = 0; trial < 10; ++trial) {
      auto seed = static_cast<std::uint64_t>(100 * static_cast<int>(kind) + trial);
      int n = 2 + static_cast<int>(seed % 30);
      auto ts = random_timestamps(n, seed);
      auto fn = random_function(kind, seed + 1);
      const double scale = 86400.0;
      auto b = frab_matrix<double>(ts, fn, scale);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          if (j > i) {
            REQUIRE(b.values(i, j) == 0.0);
          } else {
            double dt = static_cast<double>(ts[static_cast<std::size_t>(i)] -
                                            ts[static_cast<std::size_t>(j)]) / scale;
            double expect = fn.eval(std::max(0.0, dt));
            REQUIRE(b.values(i, j) == Approx(expect).margin(1e-12));
          }
        }
    }
  }
}

TEST_CASE("bucket index formula") {
  REQUIRE(time_bucket(1000, 1000, 86400.0, 128) == 0);
  // delta/time_scale = 7 -> floor(log2(8)) = 3
  REQUIRE(time_bucket(7 * 86400, 0, 86400.0, 128) == 3);
  // clamp at the table end
  REQUIRE(time_bucket(std::int64_t(1) << 40, 0, 1.0, 16) == 15);
}

TEST_CASE("bucketed temporal matches the loop oracle and counts gathers") {
  for (int trial = 0; trial < 10; ++trial) {
    int n = 3 + trial * 5;
    auto ts = random_timestamps(n, static_cast<std::uint64_t>(trial));
    Matd beta(64, 1);
    Rng rng(static_cast<std::uint64_t>(trial) + 50);
    for (int i = 0; i < 64; ++i) beta(i, 0) = rng.normal(0, 1);
    instrument::reset();
    auto b = bucketed_rab_temporal<double>(ts, beta, 86400.0, 64);
    REQUIRE(instrument::snapshot().gathers ==
            static_cast<std::uint64_t>(n) * (n + 1) / 2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j)
        REQUIRE(b.values(i, j) ==
                beta(time_bucket(ts[static_cast<std::size_t>(i)],
                                 ts[static_cast<std::size_t>(j)], 86400.0, 64), 0));
  }
}

TEST_CASE("frab construction performs zero gathers") {
  auto ts = random_timestamps(32, 9);
  instrument::reset();
  frab_matrix<double>(ts, random_function(BiasKind::pow, 1), 86400.0);
  frab_matrix<double>(ts, random_function(BiasKind::nn, 2), 86400.0);
  REQUIRE(instrument::snapshot().gathers == 0);
}

TEST_CASE("positional table matches direct indexing") {
  Matd beta(3, 1);
  beta(0, 0) = 1;
  beta(1, 0) = 2;
  beta(2, 0) = 3;
  auto b = bucketed_rab_positional<double>(3, beta);
  REQUIRE(b.values(2, 0) == 3.0);
  REQUIRE(b.values(2, 1) == 2.0);
  REQUIRE(b.values(2, 2) == 1.0);
  REQUIRE(b.values(0, 1) == 0.0);  // masked

  // all-zero table gives the zero positional map
  auto z = bucketed_rab_positional<double>(5, Matd(8, 1));
  for (auto v : z.values.data()) REQUIRE(v == 0.0);

  // clamp: distances past the table end reuse the last entry
  auto c = bucketed_rab_positional<double>(5, beta);
  REQUIRE(c.values(4, 0) == 3.0);
}

TEST_CASE("monotone decay for pow and exp kinds") {
  Rng rng(64);
  for (int trial = 0; trial < 20; ++trial) {
    BiasFunction p = BiasFunction::make(BiasKind::pow);  // softplus keeps b_eff > 0
    p.theta[0] = 0.2 + std::abs(rng.normal(0, 1));
    p.theta[1] = rng.normal(0, 2.0);
    BiasFunction e = BiasFunction::make(BiasKind::exp);
    e.theta[0] = 0.2 + std::abs(rng.normal(0, 1));
    e.theta[1] = rng.normal(0, 1.0);
    double prev_p = p.eval(0.0), prev_e = e.eval(0.0);
    for (double x = 0.5; x < 200.0; x *= 2.0) {
      double vp = p.eval(x), ve = e.eval(x);
      REQUIRE(vp < prev_p);
      REQUIRE(ve <= prev_e);
      prev_p = vp;
      prev_e = ve;
    }
  }
}

TEST_CASE("causality: masked entries hold the mask value") {
  auto ts = random_timestamps(12, 21);
  auto b0 = frab_matrix<double>(ts, random_function(BiasKind::log, 3), 86400.0);
  auto badd = frab_matrix<double>(ts, random_function(BiasKind::log, 3), 86400.0,
                                  kAdditiveMask);
  for (int i = 0; i < 12; ++i)
    for (int j = i + 1; j < 12; ++j) {
      REQUIRE(b0.values(i, j) == 0.0);
      REQUIRE(badd.values(i, j) == kAdditiveMask);
    }
}

TEST_CASE("non-finite parameters are rejected") {
  BiasFunction p = BiasFunction::make(BiasKind::pow);
  p.theta[0] = std::numeric_limits<double>::infinity();
  auto ts = random_timestamps(4, 2);
  REQUIRE_THROWS_AS(frab_matrix<double>(ts, p, 86400.0), numeric_error);
}

TEST_CASE("gradients flow through frab parameters for every kind") {
  auto ts = random_timestamps(8, 31);
  for (BiasKind kind : all_bias_kinds()) {
    if (kind == BiasKind::bucket || kind == BiasKind::zero) continue;
    auto fn = random_function(kind, 7 + static_cast<std::uint64_t>(kind));
    Matd theta(fn.param_count(), 1);
    for (int i = 0; i < fn.param_count(); ++i) theta(i, 0) = fn.theta[static_cast<std::size_t>(i)];
    double err = testutil::op_fd_error(
        [&](Taped& t, ParamStored& s) {
          return tape_frab(t, t.param(s, "theta"), ts, kind, fn.softplus_exponent,
                           86400.0);
        },
        {{"theta", theta}}, 90, 1e-5);
    INFO(bias_kind_name(kind));
    REQUIRE(err < 1e-4);
  }
}

TEST_CASE("gradients flow through the bucketed tables") {
  auto ts = random_timestamps(8, 33);
  double err = testutil::op_fd_error(
      [&](Taped& t, ParamStored& s) {
        return tape_rab_bucketed_temporal(t, t.param(s, "beta"), ts, 86400.0, 16);
      },
      {{"beta", random_mat(16, 1, 44, 0.5)}}, 91, 1e-5);
  REQUIRE(err < 1e-5);

  err = testutil::op_fd_error(
      [&](Taped& t, ParamStored& s) {
        return tape_rab_positional(t, t.param(s, "beta"), 8);
      },
      {{"beta", random_mat(8, 1, 45, 0.5)}}, 92, 1e-5);
  REQUIRE(err < 1e-5);
}

TEST_CASE("tape frab values equal the plain construction") {
  auto ts = random_timestamps(10, 55);
  for (BiasKind kind : {BiasKind::pow, BiasKind::sin, BiasKind::nn}) {
    auto fn = random_function(kind, 60 + static_cast<std::uint64_t>(kind));
    Taped t;
    Matd theta(fn.param_count(), 1);
    for (int i = 0; i < fn.param_count(); ++i) theta(i, 0) = fn.theta[static_cast<std::size_t>(i)];
    auto node = tape_frab(t, t.constant(theta), ts, kind, fn.softplus_exponent, 86400.0);
    auto plain = frab_matrix<double>(ts, fn, 86400.0);
    REQUIRE(testutil::max_abs_diff(t.val(node), plain.values) == 0.0);
  }
}

TEST_CASE("float construction tracks the double path closely") {
  Rng rng(71);
  std::vector<std::int64_t> ts;
  std::int64_t t = 1'000'000'000;
  for (int i = 0; i < 48; ++i) {
    ts.push_back(t);
    t += rng.uniform_int(1, 4 * 86400);
  }
  for (BiasKind kind : {BiasKind::pow, BiasKind::exp, BiasKind::linear, BiasKind::log}) {
    BiasFunction fn = BiasFunction::make(kind);
    for (auto& p : fn.theta) p += rng.normal(0.0, 0.2);
    auto d = frab_matrix<double>(ts, fn, 86400.0);
    auto f = frab_matrix<float>(ts, fn, 86400.0);
    for (int i = 0; i < 48; ++i)
      for (int j = 0; j <= i; ++j) {
        double ref = d.values(i, j);
        double got = f.values(i, j);
        double denom = std::max({std::abs(ref), std::abs(got), 1e-3});
        INFO(bias_kind_name(kind) << " at (" << i << "," << j << ")");
        REQUIRE(std::abs(ref - got) / denom < 2e-4);
      }
  }
  // bucketed float path: same tables, indices may differ only at bucket edges
  Matd beta(32, 1);
  for (int i = 0; i < 32; ++i) beta(i, 0) = i;  // index-revealing table
  Mat<float> betaf(32, 1);
  for (int i = 0; i < 32; ++i) betaf(i, 0) = i;
  auto bd = bucketed_rab_temporal<double>(ts, beta, 86400.0, 32);
  auto bf = bucketed_rab_temporal<float>(ts, betaf, 86400.0, 32);
  for (int i = 0; i < 48; ++i)
    for (int j = 0; j <= i; ++j)
      REQUIRE(std::abs(bd.values(i, j) - bf.values(i, j)) <= 1.0);
}
