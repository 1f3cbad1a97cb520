#include <catch2/catch_amalgamated.hpp>

#include "fuxib/tensor.hpp"
#include "helpers.hpp"

using namespace fuxib;
using Catch::Approx;

TEST_CASE("matmul identity") {
  auto m = testutil::random_mat(2, 3, 1);
  auto c = matmul(Matd::identity(2), m);
  REQUIRE(testutil::max_abs_diff(c, m) == 0.0);
}

TEST_CASE("matmul hand example") {
  Matd a(2, 2);
  a(0, 0) = 1; a(0, 1) = 2; a(1, 0) = 3; a(1, 1) = 4;
  Matd b(2, 1);
  b(0, 0) = 5; b(1, 0) = 6;
  auto c = matmul(a, b);
  REQUIRE(c(0, 0) == 17.0);
  REQUIRE(c(1, 0) == 39.0);
}

TEST_CASE("matmul shape mismatch throws") {
  Matd a(2, 3), b(2, 3);
  REQUIRE_THROWS_AS(matmul(a, b), config_error);
}

static Matd transpose(const Matd& m) {
  Matd t(m.cols(), m.rows());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

TEST_CASE("transpose variants agree with explicit transposition") {
  auto a = testutil::random_mat(3, 4, 2);
  auto b = testutil::random_mat(5, 4, 3);
  REQUIRE(testutil::max_abs_diff(matmul_nt(a, b), matmul(a, transpose(b))) < 1e-14);

  auto c = testutil::random_mat(4, 3, 4);
  auto d = testutil::random_mat(4, 2, 5);
  REQUIRE(testutil::max_abs_diff(matmul_tn(c, d), matmul(transpose(c), d)) < 1e-14);
}

TEST_CASE("matmul flop counting") {
  instrument::reset();
  auto a = testutil::random_mat(2, 3, 1);
  auto b = testutil::random_mat(3, 4, 2);
  matmul(a, b, instrument::FlopTag::projection);
  auto c = instrument::snapshot();
  REQUIRE(c.mults[static_cast<int>(instrument::FlopTag::projection)] == 24);
  REQUIRE(c.total_mults() == 24);
}

TEST_CASE("softmax uniform row") {
  std::vector<double> row(7, 3.25);
  auto sm = softmax_row(row);
  for (double v : sm) REQUIRE(v == Approx(1.0 / 7).epsilon(1e-12));
  double sum = 0;
  for (double v : sm) sum += v;
  REQUIRE(sum == Approx(1.0).margin(1e-12));
}

TEST_CASE("softmax large outlier is stable") {
  std::vector<double> row = {0.0, 1e6, -3.0};
  auto sm = softmax_row(row);
  for (double v : sm) REQUIRE(std::isfinite(v));
  REQUIRE(sm[1] == Approx(1.0).margin(1e-12));
}

TEST_CASE("log_sum_exp matches naive on small rows") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    int len = static_cast<int>(rng.uniform_int(1, 8));
    std::vector<double> row(static_cast<std::size_t>(len));
    for (auto& v : row) v = rng.normal(0.0, 2.0);
    double naive = 0.0;
    for (double v : row) naive += std::exp(v);
    naive = std::log(naive);
    REQUIRE(log_sum_exp(row.data(), len) == Approx(naive).margin(1e-12));

    auto sm = softmax_row(row);
    double total = 0.0;
    for (double v : row) total += std::exp(v);
    for (int i = 0; i < len; ++i)
      REQUIRE(sm[static_cast<std::size_t>(i)] ==
              Approx(std::exp(row[static_cast<std::size_t>(i)]) / total).margin(1e-12));
  }
}
