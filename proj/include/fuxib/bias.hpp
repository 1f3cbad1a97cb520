#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fuxib/common.hpp"
#include "fuxib/fastmath.hpp"
#include "fuxib/tape.hpp"
#include "fuxib/tensor.hpp"

namespace fuxib {

// The temporal bias function families. All take a non-negative elapsed time
// x (already divided by time_scale) and return an attention weight.
enum class BiasKind {
  linear,   // a*x + b
  log,      // a*log(1 + exp(b)*x) + c
  exp,      // a*exp(-exp(b)*x)
  sin,      // c*sin(a*x + b) + d
  pow,      // a*(1 + x)^(-b_eff)
  mixed,    // mean of linear/log/exp/sin/pow with independent parameters
  nn,       // 1->16->16->1 MLP, sin then SiLU activations
  zero,     // constant 0 (removes the temporal map)
  bucket,   // log2 bucket lookup into a learnable table (the indexing baseline)
};

inline const char* bias_kind_name(BiasKind k) {
  switch (k) {
    case BiasKind::linear: return "linear";
    case BiasKind::log: return "log";
    case BiasKind::exp: return "exp";
    case BiasKind::sin: return "sin";
    case BiasKind::pow: return "pow";
    case BiasKind::mixed: return "mixed";
    case BiasKind::nn: return "nn";
    case BiasKind::zero: return "zero";
    case BiasKind::bucket: return "bucket";
  }
  return "?";
}

inline const std::vector<BiasKind>& all_bias_kinds() {
  static const std::vector<BiasKind> kinds = {
      BiasKind::linear, BiasKind::log, BiasKind::exp,   BiasKind::sin, BiasKind::pow,
      BiasKind::mixed,  BiasKind::nn,  BiasKind::zero,  BiasKind::bucket};
  return kinds;
}

inline bool parse_bias_kind(const std::string& s, BiasKind& out) {
  for (BiasKind k : all_bias_kinds()) {
    if (s == bias_kind_name(k)) {
      out = k;
      return true;
    }
  }
  return false;
}

namespace biasdetail {
inline constexpr int kNnHidden = 16;
// [W1(16), b1(16), W2(16x16 row-major), b2(16), W3(16), b3(1)]
inline constexpr int kNnParams = kNnHidden + kNnHidden + kNnHidden * kNnHidden +
                                 kNnHidden + kNnHidden + 1;
}  // namespace biasdetail

inline int bias_param_count(BiasKind k) {
  switch (k) {
    case BiasKind::linear: return 2;
    case BiasKind::log: return 3;
    case BiasKind::exp: return 2;
    case BiasKind::sin: return 4;
    case BiasKind::pow: return 2;
    case BiasKind::mixed: return 2 + 3 + 2 + 4 + 2;
    case BiasKind::nn: return biasdetail::kNnParams;
    case BiasKind::zero: return 0;
    case BiasKind::bucket: return 0;  // the table is a separate parameter
  }
  return 0;
}

namespace biasdetail {

inline double eval_linear(const double* th, double x, double* d) {
  if (d) {
    d[0] = x;
    d[1] = 1.0;
  }
  return th[0] * x + th[1];
}

inline double eval_log(const double* th, double x, double* d) {
  double e = std::exp(th[1]);
  double u = 1.0 + e * x;
  double lu = std::log(u);
  if (d) {
    d[0] = lu;
    d[1] = th[0] * e * x / u;
    d[2] = 1.0;
  }
  return th[0] * lu + th[2];
}

inline double eval_exp(const double* th, double x, double* d) {
  double e = std::exp(th[1]);
  double w = std::exp(-e * x);
  if (d) {
    d[0] = w;
    d[1] = -th[0] * x * e * w;
  }
  return th[0] * w;
}

inline double eval_sin(const double* th, double x, double* d) {
  double arg = th[0] * x + th[1];
  double s = std::sin(arg);
  if (d) {
    double co = std::cos(arg);
    d[0] = th[2] * co * x;
    d[1] = th[2] * co;
    d[2] = s;
    d[3] = 1.0;
  }
  return th[2] * s + th[3];
}

inline double eval_pow(const double* th, double x, bool softplus_exp, double* d) {
  double L = std::log1p(x);
  double b_eff = softplus_exp ? softplus(th[1]) : th[1];
  double w = std::exp(-b_eff * L);
  if (d) {
    d[0] = w;
    double db = -th[0] * w * L;
    d[1] = softplus_exp ? db * sigmoid(th[1]) : db;
  }
  return th[0] * w;
}

inline double eval_nn(const double* th, double x, double* d) {
  const int H = kNnHidden;
  const double* W1 = th;
  const double* b1 = th + H;
  const double* W2 = th + 2 * H;
  const double* b2 = th + 2 * H + H * H;
  const double* W3 = th + 3 * H + H * H;
  const double* b3 = th + 4 * H + H * H;
  double z1[kNnHidden], h1[kNnHidden], z2[kNnHidden], h2[kNnHidden];
  for (int i = 0; i < H; ++i) {
    z1[i] = W1[i] * x + b1[i];
    h1[i] = std::sin(z1[i]);
  }
  for (int i = 0; i < H; ++i) {
    double acc = b2[i];
    const double* w = W2 + i * H;
    for (int j2 = 0; j2 < H; ++j2) acc += w[j2] * h1[j2];
    z2[i] = acc;
    h2[i] = silu(acc);
  }
  double f = b3[0];
  for (int i = 0; i < H; ++i) f += W3[i] * h2[i];
  if (d) {
    double* dW1 = d;
    double* db1 = d + H;
    double* dW2 = d + 2 * H;
    double* db2 = d + 2 * H + H * H;
    double* dW3 = d + 3 * H + H * H;
    double* db3 = d + 4 * H + H * H;
    db3[0] = 1.0;
    double dz2[kNnHidden];
    for (int i = 0; i < H; ++i) {
      dW3[i] = h2[i];
      dz2[i] = W3[i] * silu_grad(z2[i]);
      db2[i] = dz2[i];
    }
    double dh1[kNnHidden] = {0};
    for (int i = 0; i < H; ++i) {
      double* w = dW2 + i * H;
      const double* w2 = W2 + i * H;
      for (int j2 = 0; j2 < H; ++j2) {
        w[j2] = dz2[i] * h1[j2];
        dh1[j2] += dz2[i] * w2[j2];
      }
    }
    for (int i = 0; i < H; ++i) {
      double dz1 = dh1[i] * std::cos(z1[i]);
      db1[i] = dz1;
      dW1[i] = dz1 * x;
    }
  }
  return f;
}

}  // namespace biasdetail

// f(x) and, optionally, df/dtheta for one function kind. x must be >= 0.
// dtheta, when non-null, must have bias_param_count(kind) slots; it is
// overwritten (not accumulated).
inline double bias_eval(BiasKind kind, bool softplus_exp, const double* theta,
                        double x, double* dtheta = nullptr) {
  using namespace biasdetail;
  switch (kind) {
    case BiasKind::linear: return eval_linear(theta, x, dtheta);
    case BiasKind::log: return eval_log(theta, x, dtheta);
    case BiasKind::exp: return eval_exp(theta, x, dtheta);
    case BiasKind::sin: return eval_sin(theta, x, dtheta);
    case BiasKind::pow: return eval_pow(theta, x, softplus_exp, dtheta);
    case BiasKind::mixed: {
      double buf[4];
      double f = 0.0;
      const int offs[5] = {0, 2, 5, 7, 11};
      for (int part = 0; part < 5; ++part) {
        const double* th = theta + offs[part];
        double* db = dtheta ? buf : nullptr;
        double fp = 0.0;
        switch (part) {
          case 0: fp = eval_linear(th, x, db); break;
          case 1: fp = eval_log(th, x, db); break;
          case 2: fp = eval_exp(th, x, db); break;
          case 3: fp = eval_sin(th, x, db); break;
          case 4: fp = eval_pow(th, x, softplus_exp, db); break;
        }
        f += fp;
        if (dtheta) {
          int cnt = (part == 0 || part == 2 || part == 4) ? 2 : (part == 1 ? 3 : 4);
          for (int i = 0; i < cnt; ++i) dtheta[offs[part] + i] = buf[i] / 5.0;
        }
      }
      return f / 5.0;
    }
    case BiasKind::nn: return eval_nn(theta, x, dtheta);
    case BiasKind::zero:
      return 0.0;
    case BiasKind::bucket:
      throw config_error("bucket kind is evaluated through its lookup table");
  }
  throw config_error("unknown bias function kind");
}

// A bias function with its own parameter values: the spec (kind + positivity
// transform) plus the learnable scalars.
struct BiasFunction {
  BiasKind kind = BiasKind::pow;
  bool softplus_exponent = true;  // pow exponent is softplus(theta[1])
  std::vector<double> theta;

  static BiasFunction make(BiasKind k, bool softplus_exp = true) {
    BiasFunction f;
    f.kind = k;
    f.softplus_exponent = softplus_exp;
    f.theta.assign(static_cast<std::size_t>(bias_param_count(k)), 0.0);
    f.init_defaults();
    return f;
  }

  // Defaults give every kind a tame curve at step zero. The pow exponent is
  // initialized so the effective b is 1.
  void init_defaults() {
    auto set_lin = [](double* th) { th[0] = 0.0; th[1] = 1.0; };
    auto set_log = [](double* th) { th[0] = 1.0; th[1] = 0.0; th[2] = 0.0; };
    auto set_exp = [](double* th) { th[0] = 1.0; th[1] = 0.0; };
    auto set_sin = [](double* th) { th[0] = 1.0; th[1] = 0.0; th[2] = 1.0; th[3] = 0.0; };
    double b0 = softplus_exponent ? softplus_inverse(1.0) : 1.0;
    auto set_pow = [b0](double* th) { th[0] = 1.0; th[1] = b0; };
    switch (kind) {
      case BiasKind::linear: set_lin(theta.data()); break;
      case BiasKind::log: set_log(theta.data()); break;
      case BiasKind::exp: set_exp(theta.data()); break;
      case BiasKind::sin: set_sin(theta.data()); break;
      case BiasKind::pow: set_pow(theta.data()); break;
      case BiasKind::mixed:
        set_lin(theta.data());
        set_log(theta.data() + 2);
        set_exp(theta.data() + 5);
        set_sin(theta.data() + 7);
        set_pow(theta.data() + 11);
        break;
      case BiasKind::nn:
      case BiasKind::zero:
      case BiasKind::bucket:
        break;
    }
  }

  // nn weights need randomness; other kinds keep their defaults
  void init_random(Rng& rng) {
    if (kind != BiasKind::nn) return;
    using namespace biasdetail;
    const int H = kNnHidden;
    for (int i = 0; i < H; ++i) theta[static_cast<std::size_t>(i)] = rng.normal(0.0, 0.5);
    for (int i = 0; i < H * H; ++i)
      theta[static_cast<std::size_t>(2 * H + i)] = rng.normal(0.0, 0.2);
    for (int i = 0; i < H; ++i)
      theta[static_cast<std::size_t>(3 * H + H * H + i)] = rng.normal(0.0, 0.2);
  }

  int param_count() const { return bias_param_count(kind); }

  double eval(double x) const {
    return bias_eval(kind, softplus_exponent, theta.data(), x);
  }

  double eval_with_grad(double x, double* dtheta) const {
    return bias_eval(kind, softplus_exponent, theta.data(), x, dtheta);
  }
};

inline double eval_bias_function(const BiasFunction& f, double x) {
  if (x < 0.0) throw config_error("bias function input must be non-negative");
  return f.eval(x);
}

// An n x n causally masked attention-bias matrix. Entries with j > i hold
// mask_value: 0 when the matrix multiplies values directly (AFTM use),
// -1e9 when added to logits ahead of a softmax.
template <class Real>
struct BiasMatrix {
  enum class Kind { positional, temporal };
  int n = 0;
  Kind kind = Kind::temporal;
  Real mask_value = Real(0);
  Mat<Real> values;
};

inline constexpr double kAdditiveMask = -1e9;

// elapsed model time between positions i (query) and j (key), clamped at 0
inline double elapsed_scaled(std::int64_t ti, std::int64_t tj, double time_scale) {
  double dt = static_cast<double>(ti - tj) / time_scale;
  return dt > 0.0 ? dt : 0.0;
}

namespace biasdetail {

// Per-kind evaluators with their constants hoisted out of the n^2 loop.
// Float instantiations run on the fast arithmetic-only approximations, so
// the kept-entry loops vectorize; double keeps libm.
template <class Real>
struct PowEval {
  Real a, b_eff;
  Real operator()(Real x) const {
    return a * BiasMath<Real>::exp2(-b_eff * BiasMath<Real>::log2(Real(1) + x));
  }
};

template <class Real>
struct ExpEval {
  Real a, rate;
  Real operator()(Real x) const { return a * BiasMath<Real>::exp(-rate * x); }
};

template <class Real>
struct LinEval {
  Real a, b;
  Real operator()(Real x) const { return a * x + b; }
};

template <class Real>
struct LogEval {
  Real a, eb, c;
  Real operator()(Real x) const { return a * BiasMath<Real>::log1p(eb * x) + c; }
};

template <class Real>
struct SinEval {
  Real a, b, c, d;
  Real operator()(Real x) const { return c * std::sin(a * x + b) + d; }
};

struct GenericEval {
  const BiasFunction* fn;
  double operator()(double x) const { return fn->eval(x); }
};

// Fills the kept triangle with f(elapsed) and the strict upper triangle with
// mask_value. The double path computes elapsed time exactly per entry; the
// float path pre-scales timestamps once so the inner loop is pure float
// arithmetic.
template <class Real, class Fn>
void fill_elapsed(Mat<Real>& out, const std::vector<std::int64_t>& ts,
                  double time_scale, Real mask_value, Fn f) {
  const int n = static_cast<int>(ts.size());
  if constexpr (std::is_same_v<Real, float>) {
    // difference in integer seconds first: no cancellation against the epoch
    const float inv = static_cast<float>(1.0 / time_scale);
    const std::int64_t* tp = ts.data();
    for (int i = 0; i < n; ++i) {
      float* row = out.row(i);
      const std::int64_t ti = tp[i];
      for (int j = 0; j <= i; ++j) {
        float x = static_cast<float>(ti - tp[j]) * inv;
        x = x > 0.0f ? x : 0.0f;
        row[j] = f(x);
      }
      for (int j = i + 1; j < n; ++j) row[j] = mask_value;
    }
  } else {
    for (int i = 0; i < n; ++i) {
      Real* row = out.row(i);
      const std::int64_t ti = ts[static_cast<std::size_t>(i)];
      for (int j = 0; j <= i; ++j) {
        double x = elapsed_scaled(ti, ts[static_cast<std::size_t>(j)], time_scale);
        row[j] = static_cast<Real>(f(x));
      }
      for (int j = i + 1; j < n; ++j) row[j] = mask_value;
    }
  }
}

}  // namespace biasdetail

// Functional relative attention bias: evaluates f on elapsed time for every
// kept (i, j); arithmetic and special functions only, no table reads.
template <class Real>
void frab_matrix_into(Mat<Real>& out, const std::vector<std::int64_t>& timestamps,
                      const BiasFunction& fn, double time_scale,
                      Real mask_value = Real(0)) {
  using namespace biasdetail;
  if (time_scale <= 0.0) throw config_error("time_scale must be positive");
  if (fn.kind == BiasKind::bucket)
    throw config_error("bucket kind uses bucketed_rab_temporal");
  for (double p : fn.theta)
    if (!std::isfinite(p)) throw numeric_error("non-finite bias function parameter");
  const int n = static_cast<int>(timestamps.size());
  detail::require(out.rows() == n && out.cols() == n, "frab: output shape mismatch");
  const double* th = fn.theta.data();
  switch (fn.kind) {
    case BiasKind::pow: {
      double b_eff = fn.softplus_exponent ? softplus(th[1]) : th[1];
      fill_elapsed(out, timestamps, time_scale, mask_value,
                   PowEval<Real>{static_cast<Real>(th[0]), static_cast<Real>(b_eff)});
      break;
    }
    case BiasKind::exp:
      fill_elapsed(out, timestamps, time_scale, mask_value,
                   ExpEval<Real>{static_cast<Real>(th[0]),
                                 static_cast<Real>(std::exp(th[1]))});
      break;
    case BiasKind::linear:
      fill_elapsed(out, timestamps, time_scale, mask_value,
                   LinEval<Real>{static_cast<Real>(th[0]), static_cast<Real>(th[1])});
      break;
    case BiasKind::log:
      fill_elapsed(out, timestamps, time_scale, mask_value,
                   LogEval<Real>{static_cast<Real>(th[0]),
                                 static_cast<Real>(std::exp(th[1])),
                                 static_cast<Real>(th[2])});
      break;
    case BiasKind::sin:
      fill_elapsed(out, timestamps, time_scale, mask_value,
                   SinEval<Real>{static_cast<Real>(th[0]), static_cast<Real>(th[1]),
                                 static_cast<Real>(th[2]), static_cast<Real>(th[3])});
      break;
    case BiasKind::zero:
      fill_elapsed(out, timestamps, time_scale, mask_value,
                   [](Real) { return Real(0); });
      break;
    default:
      // mixed and nn stay on the generic double evaluator
      fill_elapsed(out, timestamps, time_scale, mask_value, GenericEval{&fn});
      break;
  }
  if (!out.all_finite()) throw numeric_error("non-finite bias matrix entry");
}

template <class Real>
BiasMatrix<Real> frab_matrix(const std::vector<std::int64_t>& timestamps,
                             const BiasFunction& fn, double time_scale,
                             Real mask_value = Real(0)) {
  const int n = static_cast<int>(timestamps.size());
  BiasMatrix<Real> b;
  b.n = n;
  b.kind = BiasMatrix<Real>::Kind::temporal;
  b.mask_value = mask_value;
  b.values = Mat<Real>(n, n);
  frab_matrix_into(b.values, timestamps, fn, time_scale, mask_value);
  return b;
}

// Learnable tables for the bucketed baseline.
template <class Real>
struct BucketTable {
  Mat<Real> beta;     // positional, d_rab x 1
  Mat<Real> beta_t;   // temporal, max_bucket x 1
  double time_scale = 86400.0;
  int max_bucket = 128;
};

// value[i][j] = beta[i - j], clamped at the table end
template <class Real>
BiasMatrix<Real> bucketed_rab_positional(int n, const Mat<Real>& beta,
                                         Real mask_value = Real(0)) {
  const int d_rab = beta.rows();
  if (d_rab < 1) throw config_error("positional table must not be empty");
  BiasMatrix<Real> b;
  b.n = n;
  b.kind = BiasMatrix<Real>::Kind::positional;
  b.mask_value = mask_value;
  b.values = Mat<Real>(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      int idx = i - j;
      if (idx >= d_rab) idx = d_rab - 1;
      b.values(i, j) = beta(idx, 0);
    }
    for (int j = i + 1; j < n; ++j) b.values(i, j) = mask_value;
  }
  return b;
}

inline int time_bucket(std::int64_t ti, std::int64_t tj, double time_scale,
                       int max_bucket) {
  double x = elapsed_scaled(ti, tj, time_scale);
  int idx = static_cast<int>(std::floor(std::log2(1.0 + x)));
  if (idx < 0) idx = 0;
  if (idx >= max_bucket) idx = max_bucket - 1;
  return idx;
}

// The indexing baseline: log2-bucket the elapsed time, then gather from the
// learnable table. Every kept entry is one data-dependent gather (counted).
// The float path gets the same pre-scaled timestamps and fast log as the
// functional path; the gather itself is what cannot be streamed.
template <class Real>
void bucketed_rab_temporal_into(Mat<Real>& out,
                                const std::vector<std::int64_t>& timestamps,
                                const Mat<Real>& beta_t, double time_scale,
                                int max_bucket, Real mask_value = Real(0)) {
  if (time_scale <= 0.0) throw config_error("time_scale must be positive");
  if (beta_t.rows() < max_bucket) throw config_error("temporal table too small");
  const int n = static_cast<int>(timestamps.size());
  detail::require(out.rows() == n && out.cols() == n, "rab_t: output shape mismatch");
  const Real* table = beta_t.data().data();
  if constexpr (std::is_same_v<Real, float>) {
    const float inv = static_cast<float>(1.0 / time_scale);
    const std::int64_t* tp = timestamps.data();
    const int last = max_bucket - 1;
    for (int i = 0; i < n; ++i) {
      float* row = out.row(i);
      const std::int64_t ti = tp[i];
      for (int j = 0; j <= i; ++j) {
        float x = static_cast<float>(ti - tp[j]) * inv;
        x = x > 0.0f ? x : 0.0f;
        // floor(log2(y)) for y >= 1 is exactly the IEEE exponent field
        std::uint32_t bits = std::bit_cast<std::uint32_t>(1.0f + x);
        int idx = static_cast<int>(bits >> 23) - 127;
        idx = idx > last ? last : idx;
        row[j] = table[idx];
      }
      for (int j = i + 1; j < n; ++j) row[j] = mask_value;
    }
  } else {
    for (int i = 0; i < n; ++i) {
      Real* row = out.row(i);
      const std::int64_t ti = timestamps[static_cast<std::size_t>(i)];
      for (int j = 0; j <= i; ++j)
        row[j] = table[time_bucket(ti, timestamps[static_cast<std::size_t>(j)],
                                   time_scale, max_bucket)];
      for (int j = i + 1; j < n; ++j) row[j] = mask_value;
    }
  }
  instrument::add_gathers(static_cast<std::uint64_t>(n) * (n + 1) / 2);
}

template <class Real>
BiasMatrix<Real> bucketed_rab_temporal(const std::vector<std::int64_t>& timestamps,
                                       const Mat<Real>& beta_t, double time_scale,
                                       int max_bucket, Real mask_value = Real(0)) {
  const int n = static_cast<int>(timestamps.size());
  BiasMatrix<Real> b;
  b.n = n;
  b.kind = BiasMatrix<Real>::Kind::temporal;
  b.mask_value = mask_value;
  b.values = Mat<Real>(n, n);
  bucketed_rab_temporal_into(b.values, timestamps, beta_t, time_scale, max_bucket,
                             mask_value);
  return b;
}

// ---- tape nodes ----
// These record the constructions with their parameter gradients. Masked
// entries are exactly 0 so the matrices can act as attention maps directly.

// theta is a p x 1 parameter node; timestamps are constants.
template <class Real>
typename Tape<Real>::Ref tape_frab(Tape<Real>& t, typename Tape<Real>::Ref theta,
                                   std::vector<std::int64_t> timestamps,
                                   BiasKind kind, bool softplus_exp,
                                   double time_scale) {
  const int n = static_cast<int>(timestamps.size());
  const int p = bias_param_count(kind);
  detail::require(t.val(theta).rows() == p && t.val(theta).cols() == 1,
                  "frab: theta shape mismatch");
  BiasFunction fn;
  fn.kind = kind;
  fn.softplus_exponent = softplus_exp;
  fn.theta.resize(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i) fn.theta[static_cast<std::size_t>(i)] =
      static_cast<double>(t.val(theta)(i, 0));
  Mat<Real> v = frab_matrix<Real>(timestamps, fn, time_scale, Real(0)).values;
  const auto out = t.next_ref();
  auto ts = std::move(timestamps);
  return t.push(std::move(v), t.requires_grad(theta),
                [theta, ts, kind, softplus_exp, time_scale, p, n, out](Tape<Real>& tt) {
    if (!tt.requires_grad(theta)) return;
    std::vector<double> th(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) th[static_cast<std::size_t>(i)] =
        static_cast<double>(tt.val(theta)(i, 0));
    std::vector<double> acc(static_cast<std::size_t>(p), 0.0);
    std::vector<double> d(static_cast<std::size_t>(p));
    const auto& g = tt.grad(out);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) {
        double gij = static_cast<double>(g(i, j));
        if (gij == 0.0) continue;
        double x = elapsed_scaled(ts[static_cast<std::size_t>(i)],
                                  ts[static_cast<std::size_t>(j)], time_scale);
        bias_eval(kind, softplus_exp, th.data(), x, d.data());
        for (int q = 0; q < p; ++q) acc[static_cast<std::size_t>(q)] += gij * d[static_cast<std::size_t>(q)];
      }
    auto& gt = tt.grad(theta);
    for (int q = 0; q < p; ++q) gt(q, 0) += static_cast<Real>(acc[static_cast<std::size_t>(q)]);
  }, "frab");
}

template <class Real>
typename Tape<Real>::Ref tape_rab_positional(Tape<Real>& t,
                                             typename Tape<Real>::Ref beta, int n) {
  const auto& vb = t.val(beta);
  detail::require(vb.cols() == 1 && vb.rows() >= 1, "rab: beta must be a column");
  const int d_rab = vb.rows();
  Mat<Real> v(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      int idx = i - j;
      if (idx >= d_rab) idx = d_rab - 1;
      v(i, j) = vb(idx, 0);
    }
  const auto out = t.next_ref();
  return t.push(std::move(v), t.requires_grad(beta), [beta, n, d_rab, out](Tape<Real>& tt) {
    if (!tt.requires_grad(beta)) return;
    auto& gb = tt.grad(beta);
    const auto& g = tt.grad(out);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) {
        int idx = i - j;
        if (idx >= d_rab) idx = d_rab - 1;
        gb(idx, 0) += g(i, j);
      }
  }, "rab_positional");
}

template <class Real>
typename Tape<Real>::Ref tape_rab_bucketed_temporal(
    Tape<Real>& t, typename Tape<Real>::Ref beta_t,
    std::vector<std::int64_t> timestamps, double time_scale, int max_bucket) {
  const auto& vb = t.val(beta_t);
  detail::require(vb.cols() == 1 && vb.rows() >= max_bucket, "rab_t: table too small");
  const int n = static_cast<int>(timestamps.size());
  Mat<Real> v(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j)
      v(i, j) = vb(time_bucket(timestamps[static_cast<std::size_t>(i)],
                               timestamps[static_cast<std::size_t>(j)], time_scale,
                               max_bucket),
                   0);
  instrument::add_gathers(static_cast<std::uint64_t>(n) * (n + 1) / 2);
  const auto out = t.next_ref();
  auto ts = std::move(timestamps);
  return t.push(std::move(v), t.requires_grad(beta_t),
                [beta_t, ts, time_scale, max_bucket, n, out](Tape<Real>& tt) {
    if (!tt.requires_grad(beta_t)) return;
    auto& gb = tt.grad(beta_t);
    const auto& g = tt.grad(out);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j)
        gb(time_bucket(ts[static_cast<std::size_t>(i)], ts[static_cast<std::size_t>(j)],
                       time_scale, max_bucket),
           0) += g(i, j);
  }, "rab_bucketed_temporal");
}

}  // namespace fuxib
