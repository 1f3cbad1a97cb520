#pragma once

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fuxib/model.hpp"

namespace fuxib {

template <class T>
inline void do_not_optimize(const T& value) {
  asm volatile("" : : "g"(&value) : "memory");
}

struct BenchRecord {
  std::string kernel;
  int n = 0;
  int d = 0;
  int repetitions = 0;
  double median_ns = 0, p10_ns = 0, p90_ns = 0;
  std::uint64_t flops = 0;    // counted multiplies, forward pass
  std::uint64_t gathers = 0;  // data-dependent table reads per invocation
};

namespace benchdetail {

inline double now_ns() {
  return std::chrono::duration<double, std::nano>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// smallest observable nonzero clock step
inline double tick_ns() {
  double best = 1e9;
  for (int i = 0; i < 256; ++i) {
    double t0 = now_ns();
    double t1 = now_ns();
    int guard = 0;
    while (t1 <= t0 && ++guard < 1000) t1 = now_ns();
    if (t1 > t0) best = std::min(best, t1 - t0);
  }
  return best;
}

inline double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  auto idx = static_cast<std::size_t>(p * static_cast<double>(v.size() - 1));
  return v[idx];
}

}  // namespace benchdetail

// Times fn with warmup and repetition floors. When one invocation is shorter
// than 100 clock ticks, invocations are batched and the per-invocation time
// is the batch average.
template <class Fn>
std::vector<double> time_kernel(Fn&& fn, int repetitions = 30, int warmup = 5) {
  using namespace benchdetail;
  repetitions = std::max(repetitions, 30);
  warmup = std::max(warmup, 5);
  const double tick = tick_ns();
  int inner = 1;
  for (;;) {
    double t0 = now_ns();
    for (int i = 0; i < inner; ++i) fn();
    double elapsed = now_ns() - t0;
    if (elapsed >= 100.0 * tick || inner >= (1 << 20)) break;
    inner *= 2;
  }
  for (int i = 0; i < warmup; ++i)
    for (int k = 0; k < inner; ++k) fn();
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(repetitions));
  for (int i = 0; i < repetitions; ++i) {
    double t0 = now_ns();
    for (int k = 0; k < inner; ++k) fn();
    samples.push_back((now_ns() - t0) / inner);
  }
  return samples;
}

template <class Fn>
BenchRecord bench_kernel(const std::string& name, int n, int d, Fn&& fn,
                         int repetitions = 30, int warmup = 5) {
  instrument::reset();
  fn();
  auto counters = instrument::snapshot();
  auto samples = time_kernel(fn, repetitions, warmup);
  BenchRecord r;
  r.kernel = name;
  r.n = n;
  r.d = d;
  r.repetitions = static_cast<int>(samples.size());
  r.median_ns = benchdetail::percentile(samples, 0.5);
  r.p10_ns = benchdetail::percentile(samples, 0.1);
  r.p90_ns = benchdetail::percentile(samples, 0.9);
  r.flops = counters.total_mults();
  r.gathers = counters.gathers;
  return r;
}

// strictly increasing timestamps with random day-scale gaps
inline std::vector<std::int64_t> bench_timestamps(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::int64_t> ts(static_cast<std::size_t>(n));
  std::int64_t t = 0;
  for (int i = 0; i < n; ++i) {
    t += rng.uniform_int(1, 3 * 86400);
    ts[static_cast<std::size_t>(i)] = t;
  }
  return ts;
}

// Construction cost of the functional vs. bucketed temporal bias on
// identical inputs. The functional path performs zero data-dependent
// gathers; the bucketed path performs n(n+1)/2 of them.
template <class Real = float>
std::vector<BenchRecord> bench_bias_construction(const std::vector<int>& n_sweep,
                                                 int repetitions = 30) {
  std::vector<BenchRecord> out;
  for (int n : n_sweep) {
    auto ts = bench_timestamps(n, 42);
    BiasFunction fn = BiasFunction::make(BiasKind::pow);
    Mat<Real> beta_t(128, 1);
    {
      Rng rng(7);
      for (int i = 0; i < 128; ++i) beta_t(i, 0) = static_cast<Real>(rng.normal(0, 0.1));
    }
    Mat<Real> scratch(n, n);
    out.push_back(bench_kernel("frab_pow", n, 0, [&] {
      frab_matrix_into<Real>(scratch, ts, fn, 86400.0);
      do_not_optimize(scratch.data()[0]);
    }, repetitions));
    out.push_back(bench_kernel("bucketed_temporal", n, 0, [&] {
      bucketed_rab_temporal_into<Real>(scratch, ts, beta_t, 86400.0, 128);
      do_not_optimize(scratch.data()[0]);
    }, repetitions));
  }
  return out;
}

// Forward+backward wall time for one block in each mode, identical inputs.
template <class Real = float>
std::vector<BenchRecord> bench_block(const std::vector<int>& n_sweep,
                                     const std::vector<int>& d_sweep,
                                     int repetitions = 30, int heads = 1,
                                     int d_ffn_mult = 1) {
  std::vector<BenchRecord> out;
  for (int n : n_sweep) {
    for (int d : d_sweep) {
      auto ts = bench_timestamps(n, 42);
      Rng rng(11);
      auto X = Mat<Real>::random_normal(n, d, rng, 0.5);
      for (MixerMode mode : {MixerMode::aftm, MixerMode::qk_baseline}) {
        ModelConfig cfg;
        cfg.item_count = 1;
        cfg.max_len = n;
        cfg.d = d;
        cfg.d_ffn = d * d_ffn_mult;
        cfg.blocks = 1;
        cfg.negatives = 1;
        cfg.mixer.mode = mode;
        cfg.mixer.use_qk_map = (mode == MixerMode::qk_baseline);
        cfg.mixer.heads = heads;
        cfg.bias.kind = BiasKind::pow;
        Model<Real> m(cfg);
        const char* name = mode == MixerMode::aftm ? "fuxi_beta" : "fuxi_alpha_style";
        auto rec = bench_kernel(name, n, d, [&] {
          Tape<Real> t;
          auto x = t.leaf(X);
          auto y = m.block_on(t, x, ts, 0);
          auto root = t.sum_all(y);
          t.backward(root);
          do_not_optimize(t.grad(x).data()[0]);
        }, repetitions);
        // report forward-only counted work for comparison with closed forms
        instrument::reset();
        {
          Tape<Real> t;
          auto x = t.leaf(X);
          m.block_on(t, x, ts, 0);
        }
        auto counters = instrument::snapshot();
        rec.flops = counters.total_mults();
        rec.gathers = counters.gathers;
        out.push_back(rec);
      }
    }
  }
  return out;
}

inline std::string machine_fingerprint() {
  std::string cpu = "unknown-cpu";
  std::ifstream info("/proc/cpuinfo");
  std::string line;
  while (std::getline(info, line)) {
    if (line.rfind("model name", 0) == 0) {
      auto pos = line.find(':');
      if (pos != std::string::npos) cpu = line.substr(pos + 2);
      break;
    }
  }
  std::ostringstream os;
  os << cpu << " | threads=" << std::thread::hardware_concurrency()
     << " | compiler=" << __VERSION__;
  return os.str();
}

inline std::string bench_csv(const std::vector<BenchRecord>& records) {
  std::ostringstream os;
  os << "kernel,n,d,median_ns,p10_ns,p90_ns,flops,gathers\n";
  for (const auto& r : records) {
    os << r.kernel << ',' << r.n << ',' << r.d << ',' << static_cast<long long>(r.median_ns)
       << ',' << static_cast<long long>(r.p10_ns) << ',' << static_cast<long long>(r.p90_ns)
       << ',' << r.flops << ',' << r.gathers << '\n';
  }
  return os.str();
}

inline std::string bench_markdown(const std::vector<BenchRecord>& records) {
  std::ostringstream os;
  os << "# microbenchmark summary\n\n";
  os << "machine: " << machine_fingerprint() << "\n\n";
  os << "| kernel | n | d | median (us) | p10 (us) | p90 (us) | flops | gathers |\n";
  os << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : records) {
    os << "| " << r.kernel << " | " << r.n << " | " << r.d << " | "
       << r.median_ns / 1000.0 << " | " << r.p10_ns / 1000.0 << " | "
       << r.p90_ns / 1000.0 << " | " << r.flops << " | " << r.gathers << " |\n";
  }
  return os.str();
}

}  // namespace fuxib
