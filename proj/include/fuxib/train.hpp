#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "fuxib/checkpoint.hpp"
#include "fuxib/model.hpp"

namespace fuxib {

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double weight_decay = 0.0;
  double eps = 1e-9;
  double warmup_frac = 0.02;  // linear warmup over this fraction of steps
};

struct TrainConfig {
  int max_epochs = 200;
  int patience = 10;  // epochs without validation NDCG@10 improvement
  int batch_size = 128;
  int workers = 1;
  OptimConfig optim;
};

// Adaptive moments with decoupled weight decay. The zero padding row of the
// item embedding never receives gradient, so its moments stay zero and the
// multiplicative decay keeps it exactly zero.
template <class Real>
class AdamW {
 public:
  AdamW(const ParamStore<Real>& store, OptimConfig cfg, long long total_steps)
      : cfg_(cfg), total_steps_(std::max(1ll, total_steps)) {
    m_.reserve(store.count());
    v_.reserve(store.count());
    for (const auto& e : store.entries()) {
      m_.emplace_back(e.value.rows(), e.value.cols());
      v_.emplace_back(e.value.rows(), e.value.cols());
    }
  }

  long long step_count() const { return step_; }

  double current_lr() const {
    auto warmup = static_cast<long long>(cfg_.warmup_frac * static_cast<double>(total_steps_));
    if (warmup < 1) return cfg_.lr;
    long long s = std::min(step_ + 1, warmup);
    return step_ + 1 <= warmup ? cfg_.lr * static_cast<double>(s) / static_cast<double>(warmup)
                               : cfg_.lr;
  }

  void step(ParamStore<Real>& store) {
    const double lr = current_lr();
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t p = 0; p < store.count(); ++p) {
      auto& e = store.at(static_cast<int>(p));
      if (!e.trainable) continue;
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const double g = static_cast<double>(e.grad.data()[i]);
        double mi = cfg_.beta1 * static_cast<double>(m.data()[i]) + (1.0 - cfg_.beta1) * g;
        double vi = cfg_.beta2 * static_cast<double>(v.data()[i]) + (1.0 - cfg_.beta2) * g * g;
        m.data()[i] = static_cast<Real>(mi);
        v.data()[i] = static_cast<Real>(vi);
        double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
        double value = static_cast<double>(e.value.data()[i]);
        value *= 1.0 - lr * cfg_.weight_decay;
        value -= lr * update;
        e.value.data()[i] = static_cast<Real>(value);
      }
    }
  }

 private:
  OptimConfig cfg_;
  long long total_steps_;
  long long step_ = 0;
  std::vector<Mat<Real>> m_, v_;
};

struct MetricsReport {
  double ndcg10 = 0, ndcg50 = 0;
  double hr10 = 0, hr50 = 0;
  double mrr = 0;
  double hr1 = 0;  // used by the learning-sanity checks
  int epoch = 0;
  double wall_seconds = 0;
  double loss = 0;
};

enum class TiePolicy { optimistic, pessimistic };

// 1 + number of items scored strictly above the target (optimistic ties);
// pessimistic also counts equal scores of other items. The padding column 0
// is excluded from ranking.
inline int rank_of_target(const std::vector<double>& scores, int target,
                          TiePolicy tie = TiePolicy::optimistic) {
  if (target < 1 || target >= static_cast<int>(scores.size()))
    throw config_error("rank_of_target: target index out of range");
  const double st = scores[static_cast<std::size_t>(target)];
  int above = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (static_cast<int>(i) == target) continue;
    if (scores[i] > st) ++above;
    else if (tie == TiePolicy::pessimistic && scores[i] == st) ++above;
  }
  return 1 + above;
}

namespace traindetail {

struct MetricSums {
  double ndcg10 = 0, ndcg50 = 0, hr10 = 0, hr50 = 0, mrr = 0, hr1 = 0;
  long long count = 0;

  void add(int rank) {
    auto ndcg_at = [rank](int k) {
      return rank <= k ? 1.0 / std::log2(1.0 + rank) : 0.0;
    };
    ndcg10 += ndcg_at(10);
    ndcg50 += ndcg_at(50);
    hr10 += rank <= 10 ? 1.0 : 0.0;
    hr50 += rank <= 50 ? 1.0 : 0.0;
    hr1 += rank == 1 ? 1.0 : 0.0;
    mrr += 1.0 / rank;
    ++count;
  }

  void merge(const MetricSums& o) {
    ndcg10 += o.ndcg10;
    ndcg50 += o.ndcg50;
    hr10 += o.hr10;
    hr50 += o.hr50;
    mrr += o.mrr;
    hr1 += o.hr1;
    count += o.count;
  }
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t vals[3] = {seed, a, b};
  return fnv1a64(vals, sizeof(vals));
}

// contiguous shards, merged in shard order: results do not depend on thread
// scheduling
template <class Fn>
void sharded_for(std::size_t count, int workers, Fn&& body) {
  if (workers <= 1 || count <= 1) {
    body(0, std::size_t(0), count);
    return;
  }
  int w = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
  std::vector<std::thread> threads;
  std::size_t chunk = (count + w - 1) / w;
  for (int i = 0; i < w; ++i) {
    std::size_t lo = static_cast<std::size_t>(i) * chunk;
    std::size_t hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    threads.emplace_back([i, lo, hi, &body] { body(i, lo, hi); });
  }
  for (auto& th : threads) th.join();
}

}  // namespace traindetail

// Full ranking over all items at the last non-padded position; never
// mutates the model.
template <class Real>
MetricsReport evaluate(Model<Real>& model, const std::vector<InteractionSequence>& split,
                       int workers = 1, TiePolicy tie = TiePolicy::optimistic) {
  using namespace traindetail;
  auto t0 = std::chrono::steady_clock::now();
  int w = std::max(1, workers);
  std::vector<MetricSums> partial(static_cast<std::size_t>(w));
  sharded_for(split.size(), w, [&](int worker, std::size_t lo, std::size_t hi) {
    auto& sums = partial[static_cast<std::size_t>(worker)];
    for (std::size_t i = lo; i < hi; ++i) {
      auto scores = model.score_last(split[i]);
      sums.add(rank_of_target(scores, split[i].target, tie));
    }
  });
  MetricSums total;
  for (const auto& p : partial) total.merge(p);
  MetricsReport r;
  if (total.count > 0) {
    r.ndcg10 = total.ndcg10 / total.count;
    r.ndcg50 = total.ndcg50 / total.count;
    r.hr10 = total.hr10 / total.count;
    r.hr50 = total.hr50 / total.count;
    r.mrr = total.mrr / total.count;
    r.hr1 = total.hr1 / total.count;
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// One pass over shuffled training users with per-position sampled softmax.
// Deterministic for a fixed seed and worker count: the shuffle depends on
// (seed, epoch), per-user negatives on (seed, epoch, dataset index), and
// gradients merge in shard order.
template <class Real>
double train_epoch(Model<Real>& model, const std::vector<InteractionSequence>& train,
                   AdamW<Real>& opt, int epoch, std::uint64_t seed,
                   int batch_size, int workers = 1) {
  using namespace traindetail;
  if (train.empty()) throw config_error("train_epoch: empty training split");
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(mix_seed(seed, 0x5aff1e11ull, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = order.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }

  const int w = std::max(1, workers);
  double loss_sum = 0.0;
  long long loss_count = 0;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    const auto batch_n = end - start;
    model.params.zero_grads();
    std::vector<std::vector<Mat<Real>>> bufs(
        static_cast<std::size_t>(w), std::vector<Mat<Real>>(model.params.count()));
    std::vector<double> batch_loss(static_cast<std::size_t>(w), 0.0);
    sharded_for(batch_n, w, [&](int worker, std::size_t lo, std::size_t hi) {
      for (std::size_t k = lo; k < hi; ++k) {
        const auto idx = order[start + k];
        const auto& seq = train[idx];
        Rng neg_rng(mix_seed(seed, static_cast<std::uint64_t>(epoch) + 0x9e3779b9ull,
                             static_cast<std::uint64_t>(idx)));
        auto cand = model.draw_candidates(seq, neg_rng);
        Tape<Real> tape;
        auto loss = model.loss_on(tape, seq, cand);
        double lv = static_cast<double>(tape.val(loss)(0, 0));
        if (!std::isfinite(lv))
          throw numeric_error("NaN loss at epoch " + std::to_string(epoch) +
                              ", user " + std::to_string(seq.user_id));
        batch_loss[static_cast<std::size_t>(worker)] += lv;
        tape.backward(loss);
        tape.accumulate_param_grads_into(bufs[static_cast<std::size_t>(worker)]);
      }
    });
    // merge worker buffers in shard order, then average over the batch
    for (int worker = 0; worker < w; ++worker) {
      for (std::size_t p = 0; p < model.params.count(); ++p) {
        auto& src = bufs[static_cast<std::size_t>(worker)][p];
        if (src.empty()) continue;
        add_inplace(model.params.at(static_cast<int>(p)).grad, src);
      }
      loss_sum += batch_loss[static_cast<std::size_t>(worker)];
    }
    const Real inv_batch = Real(1) / static_cast<Real>(batch_n);
    for (std::size_t p = 0; p < model.params.count(); ++p)
      for (auto& g : model.params.at(static_cast<int>(p)).grad.data()) g *= inv_batch;
    loss_count += static_cast<long long>(batch_n);
    opt.step(model.params);
  }
  return loss_sum / static_cast<double>(loss_count);
}

struct EpochRecord {
  int epoch = 0;
  double loss = 0;
  MetricsReport val;
  double wall_seconds = 0;
};

struct FitResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  MetricsReport best_val;
  MetricsReport test;
  std::string best_checkpoint;
  bool early_stopped = false;
};

// Epoch loop with early stopping on validation NDCG@10. When run_dir is
// non-empty, an improved epoch saves {run_dir}/epoch{k}.fxb and the best
// checkpoint is restored before the final test evaluation.
template <class Real>
FitResult fit(Model<Real>& model, const SplitDataset& data, const TrainConfig& tc,
              const std::string& run_dir = "",
              const std::function<void(const EpochRecord&)>& on_epoch = nullptr) {
  if (data.train.empty()) throw config_error("fit: empty training split");
  const auto steps_per_epoch = static_cast<long long>(
      (data.train.size() + static_cast<std::size_t>(tc.batch_size) - 1) /
      static_cast<std::size_t>(tc.batch_size));
  AdamW<Real> opt(model.params, tc.optim, steps_per_epoch * tc.max_epochs);
  FitResult res;
  double best_metric = -1.0;
  int since_best = 0;
  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double loss = train_epoch(model, data.train, opt, epoch, model.cfg.seed,
                              tc.batch_size, tc.workers);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss;
    rec.val = evaluate(model, data.validation, tc.workers);
    rec.val.epoch = epoch;
    rec.val.loss = loss;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val.ndcg10 > best_metric) {
      best_metric = rec.val.ndcg10;
      res.best_epoch = epoch;
      res.best_val = rec.val;
      since_best = 0;
      if (!run_dir.empty()) {
        res.best_checkpoint = run_dir + "/epoch" + std::to_string(epoch) + ".fxb";
        save_checkpoint(res.best_checkpoint, model.params);
      }
    } else if (++since_best >= tc.patience) {
      res.early_stopped = true;
      break;
    }
  }
  if (!res.best_checkpoint.empty()) load_checkpoint(res.best_checkpoint, model.params);
  res.test = evaluate(model, data.test, tc.workers);
  return res;
}

}  // namespace fuxib
