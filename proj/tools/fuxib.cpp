// Command-line front end: data preparation, training, evaluation, ablation
// sweeps, microbenchmarks, and bias-curve export.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fuxib/bench.hpp"
#include "fuxib/checkpoint.hpp"
#include "fuxib/model.hpp"
#include "fuxib/synth.hpp"
#include "fuxib/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fuxib;

namespace {

std::string iso_now() {
  auto t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

std::string output_root() {
  const char* env = std::getenv("FUXIB_OUTPUT_ROOT");
  return env && *env ? env : ".";
}

// best-effort source revision from .git, no subprocess
std::string source_revision() {
  std::ifstream head(".git/HEAD");
  if (!head) return "unknown";
  std::string line;
  std::getline(head, line);
  if (line.rfind("ref: ", 0) == 0) {
    std::ifstream ref(".git/" + line.substr(5));
    if (!ref) return "unknown";
    std::string sha;
    std::getline(ref, sha);
    return sha.empty() ? "unknown" : sha;
  }
  return line.empty() ? "unknown" : line;
}

void write_text_atomic(const std::string& path, const std::string& text) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw parse_error("cannot write file: " + path);
    out << text;
  }
  fs::rename(tmp, path);
}

// Run manifest: written at start, finalized at exit, lists every artifact.
class Manifest {
 public:
  Manifest(std::string path, std::string command, json config)
      : path_(std::move(path)) {
    doc_["command"] = std::move(command);
    doc_["config"] = std::move(config);
    doc_["source_revision"] = source_revision();
    doc_["started_at"] = iso_now();
    doc_["status"] = "running";
    doc_["outputs"] = json::array();
    flush();
  }

  void set(const std::string& key, const json& v) { doc_[key] = v; }

  void add_output(const std::string& p) {
    doc_["outputs"].push_back(p);
    flush();
  }

  void finish(const std::string& status) {
    doc_["status"] = status;
    doc_["finished_at"] = iso_now();
    flush();
  }

 private:
  void flush() { write_text_atomic(path_, doc_.dump(2) + "\n"); }

  std::string path_;
  json doc_;
};

// ---- config ----

json mixer_to_json(const MixerConfig& m) {
  return {{"mode", mixer_mode_name(m.mode)},
          {"heads", m.heads},
          {"use_qk_map", m.use_qk_map},
          {"use_positional_map", m.use_positional_map},
          {"use_temporal_map", m.use_temporal_map}};
}

json model_to_json(const ModelConfig& c) {
  return {{"item_count", c.item_count},
          {"max_len", c.max_len},
          {"d", c.d},
          {"d_ffn", c.d_ffn},
          {"blocks", c.blocks},
          {"negatives", c.negatives},
          {"seed", c.seed},
          {"mixer", mixer_to_json(c.mixer)},
          {"bias",
           {{"kind", bias_kind_name(c.bias.kind)},
            {"softplus_exponent", c.bias.softplus_exponent},
            {"time_scale", c.bias.time_scale},
            {"max_bucket", c.bias.max_bucket},
            {"scale_by_inv_n", c.bias.scale_by_inv_n}}}};
}

json train_to_json(const TrainConfig& t) {
  return {{"max_epochs", t.max_epochs},
          {"patience", t.patience},
          {"batch_size", t.batch_size},
          {"workers", t.workers},
          {"optim",
           {{"lr", t.optim.lr},
            {"beta1", t.optim.beta1},
            {"beta2", t.optim.beta2},
            {"weight_decay", t.optim.weight_decay},
            {"eps", t.optim.eps},
            {"warmup_frac", t.optim.warmup_frac}}}};
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void mixer_from_json(const json& j, MixerConfig& m) {
  std::string mode = mixer_mode_name(m.mode);
  maybe(j, "mode", mode);
  if (mode == "aftm") {
    m.mode = MixerMode::aftm;
    m.use_qk_map = false;
  } else if (mode == "qk_baseline") {
    m.mode = MixerMode::qk_baseline;
    m.use_qk_map = true;
  } else {
    throw config_error("unknown mixer mode: " + mode + " (valid: aftm, qk_baseline)");
  }
  maybe(j, "heads", m.heads);
  maybe(j, "use_qk_map", m.use_qk_map);
  maybe(j, "use_positional_map", m.use_positional_map);
  maybe(j, "use_temporal_map", m.use_temporal_map);
}

void model_from_json(const json& j, ModelConfig& c) {
  maybe(j, "item_count", c.item_count);
  maybe(j, "max_len", c.max_len);
  maybe(j, "d", c.d);
  c.d_ffn = c.d;  // default; explicit value below wins
  maybe(j, "d_ffn", c.d_ffn);
  maybe(j, "blocks", c.blocks);
  maybe(j, "negatives", c.negatives);
  maybe(j, "seed", c.seed);
  if (j.contains("mixer")) mixer_from_json(j.at("mixer"), c.mixer);
  if (j.contains("bias")) {
    const auto& b = j.at("bias");
    if (b.contains("kind")) {
      std::string k = b.at("kind").get<std::string>();
      if (!parse_bias_kind(k, c.bias.kind)) {
        std::string valid;
        for (auto kk : all_bias_kinds()) valid += std::string(bias_kind_name(kk)) + " ";
        throw config_error("unknown bias kind: " + k + " (valid: " + valid + ")");
      }
    }
    maybe(b, "softplus_exponent", c.bias.softplus_exponent);
    maybe(b, "time_scale", c.bias.time_scale);
    maybe(b, "max_bucket", c.bias.max_bucket);
    maybe(b, "scale_by_inv_n", c.bias.scale_by_inv_n);
  }
}

void train_from_json(const json& j, TrainConfig& t) {
  maybe(j, "max_epochs", t.max_epochs);
  maybe(j, "patience", t.patience);
  maybe(j, "batch_size", t.batch_size);
  maybe(j, "workers", t.workers);
  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    maybe(o, "lr", t.optim.lr);
    maybe(o, "beta1", t.optim.beta1);
    maybe(o, "beta2", t.optim.beta2);
    maybe(o, "weight_decay", t.optim.weight_decay);
    maybe(o, "eps", t.optim.eps);
    maybe(o, "warmup_frac", t.optim.warmup_frac);
  }
}

struct FullConfig {
  ModelConfig model;
  TrainConfig train;
};

FullConfig load_config(const std::string& path) {
  FullConfig fc;
  if (path.empty()) return fc;
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw config_error("invalid config JSON: " + std::string(e.what()));
  }
  if (j.contains("model")) model_from_json(j.at("model"), fc.model);
  if (j.contains("train")) train_from_json(j.at("train"), fc.train);
  return fc;
}

json full_to_json(const FullConfig& fc) {
  return {{"model", model_to_json(fc.model)}, {"train", train_to_json(fc.train)}};
}

// common CLI overrides for train-like commands
struct Overrides {
  int epochs = -1, batch_size = -1, workers = -1, d = -1, blocks = -1,
      negatives = -1, max_len = -1, patience = -1, heads = -1;
  double lr = -1;
  std::int64_t seed = -1;
  std::string bias_kind, mixer_mode;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "override max epochs");
    cmd->add_option("--batch-size", batch_size, "override batch size");
    cmd->add_option("--workers", workers, "override worker count");
    cmd->add_option("--lr", lr, "override learning rate");
    cmd->add_option("--seed", seed, "override seed");
    cmd->add_option("--d", d, "override embedding dim");
    cmd->add_option("--blocks", blocks, "override block count");
    cmd->add_option("--negatives", negatives, "override negative sample count");
    cmd->add_option("--max-len", max_len, "override max sequence length");
    cmd->add_option("--patience", patience, "override early-stopping patience");
    cmd->add_option("--heads", heads, "override attention head count");
    cmd->add_option("--bias-kind", bias_kind, "override bias function kind");
    cmd->add_option("--mixer-mode", mixer_mode, "override mixer mode (aftm, qk_baseline)");
  }

  void apply(FullConfig& fc) const {
    if (epochs >= 0) fc.train.max_epochs = epochs;
    if (batch_size >= 0) fc.train.batch_size = batch_size;
    if (workers >= 0) fc.train.workers = workers;
    if (patience >= 0) fc.train.patience = patience;
    if (lr >= 0) fc.train.optim.lr = lr;
    if (seed >= 0) fc.model.seed = static_cast<std::uint64_t>(seed);
    if (d >= 0) {
      if (fc.model.d_ffn == fc.model.d) fc.model.d_ffn = d;
      fc.model.d = d;
    }
    if (blocks >= 0) fc.model.blocks = blocks;
    if (negatives >= 0) fc.model.negatives = negatives;
    if (max_len >= 0) fc.model.max_len = max_len;
    if (heads >= 0) fc.model.mixer.heads = heads;
    if (!mixer_mode.empty()) mixer_from_json({{"mode", mixer_mode}}, fc.model.mixer);
    if (!bias_kind.empty()) {
      if (!parse_bias_kind(bias_kind, fc.model.bias.kind)) {
        std::string valid;
        for (auto kk : all_bias_kinds()) valid += std::string(bias_kind_name(kk)) + " ";
        throw config_error("unknown bias kind: " + bias_kind + " (valid: " + valid + ")");
      }
    }
  }
};

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    out.push_back(std::stoi(s.substr(pos, next - pos)));
    pos = next + 1;
  }
  if (out.empty()) throw config_error("empty list");
  return out;
}

std::vector<std::string> parse_str_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    out.push_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
  return out;
}

json metrics_to_json(const MetricsReport& m) {
  return {{"ndcg10", m.ndcg10}, {"ndcg50", m.ndcg50}, {"hr10", m.hr10},
          {"hr50", m.hr50},     {"mrr", m.mrr},       {"hr1", m.hr1},
          {"epoch", m.epoch},   {"loss", m.loss},     {"wall_seconds", m.wall_seconds}};
}

// ---- subcommand payloads ----

struct PrepareArgs {
  std::string input, output, format = "auto";
  int min_interactions = 5;
  int max_len = 200;
  bool synthetic = false;
  int synth_users = 500, synth_items = 50, synth_min_len = 10, synth_max_len = 40;
  std::int64_t seed = 42;
};

int cmd_prepare(const PrepareArgs& a) {
  std::string out_path = a.output.empty() ? output_root() + "/data.fxs" : a.output;
  Dataset ds;
  std::string source;
  if (a.synthetic) {
    ds = make_cyclic_dataset(a.synth_users, a.synth_items, a.synth_min_len,
                             a.synth_max_len, a.max_len,
                             static_cast<std::uint64_t>(a.seed));
    source = "synthetic-cyclic";
  } else {
    if (a.input.empty()) throw config_error("prepare needs --input or --synthetic");
    SourceFormat fmt = SourceFormat::auto_detect;
    if (a.format == "dat") fmt = SourceFormat::dat;
    else if (a.format == "csv") fmt = SourceFormat::csv;
    else if (a.format != "auto") throw config_error("unknown format: " + a.format);
    ds = parse_movielens(a.input, a.min_interactions, fmt);
    ds.max_len = a.max_len;
    source = a.input;
  }
  // materialize once so malformed inputs fail before any file is written
  auto split = build_sequences(ds, a.max_len);

  json cfg{{"input", source},
           {"min_interactions", a.min_interactions},
           {"max_len", a.max_len},
           {"synthetic", a.synthetic}};
  Manifest manifest(out_path + ".manifest.json", "prepare", cfg);
  write_dataset_file(out_path, ds);
  manifest.add_output(out_path);

  std::string hash = dataset_hash(ds);
  double avg_len = ds.users.empty()
                       ? 0.0
                       : static_cast<double>(ds.interaction_count()) /
                             static_cast<double>(ds.users.size());
  json sidecar{{"users", ds.users.size()},
               {"items", ds.item_count},
               {"interactions", ds.interaction_count()},
               {"avg_interactions_per_user", avg_len},
               {"max_len", a.max_len},
               {"min_interactions", a.min_interactions},
               {"dataset_hash", hash},
               {"config_hash", hex64(fnv1a64(cfg.dump().data(), cfg.dump().size()))},
               {"source", source}};
  write_text_atomic(out_path + ".json", sidecar.dump(2) + "\n");
  manifest.add_output(out_path + ".json");
  manifest.set("dataset_hash", hash);
  manifest.finish("ok");
  std::cout << "wrote " << out_path << " (users=" << ds.users.size()
            << " items=" << ds.item_count << " interactions=" << ds.interaction_count()
            << " hash=" << hash << ")\n";
  std::cout << "train/validation/test sequences: " << split.train.size() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, data, run_dir;
  bool dry_run = false;
  Overrides ov;
};

std::string csv_header() {
  return "split,epoch,loss,ndcg10,ndcg50,hr10,hr50,mrr,wall_seconds\n";
}

std::string csv_row(const std::string& split, const MetricsReport& m) {
  std::ostringstream os;
  os << split << ',' << m.epoch << ',' << m.loss << ',' << m.ndcg10 << ',' << m.ndcg50
     << ',' << m.hr10 << ',' << m.hr50 << ',' << m.mrr << ',' << m.wall_seconds << '\n';
  return os.str();
}

int cmd_train(const TrainArgs& a) {
  FullConfig fc = load_config(a.config);
  a.ov.apply(fc);
  if (a.data.empty() && !a.dry_run) throw config_error("train needs --data");
  Dataset ds;
  if (!a.data.empty()) {
    ds = read_dataset_file(a.data);
    fc.model.item_count = ds.item_count;
    if (fc.model.max_len <= 0) fc.model.max_len = ds.max_len;
  }
  if (a.dry_run) {
    if (fc.model.item_count < 1) fc.model.item_count = 1;
    Model<double> audit(fc.model);
    std::cout << audit.describe();
    return 0;
  }
  auto split = build_sequences(ds, fc.model.max_len);
  Model<double> model(fc.model);
  std::string run_dir = a.run_dir.empty() ? output_root() + "/run" : a.run_dir;
  fs::create_directories(run_dir);
  Manifest manifest(run_dir + "/manifest.json", "train", full_to_json(fc));
  manifest.set("dataset_hash", dataset_hash(ds));
  manifest.set("data_path", a.data);

  std::ofstream jsonl(run_dir + "/metrics.jsonl", std::ios::trunc);
  manifest.add_output(run_dir + "/metrics.jsonl");
  auto on_epoch = [&](const EpochRecord& rec) {
    json j = metrics_to_json(rec.val);
    j["epoch"] = rec.epoch;
    j["loss"] = rec.loss;
    j["wall_seconds"] = rec.wall_seconds;
    j["split"] = "validation";
    jsonl << j.dump() << "\n";
    jsonl.flush();
    std::cout << "epoch " << rec.epoch << "  loss " << rec.loss << "  val ndcg@10 "
              << rec.val.ndcg10 << "  hr@10 " << rec.val.hr10 << "  ("
              << rec.wall_seconds << "s)\n";
  };
  auto res = fit(model, split, fc.train, run_dir, on_epoch);

  std::string csv = csv_header();
  for (const auto& rec : res.history) {
    MetricsReport row = rec.val;
    row.epoch = rec.epoch;
    row.loss = rec.loss;
    row.wall_seconds = rec.wall_seconds;
    csv += csv_row("validation", row);
  }
  csv += csv_row("test", res.test);
  write_text_atomic(run_dir + "/summary.csv", csv);
  manifest.add_output(run_dir + "/summary.csv");
  if (!res.best_checkpoint.empty()) manifest.add_output(res.best_checkpoint);
  manifest.set("best_epoch", res.best_epoch);
  manifest.set("test_metrics", metrics_to_json(res.test));
  manifest.finish("ok");
  std::cout << "best epoch " << res.best_epoch << "  test ndcg@10 " << res.test.ndcg10
            << "  hr@10 " << res.test.hr10 << "  mrr " << res.test.mrr << "\n";
  return 0;
}

struct EvalArgs {
  std::string config, data, checkpoint, split = "test";
  Overrides ov;
};

int cmd_eval(const EvalArgs& a) {
  FullConfig fc = load_config(a.config);
  a.ov.apply(fc);
  if (a.data.empty()) throw config_error("eval needs --data");
  Dataset ds = read_dataset_file(a.data);
  fc.model.item_count = ds.item_count;
  if (fc.model.max_len <= 0) fc.model.max_len = ds.max_len;
  auto split = build_sequences(ds, fc.model.max_len);
  Model<double> model(fc.model);
  if (!a.checkpoint.empty()) load_checkpoint(a.checkpoint, model.params);
  const auto& seqs = a.split == "validation" ? split.validation
                    : a.split == "test"      ? split.test
                                             : throw config_error("split must be validation or test");
  auto m = evaluate(model, seqs, fc.train.workers);
  std::cout << metrics_to_json(m).dump(2) << "\n";
  return 0;
}

struct BenchArgs {
  std::string kind = "all", out_dir, sweep_n = "128,512,2048", sweep_d = "64";
  std::string precision = "f32";
  int reps = 30, heads = 1, ffn_mult = 1;
};

int cmd_bench(const BenchArgs& a) {
  if (a.kind != "bias" && a.kind != "block" && a.kind != "all")
    throw config_error("bench kind must be bias, block, or all");
  if (a.precision != "f32" && a.precision != "f64")
    throw config_error("precision must be f32 or f64");
  auto ns = parse_int_list(a.sweep_n);
  auto dsw = parse_int_list(a.sweep_d);
  std::string out_dir = a.out_dir.empty() ? output_root() + "/bench" : a.out_dir;
  fs::create_directories(out_dir);
  json cfg{{"kind", a.kind}, {"sweep_n", a.sweep_n}, {"sweep_d", a.sweep_d},
           {"reps", a.reps}, {"precision", a.precision}, {"heads", a.heads}};
  Manifest manifest(out_dir + "/manifest.json", "bench", cfg);
  manifest.set("machine", machine_fingerprint());

  std::vector<BenchRecord> records;
  auto run = [&](auto real_tag) {
    using Real = decltype(real_tag);
    if (a.kind != "block") {
      auto r = bench_bias_construction<Real>(ns, a.reps);
      records.insert(records.end(), r.begin(), r.end());
    }
    if (a.kind != "bias") {
      auto r = bench_block<Real>(ns, dsw, a.reps, a.heads, a.ffn_mult);
      records.insert(records.end(), r.begin(), r.end());
    }
  };
  if (a.precision == "f32") run(float{});
  else run(double{});

  write_text_atomic(out_dir + "/bench.csv", bench_csv(records));
  manifest.add_output(out_dir + "/bench.csv");
  write_text_atomic(out_dir + "/bench.md", bench_markdown(records));
  manifest.add_output(out_dir + "/bench.md");
  manifest.finish("ok");
  std::cout << bench_markdown(records);
  return 0;
}

struct AblateArgs {
  std::string config, data, out_dir, functions = "pow", rows = "full";
  Overrides ov;
};

// Table-style sweeps: bias-function kinds x attention-map rows, shared seed.
int cmd_ablate(const AblateArgs& a) {
  FullConfig base = load_config(a.config);
  a.ov.apply(base);
  if (a.data.empty()) throw config_error("ablate needs --data");
  Dataset ds = read_dataset_file(a.data);
  auto kinds = parse_str_list(a.functions);
  auto rows = parse_str_list(a.rows);
  if (kinds.empty() || rows.empty()) throw config_error("empty ablation matrix");
  std::string out_dir = a.out_dir.empty() ? output_root() + "/ablate" : a.out_dir;
  fs::create_directories(out_dir);
  json cfg = full_to_json(base);
  cfg["functions"] = a.functions;
  cfg["rows"] = a.rows;
  Manifest manifest(out_dir + "/manifest.json", "ablate", cfg);
  manifest.set("dataset_hash", dataset_hash(ds));

  std::string csv =
      "function,row,epochs,loss,ndcg10,ndcg50,hr10,hr50,mrr,wall_seconds\n";
  for (const auto& kind_name : kinds) {
    BiasKind kind;
    if (!parse_bias_kind(kind_name, kind)) {
      std::string valid;
      for (auto kk : all_bias_kinds()) valid += std::string(bias_kind_name(kk)) + " ";
      throw config_error("unknown bias kind: " + kind_name + " (valid: " + valid + ")");
    }
    for (const auto& row : rows) {
      FullConfig fc = base;
      fc.model.item_count = ds.item_count;
      if (fc.model.max_len <= 0) fc.model.max_len = ds.max_len;
      fc.model.bias.kind = kind;
      if (row == "full") {
        fc.model.mixer.mode = MixerMode::qk_baseline;
        fc.model.mixer.use_qk_map = true;
        fc.model.mixer.use_positional_map = true;
        fc.model.mixer.use_temporal_map = true;
      } else if (row == "no_qk") {
        fc.model.mixer.mode = MixerMode::aftm;
        fc.model.mixer.use_qk_map = false;
        fc.model.mixer.use_positional_map = true;
        fc.model.mixer.use_temporal_map = true;
      } else if (row == "no_pos") {
        fc.model.mixer.mode = MixerMode::qk_baseline;
        fc.model.mixer.use_qk_map = true;
        fc.model.mixer.use_positional_map = false;
        fc.model.mixer.use_temporal_map = true;
      } else if (row == "no_temporal") {
        fc.model.mixer.mode = MixerMode::qk_baseline;
        fc.model.mixer.use_qk_map = true;
        fc.model.mixer.use_positional_map = true;
        fc.model.mixer.use_temporal_map = false;
      } else {
        throw config_error("unknown ablation row: " + row +
                           " (valid: full no_qk no_pos no_temporal)");
      }
      auto split = build_sequences(ds, fc.model.max_len);
      Model<double> model(fc.model);
      auto t0 = std::chrono::steady_clock::now();
      auto res = fit(model, split, fc.train, "");
      double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      double last_loss = res.history.empty() ? 0.0 : res.history.back().loss;
      std::ostringstream os;
      os << kind_name << ',' << row << ',' << res.history.size() << ',' << last_loss
         << ',' << res.test.ndcg10 << ',' << res.test.ndcg50 << ',' << res.test.hr10
         << ',' << res.test.hr50 << ',' << res.test.mrr << ',' << wall << '\n';
      csv += os.str();
      std::cout << "ablate " << kind_name << " / " << row << ": test ndcg@10 "
                << res.test.ndcg10 << " hr@10 " << res.test.hr10 << "\n";
    }
  }
  write_text_atomic(out_dir + "/ablate.csv", csv);
  manifest.add_output(out_dir + "/ablate.csv");
  manifest.finish("ok");
  return 0;
}

struct PlotBiasArgs {
  std::string functions = "pow", out_dir, config, checkpoint;
  double max_delta = 100.0 * 86400.0;
  int points = 200;
  std::int64_t seed = 42;
};

// Fig.-5-style export: (delta_t, weight) sampled log-uniformly in 1+delta.
int cmd_plot_bias(const PlotBiasArgs& a) {
  auto kinds = parse_str_list(a.functions);
  if (a.points < 2) throw config_error("plot-bias needs at least 2 points");
  std::string out_dir = a.out_dir.empty() ? output_root() + "/bias_curves" : a.out_dir;
  fs::create_directories(out_dir);
  FullConfig fc = load_config(a.config);
  json cfg{{"functions", a.functions}, {"max_delta", a.max_delta}, {"points", a.points}};
  Manifest manifest(out_dir + "/manifest.json", "plot-bias", cfg);

  for (const auto& kind_name : kinds) {
    BiasKind kind;
    if (!parse_bias_kind(kind_name, kind)) {
      std::string valid;
      for (auto kk : all_bias_kinds()) valid += std::string(bias_kind_name(kk)) + " ";
      throw config_error("unknown bias kind: " + kind_name + " (valid: " + valid + ")");
    }
    if (kind == BiasKind::bucket) continue;  // table lookup has no curve parameters
    BiasFunction fn = BiasFunction::make(kind, fc.model.bias.softplus_exponent);
    Rng rng(static_cast<std::uint64_t>(a.seed));
    fn.init_random(rng);
    if (!a.checkpoint.empty()) {
      // pull block0 parameters out of a trained model
      FullConfig mc = fc;
      mc.model.bias.kind = kind;
      if (mc.model.item_count < 1) mc.model.item_count = 1;
      Model<double> model(mc.model);
      load_checkpoint(a.checkpoint, model.params);
      const auto& theta = model.params.value("block0.frab.theta");
      for (int i = 0; i < fn.param_count(); ++i)
        fn.theta[static_cast<std::size_t>(i)] = theta(i, 0);
    }
    std::ostringstream os;
    os << "delta_t,weight\n";
    const double lmax = std::log1p(a.max_delta / fc.model.bias.time_scale);
    for (int k = 0; k < a.points; ++k) {
      double u = lmax * static_cast<double>(k) / static_cast<double>(a.points - 1);
      double x = std::expm1(u);
      os << x * fc.model.bias.time_scale << ',' << fn.eval(x) << '\n';
    }
    std::string path = out_dir + "/bias_" + kind_name + ".csv";
    write_text_atomic(path, os.str());
    manifest.add_output(path);
  }
  manifest.finish("ok");
  std::cout << "wrote bias curves to " << out_dir << "\n";
  return 0;
}

struct DescribeArgs {
  std::string config, data;
  Overrides ov;
};

int cmd_describe(const DescribeArgs& a) {
  FullConfig fc = load_config(a.config);
  a.ov.apply(fc);
  if (!a.data.empty()) {
    Dataset ds = read_dataset_file(a.data);
    fc.model.item_count = ds.item_count;
    if (fc.model.max_len <= 0) fc.model.max_len = ds.max_len;
  }
  if (fc.model.item_count < 1) fc.model.item_count = 1;
  Model<double> model(fc.model);
  std::cout << model.describe();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequential recommender with functional relative attention bias"};
  app.require_subcommand(1);

  PrepareArgs pa;
  auto* prepare = app.add_subcommand("prepare", "parse interactions into a split file");
  prepare->add_option("--input", pa.input, "MovieLens .dat or .csv file");
  prepare->add_option("--output", pa.output, "output split file path");
  prepare->add_option("--format", pa.format, "input format: auto, dat, csv");
  prepare->add_option("--min-interactions", pa.min_interactions, "drop users below this");
  prepare->add_option("--max-len", pa.max_len, "sequence length n");
  prepare->add_flag("--synthetic", pa.synthetic, "generate the cyclic synthetic dataset");
  prepare->add_option("--users", pa.synth_users, "synthetic user count");
  prepare->add_option("--items", pa.synth_items, "synthetic item count");
  prepare->add_option("--min-len", pa.synth_min_len, "synthetic min sequence length");
  prepare->add_option("--max-len-seq", pa.synth_max_len, "synthetic max sequence length");
  prepare->add_option("--seed", pa.seed, "synthetic generator seed");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", ta.config, "config JSON");
  train->add_option("--data", ta.data, "split file from prepare");
  train->add_option("--run-dir", ta.run_dir, "output directory");
  train->add_flag("--dry-run", ta.dry_run, "print the parameter audit and exit");
  ta.ov.add_flags(train);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--config", ea.config, "config JSON");
  eval->add_option("--data", ea.data, "split file");
  eval->add_option("--checkpoint", ea.checkpoint, "checkpoint path");
  eval->add_option("--split", ea.split, "validation or test");
  ea.ov.add_flags(eval);

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "run microbenchmarks");
  bench->add_option("--kind", ba.kind, "bias, block, or all");
  bench->add_option("--sweep-n", ba.sweep_n, "comma-separated sequence lengths");
  bench->add_option("--sweep-d", ba.sweep_d, "comma-separated embedding dims");
  bench->add_option("--reps", ba.reps, "timed repetitions (min 30)");
  bench->add_option("--precision", ba.precision, "f32 or f64");
  bench->add_option("--heads", ba.heads, "baseline attention heads");
  bench->add_option("--ffn-mult", ba.ffn_mult, "d_ffn as a multiple of d");
  bench->add_option("--out", ba.out_dir, "output directory");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "bias-function and attention-map sweeps");
  ablate->add_option("--config", aa.config, "config JSON");
  ablate->add_option("--data", aa.data, "split file");
  ablate->add_option("--functions", aa.functions, "comma-separated bias kinds");
  ablate->add_option("--rows", aa.rows, "comma-separated: full,no_qk,no_pos,no_temporal");
  ablate->add_option("--out", aa.out_dir, "output directory");
  aa.ov.add_flags(ablate);

  PlotBiasArgs pba;
  auto* plot = app.add_subcommand("plot-bias", "export bias weight curves as CSV");
  plot->add_option("--functions", pba.functions, "comma-separated bias kinds");
  plot->add_option("--max-delta", pba.max_delta, "largest time delta in seconds");
  plot->add_option("--points", pba.points, "samples per curve");
  plot->add_option("--config", pba.config, "config JSON (time_scale etc.)");
  plot->add_option("--checkpoint", pba.checkpoint, "read curve parameters from checkpoint");
  plot->add_option("--seed", pba.seed, "seed for nn-kind initialization");
  plot->add_option("--out", pba.out_dir, "output directory");

  DescribeArgs da;
  auto* describe = app.add_subcommand("describe", "print the parameter-count audit");
  describe->add_option("--config", da.config, "config JSON");
  describe->add_option("--data", da.data, "split file (sets item_count)");
  da.ov.add_flags(describe);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (prepare->parsed()) return cmd_prepare(pa);
    if (train->parsed()) return cmd_train(ta);
    if (eval->parsed()) return cmd_eval(ea);
    if (bench->parsed()) return cmd_bench(ba);
    if (ablate->parsed()) return cmd_ablate(aa);
    if (plot->parsed()) return cmd_plot_bias(pba);
    if (describe->parsed()) return cmd_describe(da);
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const parse_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
