#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#ifndef FUXIB_CLI_PATH
#error "FUXIB_CLI_PATH must point at the built binary"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("fx_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  int run(const std::string& args, std::string* output = nullptr) const {
    std::string log = (dir / "out.log").string();
    std::string cmd = std::string(FUXIB_CLI_PATH) + " " + args + " > " + log + " 2>&1";
    int rc = std::system(cmd.c_str());
    if (output) {
      std::ifstream in(log);
      std::stringstream ss;
      ss << in.rdbuf();
      *output = ss.str();
    }
    return WEXITSTATUS(rc);
  }
};

json read_json(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  json j;
  in >> j;
  return j;
}

std::string fixture_dat(const Workspace& ws) {
  // 4 users x 6 interactions
  std::string p = ws.path("ratings.dat");
  std::ofstream out(p);
  for (int u = 1; u <= 4; ++u)
    for (int k = 0; k < 6; ++k)
      out << u << "::" << (u * 10 + k) << "::5::" << (k + 1) * 1000 << "\n";
  return p;
}

}  // namespace

TEST_CASE("prepare real and synthetic inputs, deterministic hashes") {
  Workspace ws;
  auto input = fixture_dat(ws);
  std::string out;
  REQUIRE(ws.run("prepare --input " + input + " --max-len 8 --min-interactions 5 --output " +
                     ws.path("real.fxs"),
                 &out) == 0);
  REQUIRE(fs::exists(ws.path("real.fxs")));
  auto sidecar = read_json(ws.path("real.fxs.json"));
  REQUIRE(sidecar["users"] == 4);
  REQUIRE(sidecar["items"] == 24);
  REQUIRE(sidecar["interactions"] == 24);
  std::string hash1 = sidecar["dataset_hash"];

  REQUIRE(ws.run("prepare --input " + input + " --max-len 8 --min-interactions 5 --output " +
                 ws.path("real2.fxs")) == 0);
  auto sidecar2 = read_json(ws.path("real2.fxs.json"));
  REQUIRE(sidecar2["dataset_hash"] == hash1);

  auto manifest = read_json(ws.path("real.fxs.manifest.json"));
  REQUIRE(manifest["status"] == "ok");
  REQUIRE(manifest["command"] == "prepare");

  REQUIRE(ws.run("prepare --synthetic --users 20 --items 10 --min-len 5 --max-len-seq 12 "
                 "--max-len 16 --output " + ws.path("synth.fxs")) == 0);
  REQUIRE(fs::exists(ws.path("synth.fxs")));
}

TEST_CASE("prepare errors use exit code 2") {
  Workspace ws;
  std::string out;
  REQUIRE(ws.run("prepare --input /no/such/file.dat --output " + ws.path("x.fxs"),
                 &out) == 2);
  REQUIRE(out.find("error") != std::string::npos);

  // malformed line
  std::ofstream bad(ws.path("bad.dat"));
  bad << "1::2::3::4\ngarbage\n";
  bad.close();
  REQUIRE(ws.run("prepare --input " + ws.path("bad.dat") + " --min-interactions 1 --output " +
                     ws.path("y.fxs"),
                 &out) == 2);
  REQUIRE(out.find("line 2") != std::string::npos);
}

TEST_CASE("unknown flags are rejected") {
  Workspace ws;
  std::string out;
  REQUIRE(ws.run("prepare --no-such-flag", &out) == 2);
  REQUIRE(ws.run("frobnicate", &out) == 2);
  REQUIRE(ws.run("--help", &out) == 0);
  REQUIRE(out.find("prepare") != std::string::npos);
}

TEST_CASE("train, eval, describe round trip on the synthetic dataset") {
  Workspace ws;
  REQUIRE(ws.run("prepare --synthetic --users 30 --items 12 --min-len 5 --max-len-seq 12 "
                 "--max-len 16 --output " + ws.path("data.fxs")) == 0);

  // config file with overridable fields
  {
    std::ofstream cfg(ws.path("cfg.json"));
    cfg << R"({"model": {"d": 12, "d_ffn": 12, "blocks": 1, "negatives": 4, "max_len": 16,
                "bias": {"kind": "pow"}},
               "train": {"max_epochs": 2, "batch_size": 8, "patience": 5,
                "optim": {"lr": 0.003}}})";
  }

  std::string out;
  REQUIRE(ws.run("train --config " + ws.path("cfg.json") + " --data " + ws.path("data.fxs") +
                     " --dry-run",
                 &out) == 0);
  REQUIRE(out.find("trainable scalars") != std::string::npos);
  REQUIRE(out.find("(match)") != std::string::npos);

  // dry-run needs no data file
  REQUIRE(ws.run("train --config " + ws.path("cfg.json") + " --dry-run", &out) == 0);
  REQUIRE(out.find("trainable scalars") != std::string::npos);
  REQUIRE(ws.run("train --config " + ws.path("cfg.json"), &out) == 2);

  REQUIRE(ws.run("train --config " + ws.path("cfg.json") + " --data " + ws.path("data.fxs") +
                     " --run-dir " + ws.path("run"),
                 &out) == 0);
  REQUIRE(fs::exists(ws.path("run/metrics.jsonl")));
  REQUIRE(fs::exists(ws.path("run/summary.csv")));
  auto manifest = read_json(ws.path("run/manifest.json"));
  REQUIRE(manifest["status"] == "ok");
  REQUIRE(manifest["outputs"].size() >= 3);
  std::string ckpt;
  for (const auto& o : manifest["outputs"])
    if (o.get<std::string>().find(".fxb") != std::string::npos) ckpt = o;
  REQUIRE(!ckpt.empty());

  REQUIRE(ws.run("eval --config " + ws.path("cfg.json") + " --data " + ws.path("data.fxs") +
                     " --checkpoint " + ckpt + " --split test",
                 &out) == 0);
  auto metrics = json::parse(out);
  REQUIRE(metrics.contains("ndcg10"));
  REQUIRE(metrics["hr10"].get<double>() >= 0.0);

  REQUIRE(ws.run("describe --config " + ws.path("cfg.json") + " --data " + ws.path("data.fxs"),
                 &out) == 0);
  REQUIRE(out.find("embed.E") != std::string::npos);
}

TEST_CASE("bench writes the pinned CSV schema") {
  Workspace ws;
  std::string out;
  REQUIRE(ws.run("bench --kind all --sweep-n 16,32 --sweep-d 8 --reps 30 --out " +
                     ws.path("bench"),
                 &out) == 0);
  std::ifstream csv(ws.path("bench/bench.csv"));
  std::string header;
  std::getline(csv, header);
  REQUIRE(header == "kernel,n,d,median_ns,p10_ns,p90_ns,flops,gathers");
  int rows = 0;
  std::string line;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 2 * 2 + 2 * 2);  // bias kernels + block kernels per n
  REQUIRE(fs::exists(ws.path("bench/bench.md")));
}

TEST_CASE("ablate runs the function x row matrix") {
  Workspace ws;
  REQUIRE(ws.run("prepare --synthetic --users 16 --items 8 --min-len 5 --max-len-seq 10 "
                 "--max-len 12 --output " + ws.path("data.fxs")) == 0);
  {
    std::ofstream cfg(ws.path("cfg.json"));
    cfg << R"({"model": {"d": 8, "d_ffn": 8, "blocks": 1, "negatives": 3, "max_len": 12},
               "train": {"max_epochs": 1, "batch_size": 8}})";
  }
  std::string out;
  REQUIRE(ws.run("ablate --config " + ws.path("cfg.json") + " --data " + ws.path("data.fxs") +
                     " --functions pow,zero --rows full,no_qk --seed 7 --out " +
                     ws.path("ab"),
                 &out) == 0);
  std::ifstream csv(ws.path("ab/ablate.csv"));
  std::string line;
  std::getline(csv, line);
  REQUIRE(line.rfind("function,row,", 0) == 0);
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 4);

  REQUIRE(ws.run("ablate --config " + ws.path("cfg.json") + " --data " + ws.path("data.fxs") +
                     " --functions nosuchkind --rows full --out " + ws.path("ab2"),
                 &out) == 2);
  REQUIRE(out.find("pow") != std::string::npos);  // lists the valid kinds
}

TEST_CASE("plot-bias emits decreasing curves for pow and exp") {
  Workspace ws;
  std::string out;
  REQUIRE(ws.run("plot-bias --functions pow,exp,sin --points 64 --out " + ws.path("curves"),
                 &out) == 0);
  for (const std::string kind : {"pow", "exp"}) {
    std::ifstream csv(ws.path("curves/bias_" + kind + ".csv"));
    REQUIRE(csv.good());
    std::string line;
    std::getline(csv, line);
    REQUIRE(line == "delta_t,weight");
    double prev_w = 1e300;
    double prev_t = -1;
    int count = 0;
    while (std::getline(csv, line)) {
      auto comma = line.find(',');
      double t = std::stod(line.substr(0, comma));
      double w = std::stod(line.substr(comma + 1));
      REQUIRE(t > prev_t);
      REQUIRE(w <= prev_w + 1e-15);
      prev_w = w;
      prev_t = t;
      ++count;
    }
    REQUIRE(count == 64);
  }
  REQUIRE(ws.run("plot-bias --functions wat --out " + ws.path("c2"), &out) == 2);
}
