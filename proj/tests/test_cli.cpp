#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "kanite/data.hpp"

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return KANITE_CLI_PATH; }

int run(const std::string& args) {
  std::string cmd = std::string(cli_path()) + " " + args + " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("kanite_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter_++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int counter_;
};
int TempDir::counter_ = 0;

// strip the wall_s column (the one run-dependent field) from a sweep CSV
std::string drop_wall_column(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    auto pos = line.rfind(',');
    out += line.substr(0, pos) + "\n";
  }
  return out;
}

}  // namespace

TEST_CASE("gen: files exist and the loader round-trips") {
  TempDir dir;
  auto csv = dir.path / "d.csv";
  int rc = run("gen --n 500 --k 4 --dim 10 --gamma 1.0 --sigma 0.5 --seed 7 "
               "--out " + csv.string());
  CHECK(rc == 0);
  CHECK(fs::exists(csv));
  CHECK(fs::exists(dir.path / "d.meta.json"));

  auto ds = kanite::load_csv(csv.string());
  CHECK(ds.n() == 500);
  CHECK(ds.n_treatments == 4);
  CHECK(ds.covariate_dim() == 10);

  kanite::save_csv(ds, (dir.path / "again.csv").string());
  CHECK(slurp(csv) == slurp(dir.path / "again.csv"));
}

TEST_CASE("gen: identical flags produce byte-identical CSVs") {
  TempDir dir;
  auto a = dir.path / "a.csv";
  auto b = dir.path / "b.csv";
  CHECK(run("gen --n 200 --k 3 --dim 5 --seed 42 --out " + a.string()) == 0);
  CHECK(run("gen --n 200 --k 3 --dim 5 --seed 42 --out " + b.string()) == 0);
  CHECK(slurp(a) == slurp(b));
}

TEST_CASE("gen: k below 2 is a flag error") {
  TempDir dir;
  CHECK(run("gen --n 100 --k 1 --out " + (dir.path / "x.csv").string()) == 2);
}

TEST_CASE("gen: infeasible sizes are a data error") {
  TempDir dir;
  CHECK(run("gen --n 30 --k 5 --out " + (dir.path / "x.csv").string()) == 3);
}

TEST_CASE("train: smoke run emits the fixed artifact set") {
  TempDir dir;
  auto csv = dir.path / "d.csv";
  REQUIRE(run("gen --n 200 --k 2 --dim 4 --seed 3 --out " + csv.string()) == 0);
  int rc = run("train --data " + csv.string() + " --loss eb --alpha 1 --beta 1"
               " --seed 0 --epochs 4 --psi-widths 8,4 --head-widths '' --out " +
               (dir.path / "run").string());
  CHECK(rc == 0);
  CHECK(fs::exists(dir.path / "run" / "model.json"));
  CHECK(fs::exists(dir.path / "run" / "runlog.jsonl"));
  CHECK(fs::exists(dir.path / "run" / "report.json"));

  auto report = slurp(dir.path / "run" / "report.json");
  CHECK(report.find("\"pehe\"") != std::string::npos);
  CHECK(report.find("nan") == std::string::npos);
}

TEST_CASE("train: missing data file exits 2 and names the path") {
  CHECK(run("train --data /nowhere/missing.csv") == 2);
}

TEST_CASE("train: unknown loss exits 2") {
  TempDir dir;
  auto csv = dir.path / "d.csv";
  REQUIRE(run("gen --n 100 --k 2 --dim 3 --seed 1 --out " + csv.string()) == 0);
  CHECK(run("train --data " + csv.string() + " --loss bogus") == 2);
}

TEST_CASE("train: same seed twice gives byte-identical runlog.jsonl") {
  TempDir dir;
  auto csv = dir.path / "d.csv";
  REQUIRE(run("gen --n 220 --k 2 --dim 4 --seed 9 --out " + csv.string()) == 0);
  std::string base = "train --data " + csv.string() +
                     " --loss mmd --seed 5 --epochs 5 --psi-widths 6,4"
                     " --head-widths '' --out ";
  REQUIRE(run(base + (dir.path / "r1").string()) == 0);
  REQUIRE(run(base + (dir.path / "r2").string()) == 0);
  std::string l1 = slurp(dir.path / "r1" / "runlog.jsonl");
  CHECK(!l1.empty());
  CHECK(l1 == slurp(dir.path / "r2" / "runlog.jsonl"));
}

TEST_CASE("train: beta 0 metrics are loss-kind invariant") {
  TempDir dir;
  auto csv = dir.path / "d.csv";
  REQUIRE(run("gen --n 200 --k 2 --dim 3 --seed 12 --out " + csv.string()) == 0);
  std::string base = "train --data " + csv.string() +
                     " --beta 0 --seed 4 --epochs 4 --psi-widths 6,4"
                     " --head-widths '' --out ";
  REQUIRE(run(base + (dir.path / "w").string() + " --loss wass") == 0);
  REQUIRE(run(base + (dir.path / "m").string() + " --loss mmd") == 0);
  CHECK(slurp(dir.path / "w" / "runlog.jsonl") ==
        slurp(dir.path / "m" / "runlog.jsonl"));
  CHECK(slurp(dir.path / "w" / "model.json") ==
        slurp(dir.path / "m" / "model.json"));
}

TEST_CASE("train: config file fills unset flags, flags win") {
  TempDir dir;
  auto csv = dir.path / "d.csv";
  REQUIRE(run("gen --n 200 --k 2 --dim 3 --seed 2 --out " + csv.string()) == 0);
  {
    std::ofstream cfg(dir.path / "cfg.json");
    cfg << R"({"loss":"eb","epochs":3,"psi-widths":"6,4","head-widths":"",)"
        << R"("seed":8,"out":")" << (dir.path / "fromcfg").string() << "\"}";
  }
  int rc = run("train --data " + csv.string() + " --config " +
               (dir.path / "cfg.json").string() + " --epochs 2");
  CHECK(rc == 0);
  CHECK(fs::exists(dir.path / "fromcfg" / "report.json"));
  // --epochs 2 overrides the file's 3
  std::string log = slurp(dir.path / "fromcfg" / "runlog.jsonl");
  CHECK(std::count(log.begin(), log.end(), '\n') <= 2);
}

TEST_CASE("sweep: 2x2 cells produce a 4-row csv plus params.csv") {
  TempDir dir;
  auto csv = dir.path / "d.csv";
  REQUIRE(run("gen --n 180 --k 2 --dim 3 --seed 6 --out " + csv.string()) == 0);
  int rc = run("sweep --data " + csv.string() +
               " --grids 3,5 --degrees 2,3 --reps 2 --epochs 2"
               " --psi-widths 6,4 --head-widths '' --out " +
               (dir.path / "sw").string());
  CHECK(rc == 0);
  std::string csv_text = slurp(dir.path / "sw" / "sweep.csv");
  CHECK(csv_text.substr(0, csv_text.find('\n')) ==
        "grid,degree,seed,pehe,ate,params,epochs,wall_s");
  CHECK(std::count(csv_text.begin(), csv_text.end(), '\n') == 5);

  std::string params = slurp(dir.path / "sw" / "params.csv");
  CHECK(params.substr(0, params.find('\n')) == "grid,degree,params");
  CHECK(std::count(params.begin(), params.end(), '\n') == 5);
}

TEST_CASE("sweep: rerun with the same seeds matches modulo wall_s") {
  TempDir dir;
  auto csv = dir.path / "d.csv";
  REQUIRE(run("gen --n 160 --k 2 --dim 3 --seed 13 --out " + csv.string()) == 0);
  std::string base = "sweep --data " + csv.string() +
                     " --grids 4 --degrees 2 --reps 2 --epochs 2 --seed 3"
                     " --psi-widths 6,4 --head-widths '' --out ";
  REQUIRE(run(base + (dir.path / "s1").string()) == 0);
  REQUIRE(run(base + (dir.path / "s2").string()) == 0);
  CHECK(drop_wall_column(slurp(dir.path / "s1" / "sweep.csv")) ==
        drop_wall_column(slurp(dir.path / "s2" / "sweep.csv")));
  CHECK(slurp(dir.path / "s1" / "params.csv") ==
        slurp(dir.path / "s2" / "params.csv"));
}

TEST_CASE("usage errors exit 2") {
  CHECK(run("") == 2);
  CHECK(run("unknown-subcommand") == 2);
  CHECK(run("train") == 2);  // --data required
}
