#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "commands.hpp"

namespace fs = std::filesystem;
using san::cli::read_json;

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "san");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  return san::cli::run(static_cast<int>(args.size()), argv.data());
}

fs::path scratch_dir(const std::string& leaf) {
  const fs::path dir = fs::temp_directory_path() / ("san_cli_" + leaf);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("count writes params and rejects unknown models") {
  const fs::path a = scratch_dir("count3"), b = scratch_dir("count11");
  CHECK(run_cli({"count", "--model", "san10", "--footprint", "3", "--out", a.string()}) == 0);
  CHECK(run_cli({"count", "--model", "san10", "--footprint", "11", "--out", b.string()}) == 0);
  CHECK(read_json(a / "cost.json").at("params") == read_json(b / "cost.json").at("params"));
  CHECK(fs::exists(a / "cost.txt"));
  CHECK(fs::exists(a / "manifest.json"));
  CHECK(run_cli({"count", "--model", "san11", "--out", a.string()}) == 2);
  CHECK(run_cli({"count", "--model", "resnet26", "--attention", "patchwise", "--out", a.string()}) == 2);
  CHECK(run_cli({"count", "--model", "san10", "--attention", "patchwise", "--relation", "subtraction"}) == 2);
  CHECK(run_cli({"frobnicate"}) == 2);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("gradcheck filter runs a single case") {
  const fs::path dir = scratch_dir("gradcheck");
  CHECK(run_cli({"gradcheck", "--kind", "patchwise", "--relation", "clique_product", "--out", dir.string()}) == 0);
  const auto j = read_json(dir / "gradcheck.json");
  CHECK(j.at("count") == 1);
  CHECK(j.at("passed") == true);
  CHECK(run_cli({"gradcheck", "--inject-fault", "--kind", "none", "--out", dir.string()}) == 1);
  fs::remove_all(dir);
}

TEST_CASE("missing dataset root is a usage error") {
  const char* saved = std::getenv("SAN_DATA_ROOT");
  const std::string keep = saved ? saved : "";
  unsetenv("SAN_DATA_ROOT");
  const fs::path dir = scratch_dir("nodata");
  CHECK(run_cli({"train", "--data", "cifar10", "--out", dir.string()}) == 2);
  CHECK(run_cli({"train", "--data", "cifar10", "--data-root", "/nonexistent/cifar", "--out", dir.string()}) == 2);
  if (saved) setenv("SAN_DATA_ROOT", keep.c_str(), 1);
}

TEST_CASE("train, eval, robust and attack on a small run") {
  const fs::path dir = scratch_dir("run");
  const std::string run = dir.string();
  REQUIRE(run_cli({"train", "--train-count", "200", "--val-count", "100", "--epochs", "3", "--out", run}) == 0);
  std::ifstream metrics(dir / "metrics.csv");
  int lines = 0;
  for (std::string line; std::getline(metrics, line);) ++lines;
  CHECK(lines == 1 + 3);
  for (const char* f : {"config.json", "manifest.json", "report.json", "best.ckpt", "last.ckpt"}) CHECK(fs::exists(dir / f));

  CHECK(run_cli({"eval", "--run", run}) == 0);
  CHECK(fs::exists(dir / "eval"));

  CHECK(run_cli({"robust", "--run", run, "--manipulation", "cw180", "--images", "50"}) == 0);
  const auto robust = read_json(dir / "robust" / "robust.json");
  REQUIRE(robust.at("rows").size() == 1);
  CHECK(robust.at("rows")[0].at("name") == "cw180");
  CHECK(run_cli({"robust", "--run", run, "--manipulation", "cw45"}) == 2);

  CHECK(run_cli({"attack", "--run", run, "--images", "20", "--iters", "2", "--eps", "8", "--step", "4"}) == 0);
  CHECK(run_cli({"attack", "--run", run, "--images", "20", "--iters", "4", "--eps", "8", "--step", "2"}) == 0);
  for (const char* leaf : {"attack_eps8_step4_iters2", "attack_eps8_step2_iters4"}) {
    const auto j = read_json(dir / leaf / "attack.json");
    CHECK(j.contains("success_rate"));
  }
  CHECK(run_cli({"eval", "--run", (dir / "missing").string()}) != 0);
  fs::remove_all(dir);
}
