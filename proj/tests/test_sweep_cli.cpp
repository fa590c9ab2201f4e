#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "dtlab/sweep.hpp"

using namespace dtlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dtlab_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(DTLAB_CLI) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("a sweep isolates invalid entries") {
  SweepSpec spec;
  spec.base = {{"preset", "toy-uvit"}};
  spec.overrides = {{{"hidden_dim", 48}}, {{"num_heads", 5}}, {{"preset", "uvit-large"}}};
  const auto r = run_sweep(spec);
  REQUIRE(r.entries.size() == 3);
  CHECK_FALSE(r.all_ok());
  std::size_t ok = 0;
  for (const auto& e : r.entries) {
    ok += e.ok;
    if (!e.ok) CHECK(e.reason.find("h mod n") != std::string::npos);
  }
  CHECK(ok == 2);
  CHECK(std::is_sorted(r.entries.begin(), r.entries.end(),
                       [](const SweepEntry& a, const SweepEntry& b) { return a.name < b.name; }));
  CHECK(r.csv().find("skipped: h mod n != 0") != std::string::npos);
}

TEST_CASE("an empty override list evaluates the base config") {
  SweepSpec spec;
  spec.base = {{"preset", "pixart-0.6b"}};
  const auto r = run_sweep(spec);
  REQUIRE(r.entries.size() == 1);
  CHECK(r.entries[0].ok);
  CHECK(r.entries[0].name == "pixart-0.6b");
}

TEST_CASE("sweep outputs are written and reproducible") {
  SweepSpec spec;
  spec.base = {{"preset", "toy-uvit"}};
  spec.overrides = {{{"depth", 2}}, {{"depth", 6}}};
  TrainConfig t = TrainConfig::toy();
  t.steps = 3;
  t.warmup = 1;
  t.batch_size = 2;
  spec.train = t;
  const auto a = scratch("sweep_a"), b = scratch("sweep_b");
  const auto ra = run_sweep(spec, a.string());
  (void)run_sweep(spec, b.string());
  CHECK(ra.all_ok());
  CHECK(slurp(a / "sweep.csv") == slurp(b / "sweep.csv"));
  CHECK(fs::exists(a / "entries" / "000-toy-uvit-h32-d2-n4.json"));
  CHECK(fs::exists(a / "entries" / "001-toy-uvit-h32-d6-n4-train.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("sweep spec json round trip") {
  SweepSpec spec;
  spec.base = {{"preset", "toy-uvit"}};
  spec.overrides = {{{"depth", 3}}};
  spec.mode = MacsMode::WithAttentionMatmuls;
  spec.resolutions = {256};
  const auto back = sweep_from_json(to_json(spec));
  CHECK(back.base == spec.base);
  CHECK(back.overrides == spec.overrides);
  CHECK(back.mode == spec.mode);
  CHECK(back.resolutions == spec.resolutions);
  CHECK_FALSE(back.train.has_value());
  CHECK_THROWS_AS(sweep_from_json({{"resolutions", "all"}}), ConfigError);
}

TEST_CASE("cli exit codes") {
  const auto out = scratch("cli_codes");
  CHECK(cli("cost-report --preset uvit-large --out " + out.string()) == 0);
  CHECK(fs::exists(out / "cost.csv"));
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(cli("cost-report --preset no-such-preset") == 1);
  CHECK(cli("build-check --out " + (out / "check").string()) == 0);
  CHECK(slurp(out / "check" / "build_check.csv").find("FAIL") == std::string::npos);
  std::ofstream(out / "bad.json") << R"({"preset": "toy-uvit", "num_heads": 5})";
  CHECK(cli("build-check --config " + (out / "bad.json").string()) == 1);
  const std::string lex = " --lexicon " DTLAB_DATA_DIR "/fixtures/lexicon.tsv";
  CHECK(cli("caption-stats --corpus only=" DTLAB_DATA_DIR "/fixtures/captions_short.tsv" + lex) == 0);
  CHECK(cli("caption-stats --corpus " DTLAB_DATA_DIR "/fixtures/captions_short.tsv" + lex) == 1);
  fs::remove_all(out);
}

TEST_CASE("cli rerun reproduces a run byte for byte") {
  const auto a = scratch("cli_rerun_a"), b = scratch("cli_rerun_b");
  REQUIRE(cli("train --preset toy-pixart --steps 3 --batch 2 --warmup 1 --seed 4 --out " + a.string()) == 0);
  REQUIRE(cli("rerun --manifest " + (a / "manifest.json").string() + " --out " + b.string()) == 0);
  CHECK(slurp(a / "train_log.csv") == slurp(b / "train_log.csv"));
  CHECK(slurp(a / "checkpoint" / "params.bin") == slurp(b / "checkpoint" / "params.bin"));
  fs::remove_all(a);
  fs::remove_all(b);
}
