#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gatecrush/config.hpp"
#include "gatecrush/pipeline.hpp"

using namespace gatecrush;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(const std::string& out, const std::string& mode = "flops") {
  RunConfig cfg;
  cfg.seed = 3;
  cfg.out = out;
  cfg.architecture.preset = "toy2";
  cfg.architecture.input_size = 16;
  cfg.dataset.train_count = 256;
  cfg.dataset.eval_count = 64;
  cfg.dataset.resolution = 16;
  cfg.dataset.noise = 0.12;
  cfg.dataset.color_jitter = 0.02;
  cfg.baseline.epochs = 2;
  cfg.baseline.lr = 0.05;
  cfg.baseline.batch_size = 64;
  cfg.prune.alpha = 20.0;
  cfg.prune.efficiency = mode;
  cfg.prune.epochs = 2;
  cfg.prune.lr = 0.02;
  cfg.prune.batch_size = 64;
  cfg.finetune_stage.epochs = 1;
  cfg.finetune_stage.lr = 0.02;
  cfg.finetune_stage.batch_size = 64;
  return cfg;
}

std::vector<unsigned char> file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.is_open());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("config: unknown keys are rejected at every level") {
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json{{"bogus", 1}}), Error);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json{{"prune", {{"alpha", 1.0}, {"oops", 2}}}}),
                  Error);
  CHECK_THROWS_AS(
      RunConfig::from_json(nlohmann::json{{"dataset", {{"source", "nonsense"}}}}), Error);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json{{"precision", "f16"}}), Error);
}

TEST_CASE("config: resolved form is re-runnable and round-trips") {
  auto cfg = tiny_config("/tmp/gc_cli_cfg");
  fs::create_directories(cfg.out);
  const std::string path = cfg.out + "/resolved.json";
  cfg.write_resolved(path);
  auto back = RunConfig::from_file(path);
  CHECK(back.to_json() == cfg.to_json());
}

TEST_CASE("pipeline commands: full flops-mode run produces every artifact") {
  const std::string out = "/tmp/gc_cli_run";
  fs::remove_all(out);
  auto cfg = tiny_config(out);

  REQUIRE(cmd_train_baseline(cfg) == 0);
  REQUIRE(cmd_prune(cfg) == 0);
  REQUIRE(cmd_finetune(cfg) == 0);
  REQUIRE(cmd_flops(cfg) == 0);
  REQUIRE(cmd_report(cfg) == 0);

  for (const char* f :
       {"baseline.ckpt", "baseline_metrics.csv", "gated.ckpt", "history.csv", "pruned.ckpt",
        "pruned_manifest.txt", "final.ckpt", "finetune_metrics.csv", "flops.csv",
        "report/accuracy_vs_efficiency.csv", "report/loss_curve.svg", "report/encoding_bars.svg",
        "report/encoding_bars.csv", "resolved_config_prune.json"}) {
    CHECK_MESSAGE(fs::exists(out + "/" + f), f);
  }
}

TEST_CASE("missing prerequisites are named explicitly") {
  const std::string out = "/tmp/gc_cli_missing";
  fs::remove_all(out);

  SUBCASE("prune without a baseline checkpoint") {
    auto cfg = tiny_config(out);
    try {
      cmd_prune(cfg);
      FAIL("expected error");
    } catch (const Error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("baseline") != std::string::npos);
      CHECK(msg.find("train-baseline") != std::string::npos);
    }
  }

  SUBCASE("prune in latency mode without an LPNet checkpoint") {
    auto cfg = tiny_config(out, "latency");
    REQUIRE(cmd_train_baseline(cfg) == 0);
    try {
      cmd_prune(cfg);
      FAIL("expected error");
    } catch (const Error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("LPNet") != std::string::npos);
      CHECK(msg.find("train-lpnet") != std::string::npos);
    }
  }

  SUBCASE("finetune without a pruned checkpoint") {
    auto cfg = tiny_config(out + "_ft");
    fs::remove_all(cfg.out);
    try {
      cmd_finetune(cfg);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("prune") != std::string::npos);
    }
  }
}

TEST_CASE("prune with alpha=0 keeps the efficiency curve flat at baseline") {
  const std::string out = "/tmp/gc_cli_alpha0";
  fs::remove_all(out);
  auto cfg = tiny_config(out);
  cfg.prune.alpha = 0.0;
  REQUIRE(cmd_train_baseline(cfg) == 0);
  REQUIRE(cmd_prune(cfg) == 0);
  auto hist = read_history_csv(cfg.history_csv());
  auto geom = cfg.make_arch().geometry();
  const auto full = geom.full_width_encoding();
  FlopsEvaluator<float> ev(geom);
  const double baseline_eff = ev.value(std::vector<double>(full.begin(), full.end()));
  for (const auto& m : hist) {
    CHECK(m.encoding == full);
    CHECK(m.eff_value == doctest::Approx(baseline_eff));
  }
}

TEST_CASE("determinism: identical config and seed reproduce artifacts bit-exactly") {
  auto run_once = [&](const std::string& out) {
    fs::remove_all(out);
    auto cfg = tiny_config(out);
    REQUIRE(cmd_train_baseline(cfg) == 0);
    REQUIRE(cmd_prune(cfg) == 0);
    REQUIRE(cmd_finetune(cfg) == 0);
  };
  run_once("/tmp/gc_det_a");
  run_once("/tmp/gc_det_b");
  for (const char* f : {"baseline.ckpt", "baseline_metrics.csv", "gated.ckpt", "history.csv",
                        "pruned.ckpt", "pruned_manifest.txt", "final.ckpt",
                        "finetune_metrics.csv"}) {
    CHECK_MESSAGE(file_bytes(std::string("/tmp/gc_det_a/") + f) ==
                      file_bytes(std::string("/tmp/gc_det_b/") + f),
                  f);
  }
}

TEST_CASE("the cli binary itself runs an end-to-end smoke pipeline") {
  const char* bin_env = std::getenv("GATECRUSH_CLI");
  const std::string bin = bin_env ? bin_env : "./tools/gatecrush";
  if (!fs::exists(bin)) {
    MESSAGE("cli binary not found at ", bin, "; set GATECRUSH_CLI");
    return;
  }
  const std::string out = "/tmp/gc_cli_exec";
  fs::remove_all(out);
  auto cfg = tiny_config(out);
  fs::create_directories(out);
  const std::string cfg_path = out + "/config.json";
  cfg.write_resolved(cfg_path);

  auto run = [&](const std::string& args) {
    const std::string cmd = bin + " " + args + " --config " + cfg_path + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };
  CHECK(run("train-baseline") == 0);
  CHECK(run("prune") == 0);
  CHECK(run("finetune") == 0);
  CHECK(run("flops") == 0);
  CHECK(run("report") == 0);
  CHECK(run("prune --alpha 0.5 --efficiency l1 --out /tmp/gc_cli_exec2") != 0);  // no baseline there
  CHECK(fs::exists(out + "/final.ckpt"));
}
