#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "gatecrush/pipeline.hpp"

using namespace gatecrush;

int main(int argc, char** argv) {
  CLI::App app{"gatecrush: efficiency-aware filter pruning with weight-dependent gates"};
  app.require_subcommand(1);

  std::string config_path;
  int64_t seed = -1;
  std::string precision;
  std::string efficiency;
  double alpha = -1.0;
  std::string out;
  app.add_option("--config", config_path, "run configuration file (json)")->required(false);
  app.add_option("--seed", seed, "override config seed");
  app.add_option("--precision", precision, "f32|f64")->check(CLI::IsMember({"f32", "f64", ""}));
  app.add_option("--efficiency", efficiency, "latency|flops|l1")
      ->check(CLI::IsMember({"latency", "flops", "l1", ""}));
  app.add_option("--alpha", alpha, "override prune.alpha");
  app.add_option("--out", out, "override output directory");

  auto* c_baseline = app.add_subcommand("train-baseline", "train the unpruned baseline model");
  auto* c_collect = app.add_subcommand("collect-latency", "measure decoded networks, emit samples");
  auto* c_lpnet = app.add_subcommand("train-lpnet", "train the latency predictor offline");
  auto* c_prune = app.add_subcommand("prune", "efficiency-aware gated training + export");
  auto* c_finetune = app.add_subcommand("finetune", "fine-tune the exported pruned model");
  auto* c_flops = app.add_subcommand("flops", "FLOPs breakdown for an encoding or checkpoint");
  auto* c_report = app.add_subcommand("report", "accuracy/efficiency curves and encoding plots");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::string flops_checkpoint, flops_encoding;
  c_flops->add_option("--checkpoint", flops_checkpoint, "checkpoint whose widths to analyze");
  c_flops->add_option("--encoding", flops_encoding, "comma-separated kept-filter counts");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    if (!precision.empty()) cfg.precision = precision;
    if (!efficiency.empty()) cfg.prune.efficiency = efficiency;
    if (alpha >= 0.0) cfg.prune.alpha = alpha;
    if (!out.empty()) cfg.out = out;

    if (c_baseline->parsed()) return cmd_train_baseline(cfg);
    if (c_collect->parsed()) return cmd_collect_latency(cfg);
    if (c_lpnet->parsed()) return cmd_train_lpnet(cfg);
    if (c_prune->parsed()) return cmd_prune(cfg);
    if (c_finetune->parsed()) return cmd_finetune(cfg);
    if (c_flops->parsed()) return cmd_flops(cfg, flops_checkpoint, flops_encoding);
    if (c_report->parsed()) return cmd_report(cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
