#pragma once

#include <string>

#include <json.hpp>

#include "gatecrush/arch.hpp"
#include "gatecrush/data.hpp"
#include "gatecrush/latency.hpp"
#include "gatecrush/pruner.hpp"

namespace gatecrush {

// Tree-structured run configuration. Unknown keys are rejected; the resolved
// (defaults-merged, flag-overridden) form is written beside every command's
// outputs and can be re-run as-is.
struct RunConfig {
  uint64_t seed = 0;
  std::string precision = "f32";  // f32 | f64
  std::string out = "run";

  struct ArchSection {
    std::string preset = "resnet8";
    int input_size = 32;
    int num_classes = 10;
  } architecture;

  struct DatasetSection {
    std::string source = "synthetic";  // synthetic | cifar10
    std::string path;                  // cifar10 directory when source=cifar10
    int train_count = 2000;
    int eval_count = 500;
    int classes = 10;
    int resolution = 32;
    double noise = 0.25;
    double color_jitter = 0.08;
    uint64_t seed = 1;
  } dataset;

  struct StageSection {
    int epochs = 20;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int batch_size = 128;
    bool lr_schedule = true;
  };
  StageSection baseline;
  StageSection finetune_stage;

  struct PruneSection {
    double alpha = 1.5;
    std::string efficiency = "flops";  // latency | flops | l1
    int epochs = 10;
    double lr = 1e-3;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int batch_size = 128;
    bool lr_schedule = true;
    int min_open_gates = 1;
    bool gate_bias = true;
    double sigmoid_k = 0.0;  // 0 = binary gates; >0 = scaled-sigmoid ablation
  } prune;

  struct LpNetSection {
    int samples = 5000;
    int epochs = 300;
    double lr = 1e-3;
    int batch_size = 256;
    int hidden = 64;
    double split = 0.8;
    double max_rel_error = 0.02;
  } lpnet;

  struct LatencySection {
    int batch_size = 16;
    int warmup_runs = 5;
    int timed_runs = 30;
    int samples = 1000;
    double stability_iqr_frac = 0.15;
    bool paper_parity = false;  // restores the paper's batch of 100
  } latency;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);
  nlohmann::json to_json() const;
  void write_resolved(const std::string& path) const;

  ArchitectureSpec make_arch() const;
  // (train, eval) pair per the dataset section
  std::pair<DatasetHandle, DatasetHandle> make_datasets() const;
  TrainConfig baseline_train_config() const;
  TrainConfig finetune_train_config() const;
  PruneConfig prune_config() const;
  TimingConfig timing_config() const;

  // default artifact paths under `out`
  std::string baseline_ckpt() const { return out + "/baseline.ckpt"; }
  std::string baseline_metrics() const { return out + "/baseline_metrics.csv"; }
  std::string latency_dataset_path() const { return out + "/latency_samples.txt"; }
  std::string lpnet_ckpt() const { return out + "/lpnet.ckpt"; }
  std::string lpnet_report() const { return out + "/lpnet_report.txt"; }
  std::string gated_ckpt() const { return out + "/gated.ckpt"; }
  std::string history_csv() const { return out + "/history.csv"; }
  std::string pruned_ckpt() const { return out + "/pruned.ckpt"; }
  std::string pruned_manifest() const { return out + "/pruned_manifest.txt"; }
  std::string final_ckpt() const { return out + "/final.ckpt"; }
  std::string finetune_metrics() const { return out + "/finetune_metrics.csv"; }
};

}  // namespace gatecrush
