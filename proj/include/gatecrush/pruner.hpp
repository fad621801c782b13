#pragma once

#include <map>
#include <string>
#include <vector>

#include "gatecrush/data.hpp"
#include "gatecrush/efficiency.hpp"
#include "gatecrush/model.hpp"

namespace gatecrush {

struct TrainConfig {
  int epochs = 20;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 128;
  bool lr_schedule = true;  // divide by 10 at 50% and 75% of epochs
  uint64_t seed = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double acc_loss = 0.0;
  double eff_value = 0.0;  // pinned units: ms (latency), MFLOPs (flops), gates (l1)
  double predicted = 0.0;  // raw: ms or absolute FLOPs or gate count
  std::vector<int> encoding;
  double eval_accuracy = 0.0;
};

struct PruneConfig {
  double alpha = 1.5;
  std::string mode = "flops";  // latency | flops | l1_gates
  TrainConfig train;
  int min_open_gates = 1;
  bool gate_bias = true;   // paper-faithful flag: disable to drop the bias extension
  double sigmoid_k = 0.0;  // > 0 switches gates to the scaled-sigmoid ablation
  // drops the efficiency term from the graph entirely (loss-decomposition check)
  bool disable_efficiency_term = false;

  void validate() const {
    check(alpha >= 0.0, "PruneConfig: alpha must be nonnegative");
    check(train.epochs >= 1, "PruneConfig: epochs must be >= 1");
    check(min_open_gates >= 1, "PruneConfig: min_open_gates must be >= 1");
  }
};

// l = acc + alpha*log(1 + eff); both terms stay in one graph so gradients
// reach the gates through both paths.
template <typename T>
Tensor<T> efficiency_loss(const Tensor<T>& acc_loss, const Tensor<T>& eff, double alpha);

// Sum of open gates over all gated layers (equals the L1 norm since gates are
// nonnegative); the evaluator term of the l1_gates ablation.
template <typename T>
double l1_gate_regularizer(ConvNet<T>& model);

template <typename T>
double evaluate_accuracy(ConvNet<T>& model, const DatasetHandle& data, int batch_size = 256);

template <typename T>
std::vector<EpochMetrics> train_baseline(ConvNet<T>& model, const DatasetHandle& train,
                                         const DatasetHandle& eval, const TrainConfig& cfg);

// Stage two: efficiency-aware gated training. Gates must be attached; the
// evaluator is opaque (latency / flops / l1 swap freely).
template <typename T>
std::vector<EpochMetrics> prune_train(ConvNet<T>& model, const EfficiencyEvaluator<T>& evaluator,
                                      const PruneConfig& cfg, const DatasetHandle& train,
                                      const DatasetHandle& eval);

struct PrunedArchitecture {
  std::vector<int> widths;                        // per encoding slot
  std::map<std::string, std::vector<int>> kept;   // gated layer name -> kept filter indices
};

// Physically removes gated-off filters: slices the gated conv's filters and
// BN params plus the successor's input channels. The result carries no gate
// machinery and matches the gated model's outputs.
template <typename T>
PrunedArchitecture export_pruned(ConvNet<T>& gated, ConvNet<T>& out_model);

void write_pruned_manifest(const std::string& path, const PrunedArchitecture& arch);

// Stage three; starts from the exported sliced weights.
template <typename T>
std::vector<EpochMetrics> finetune(ConvNet<T>& pruned, const DatasetHandle& train,
                                   const DatasetHandle& eval, const TrainConfig& cfg);

void write_history_csv(const std::string& path, const std::vector<EpochMetrics>& history);
std::vector<EpochMetrics> read_history_csv(const std::string& path);

}  // namespace gatecrush
