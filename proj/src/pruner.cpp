#include "gatecrush/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gatecrush/optim.hpp"

namespace gatecrush {

namespace {

double scheduled_lr(double base, int epoch, int total, bool enabled) {
  if (!enabled) return base;
  // divided by 10 at 50% and 75% of the total number of epochs
  if (epoch >= (3 * total) / 4) return base / 100.0;
  if (epoch >= total / 2) return base / 10.0;
  return base;
}

}  // namespace

template <typename T>
Tensor<T> efficiency_loss(const Tensor<T>& acc_loss, const Tensor<T>& eff, double alpha) {
  check(alpha >= 0.0, "efficiency_loss: alpha must be nonnegative");
  check(eff.numel() == 1 && acc_loss.numel() == 1, "efficiency_loss: scalar terms required");
  check(eff.item() >= T(0), "efficiency_loss: negative efficiency value");
  return add(acc_loss, scale(log1p_elem(eff), alpha));
}

template <typename T>
double l1_gate_regularizer(ConvNet<T>& model) {
  double acc = 0.0;
  for (auto& [row, bits] : model.current_gates())
    for (int b : bits) acc += b;
  return acc;
}

template <typename T>
double evaluate_accuracy(ConvNet<T>& model, const DatasetHandle& data, int batch_size) {
  BatchStream<T> stream(data, batch_size, /*augment=*/false, /*seed=*/0);
  stream.start_epoch(0);
  Batch<T> batch;
  int64_t correct = 0, total = 0;
  while (stream.next(batch)) {
    auto logits = model.forward(batch.images, /*train=*/false);
    const int64_t B = logits.dim(0), K = logits.dim(1);
    for (int64_t n = 0; n < B; ++n) {
      const T* row = logits.data().data() + n * K;
      int64_t best = 0;
      for (int64_t k = 1; k < K; ++k)
        if (row[k] > row[best]) best = k;
      correct += best == batch.labels[static_cast<size_t>(n)] ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(std::max<int64_t>(1, total));
}

template <typename T>
std::vector<EpochMetrics> train_baseline(ConvNet<T>& model, const DatasetHandle& train,
                                         const DatasetHandle& eval, const TrainConfig& cfg) {
  auto params = model.parameters(/*include_gates=*/false);
  Sgd<T> opt(params, cfg.lr, cfg.momentum, cfg.weight_decay);
  BatchStream<T> stream(train, cfg.batch_size, /*augment=*/true, cfg.seed);

  std::vector<EpochMetrics> history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(scheduled_lr(cfg.lr, epoch, cfg.epochs, cfg.lr_schedule));
    stream.start_epoch(epoch);
    Batch<T> batch;
    double loss_sum = 0.0;
    int batches = 0;
    while (stream.next(batch)) {
      auto logits = model.forward(batch.images, /*train=*/true);
      auto loss = cross_entropy(logits, batch.labels);
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += static_cast<double>(loss.item());
      ++batches;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / std::max(1, batches);
    m.acc_loss = m.train_loss;
    m.encoding = model.current_encoding();
    m.eval_accuracy = evaluate_accuracy(model, eval);
    history.push_back(std::move(m));
  }
  return history;
}

template <typename T>
std::vector<EpochMetrics> prune_train(ConvNet<T>& model, const EfficiencyEvaluator<T>& evaluator,
                                      const PruneConfig& cfg, const DatasetHandle& train,
                                      const DatasetHandle& eval) {
  cfg.validate();
  check(model.has_gates(), "prune_train: model has no gates attached");
  // gate scorer params train with the model's optimizer/LR, but without decay
  auto params = model.parameters(/*include_gates=*/true);
  Sgd<T> opt(params, cfg.train.lr, cfg.train.momentum, cfg.train.weight_decay);
  BatchStream<T> stream(train, cfg.train.batch_size, /*augment=*/true, cfg.train.seed);

  std::vector<EpochMetrics> history;
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    opt.set_lr(scheduled_lr(cfg.train.lr, epoch, cfg.train.epochs, cfg.train.lr_schedule));
    stream.start_epoch(epoch);
    Batch<T> batch;
    double loss_sum = 0.0, acc_sum = 0.0;
    int batches = 0;
    while (stream.next(batch)) {
      auto out = model.forward_gated(batch.images, /*train=*/true);
      auto ce = cross_entropy(out.logits, batch.labels);
      Tensor<T> loss = ce;
      if (!cfg.disable_efficiency_term) {
        auto eff = evaluator.eval(out.encoding);
        loss = efficiency_loss(ce, eff, cfg.alpha);
      }
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += static_cast<double>(loss.item());
      acc_sum += static_cast<double>(ce.item());
      ++batches;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / std::max(1, batches);
    m.acc_loss = acc_sum / std::max(1, batches);
    m.encoding = model.current_encoding();
    // gate legality: the forward guard forces min_open gates per layer
    for (auto& [row, bits] : model.current_gates()) {
      int open = 0;
      for (int b : bits) open += b;
      check(open >= cfg.min_open_gates, "prune_train: gate legality violated");
    }
    std::vector<double> counts(m.encoding.begin(), m.encoding.end());
    m.eff_value = evaluator.value(counts);
    m.predicted = evaluator.mode() == "flops" ? m.eff_value * 1e6 : m.eff_value;
    m.eval_accuracy = evaluate_accuracy(model, eval);
    history.push_back(std::move(m));
  }
  return history;
}

template <typename T>
PrunedArchitecture export_pruned(ConvNet<T>& gated, ConvNet<T>& out_model) {
  check(gated.has_gates(), "export_pruned: model has no gates");
  const auto& geom = gated.geometry();
  auto gates = gated.current_gates();

  PrunedArchitecture arch;
  arch.widths = gated.widths();
  std::map<int, std::vector<int>> kept_by_row;  // geometry row -> kept indices
  for (auto& [row, bits] : gates) {
    std::vector<int> kept;
    for (size_t i = 0; i < bits.size(); ++i)
      if (bits[i]) kept.push_back(static_cast<int>(i));
    check(!kept.empty(), "export_pruned: a gated layer has no open gates");
    const auto& r = geom.rows[static_cast<size_t>(row)];
    arch.widths[static_cast<size_t>(r.enc_index)] = static_cast<int>(kept.size());
    arch.kept[r.name] = kept;
    kept_by_row[row] = std::move(kept);
  }
  // block-output layers keep all indices (shortcut rule): ungated slots must
  // come through at their original widths
  for (const auto& r : geom.rows)
    if (r.enc_index >= 0 && !r.gated)
      check(arch.widths[static_cast<size_t>(r.enc_index)] ==
                gated.widths()[static_cast<size_t>(r.enc_index)],
            "export_pruned: shortcut-width consistency violated");

  out_model = ConvNet<T>(gated.spec(), arch.widths, /*init_seed=*/1);

  auto src_layers = gated.conv_layers();
  auto dst_layers = out_model.conv_layers();
  check(src_layers.size() == dst_layers.size(), "export_pruned: layer count mismatch");

  auto kept_for = [&](int row, int full) -> std::vector<int> {
    auto it = kept_by_row.find(row);
    if (it != kept_by_row.end()) return it->second;
    std::vector<int> all(static_cast<size_t>(full));
    for (int i = 0; i < full; ++i) all[static_cast<size_t>(i)] = i;
    return all;
  };

  for (size_t li = 0; li < src_layers.size(); ++li) {
    auto [row, src] = src_layers[li];
    auto [drow, dst] = dst_layers[li];
    check(row == drow, "export_pruned: layer order mismatch");
    const auto& r = geom.rows[static_cast<size_t>(row)];
    const int64_t O = src->w.dim(0), I = src->w.dim(1), KH = src->w.dim(2), KW = src->w.dim(3);
    auto kept_out = kept_for(row, static_cast<int>(O));
    auto kept_in = kept_for(r.in_row, static_cast<int>(I));
    check(static_cast<int64_t>(kept_out.size()) == dst->w.dim(0) &&
              static_cast<int64_t>(kept_in.size()) == dst->w.dim(1),
          "export_pruned: successor input-channel count mismatch");
    for (size_t oi = 0; oi < kept_out.size(); ++oi) {
      for (size_t ii = 0; ii < kept_in.size(); ++ii) {
        const T* s = src->w.data().data() + ((kept_out[oi] * I + kept_in[ii]) * KH) * KW;
        T* d = dst->w.data().data() +
               ((static_cast<int64_t>(oi) * static_cast<int64_t>(kept_in.size()) +
                 static_cast<int64_t>(ii)) *
                KH) *
                   KW;
        std::copy(s, s + KH * KW, d);
      }
      dst->gamma.data_vec()[oi] = src->gamma.data_vec()[static_cast<size_t>(kept_out[oi])];
      dst->beta.data_vec()[oi] = src->beta.data_vec()[static_cast<size_t>(kept_out[oi])];
      dst->run_mean.data_vec()[oi] = src->run_mean.data_vec()[static_cast<size_t>(kept_out[oi])];
      dst->run_var.data_vec()[oi] = src->run_var.data_vec()[static_cast<size_t>(kept_out[oi])];
    }
  }
  out_model.copy_classifier_from(gated);
  return arch;
}

void write_pruned_manifest(const std::string& path, const PrunedArchitecture& arch) {
  std::ofstream os(path, std::ios::trunc);
  check(os.is_open(), "pruned manifest: cannot open for write: " + path);
  os << "gatecrush-pruned v1\n";
  os << "widths:";
  for (int w : arch.widths) os << " " << w;
  os << "\n";
  for (const auto& [name, kept] : arch.kept) {
    os << name << ":";
    for (int k : kept) os << " " << k;
    os << "\n";
  }
}

template <typename T>
std::vector<EpochMetrics> finetune(ConvNet<T>& pruned, const DatasetHandle& train,
                                   const DatasetHandle& eval, const TrainConfig& cfg) {
  if (cfg.epochs == 0) {
    EpochMetrics m;
    m.epoch = -1;
    m.eval_accuracy = evaluate_accuracy(pruned, eval);
    return {m};
  }
  return train_baseline(pruned, train, eval, cfg);
}

void write_history_csv(const std::string& path, const std::vector<EpochMetrics>& history) {
  std::ofstream os(path, std::ios::trunc);
  check(os.is_open(), "history: cannot open for write: " + path);
  os << "epoch,train_loss,acc_loss,eff_value,predicted_latency_ms_or_flops,encoding,"
        "eval_accuracy\n";
  char buf[64];
  for (const auto& m : history) {
    os << m.epoch << ",";
    std::snprintf(buf, sizeof(buf), "%.9g", m.train_loss);
    os << buf << ",";
    std::snprintf(buf, sizeof(buf), "%.9g", m.acc_loss);
    os << buf << ",";
    std::snprintf(buf, sizeof(buf), "%.9g", m.eff_value);
    os << buf << ",";
    std::snprintf(buf, sizeof(buf), "%.9g", m.predicted);
    os << buf << ",";
    for (size_t i = 0; i < m.encoding.size(); ++i) {
      if (i) os << ";";
      os << m.encoding[i];
    }
    os << ",";
    std::snprintf(buf, sizeof(buf), "%.9g", m.eval_accuracy);
    os << buf << "\n";
  }
}

std::vector<EpochMetrics> read_history_csv(const std::string& path) {
  std::ifstream is(path);
  check(is.is_open(), "history: cannot open: " + path);
  std::string line;
  std::getline(is, line);  // header
  std::vector<EpochMetrics> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    EpochMetrics m;
    std::getline(ss, tok, ',');
    m.epoch = std::stoi(tok);
    std::getline(ss, tok, ',');
    m.train_loss = std::stod(tok);
    std::getline(ss, tok, ',');
    m.acc_loss = std::stod(tok);
    std::getline(ss, tok, ',');
    m.eff_value = std::stod(tok);
    std::getline(ss, tok, ',');
    m.predicted = std::stod(tok);
    std::getline(ss, tok, ',');
    std::stringstream enc(tok);
    std::string e;
    while (std::getline(enc, e, ';'))
      if (!e.empty()) m.encoding.push_back(std::stoi(e));
    std::getline(ss, tok, ',');
    m.eval_accuracy = std::stod(tok);
    out.push_back(std::move(m));
  }
  return out;
}

#define GATECRUSH_INSTANTIATE_PRUNER(T)                                                      \
  template Tensor<T> efficiency_loss(const Tensor<T>&, const Tensor<T>&, double);            \
  template double l1_gate_regularizer(ConvNet<T>&);                                          \
  template double evaluate_accuracy(ConvNet<T>&, const DatasetHandle&, int);                 \
  template std::vector<EpochMetrics> train_baseline(ConvNet<T>&, const DatasetHandle&,       \
                                                    const DatasetHandle&, const TrainConfig&); \
  template std::vector<EpochMetrics> prune_train(ConvNet<T>&, const EfficiencyEvaluator<T>&, \
                                                 const PruneConfig&, const DatasetHandle&,   \
                                                 const DatasetHandle&);                      \
  template PrunedArchitecture export_pruned(ConvNet<T>&, ConvNet<T>&);                       \
  template std::vector<EpochMetrics> finetune(ConvNet<T>&, const DatasetHandle&,             \
                                              const DatasetHandle&, const TrainConfig&);

GATECRUSH_INSTANTIATE_PRUNER(float)
GATECRUSH_INSTANTIATE_PRUNER(double)

}  // namespace gatecrush
