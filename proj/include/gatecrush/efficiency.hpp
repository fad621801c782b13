#pragma once

#include <memory>
#include <string>
#include <vector>

#include "gatecrush/arch.hpp"
#include "gatecrush/ops.hpp"
#include "gatecrush/optim.hpp"

namespace gatecrush {

struct LatencySample {
  std::vector<int> encoding;
  double latency_ms = 0.0;
  double iqr_ms = 0.0;
};

// F_l = M_h*M_w*K_h*K_w*c_{l-1}*c_l for one conv row.
double flops_layer(const ConvGeom& row, double c_in, double c_out);

// Sum over conv rows only (classifier/BN excluded; projection shortcuts are
// convs and count, with both widths pinned by the shortcut rule). c_0 = 3.
// One multiply-accumulate counts as one FLOP.
double flops_network(const GeometryTable& geom, const std::vector<double>& counts);
int64_t flops_network_exact(const GeometryTable& geom, const std::vector<int>& counts);
std::vector<std::pair<std::string, int64_t>> flops_breakdown(const GeometryTable& geom,
                                                             const std::vector<int>& counts);

// Differentiable FLOPs node; output is FLOPs * unit_scale.
template <typename T>
Tensor<T> flops_penalty(const GeometryTable& geom, const Tensor<T>& encoding, double unit_scale);

// Per-slot sampling grid: multiples of max(1, C/32) within [ceil(0.1*C), C].
std::vector<int> encoding_grid(const ConvGeom& row);
std::vector<std::vector<int>> sample_encodings(const GeometryTable& geom, int n, uint64_t seed);

double block_latency_sum(const std::vector<double>& block_predictions);

// Feature view of a subset of encoding slots, for per-block LPNets.
GeometryTable sub_geometry(const GeometryTable& geom, const std::vector<int>& slots);

struct LpNetConfig {
  int hidden = 64;
  int epochs = 300;
  double lr = 1e-3;
  int batch = 256;
  double train_fraction = 0.8;
  uint64_t seed = 0;
};

// Three fully-connected layers, rectifier after the first two. Inputs are
// c_l/C_l plus constant per-slot geometry features; targets are normalized by
// the training set's mean latency.
template <typename T>
class LpNet {
 public:
  explicit LpNet(const GeometryTable& geom, uint64_t init_seed = 0, int hidden = 64);

  Tensor<T> forward(const Tensor<T>& encoding) const;  // differentiable in the encoding
  double predict(const std::vector<double>& counts) const;
  double predict(const std::vector<int>& counts) const;

  std::vector<NamedParam<T>> parameters();
  void save(const std::string& path) const;
  static LpNet load(const std::string& path, const GeometryTable& geom);

  int64_t feature_length() const { return feat_len_; }
  void set_target_scale(double mean_latency) { target_scale_ = mean_latency; }
  double target_scale() const { return target_scale_; }

 private:
  int64_t slots_;
  int64_t feat_len_;
  Tensor<T> inv_cmax_;     // 1/C_l per slot
  Tensor<T> geom_feats_;   // constant features appended after the width block
  Tensor<T> w1_, b1_, w2_, b2_, w3_, b3_;
  double target_scale_ = 1.0;

  Tensor<T> features(const Tensor<T>& encoding) const;
};

template <typename T>
struct LpNetTrainResult {
  LpNet<T> net;
  double test_rel_error = 0.0;
  int train_count = 0;
  int test_count = 0;
};

// Offline MSE training with Adam on an 80/20 split; returns held-out mean
// relative error. Errors on <100 samples or an all-identical encoding set.
template <typename T>
LpNetTrainResult<T> lpnet_train(const GeometryTable& geom, const std::vector<LatencySample>& samples,
                                const LpNetConfig& cfg);

// Switchable efficiency term consumed by the pruning loop: the loop sees only
// this surface, so latency/FLOPs/L1 swap without touching any other code path.
template <typename T>
class EfficiencyEvaluator {
 public:
  virtual ~EfficiencyEvaluator() = default;
  virtual Tensor<T> eval(const Tensor<T>& encoding) const = 0;
  virtual double value(const std::vector<double>& counts) const = 0;
  virtual std::string mode() const = 0;
};

// FLOPs in millions.
template <typename T>
class FlopsEvaluator : public EfficiencyEvaluator<T> {
 public:
  explicit FlopsEvaluator(GeometryTable geom) : geom_(std::move(geom)) {}
  Tensor<T> eval(const Tensor<T>& encoding) const override {
    return flops_penalty(geom_, encoding, 1e-6);
  }
  double value(const std::vector<double>& counts) const override {
    return flops_network(geom_, counts) * 1e-6;
  }
  std::string mode() const override { return "flops"; }

 private:
  GeometryTable geom_;
};

// Predicted latency in milliseconds.
template <typename T>
class LatencyEvaluator : public EfficiencyEvaluator<T> {
 public:
  explicit LatencyEvaluator(LpNet<T> net) : net_(std::move(net)) {}
  Tensor<T> eval(const Tensor<T>& encoding) const override { return net_.forward(encoding); }
  double value(const std::vector<double>& counts) const override { return net_.predict(counts); }
  std::string mode() const override { return "latency"; }

 private:
  LpNet<T> net_;
};

// Sum of open gates over gated slots (L1 on nonnegative gates).
template <typename T>
class L1GatesEvaluator : public EfficiencyEvaluator<T> {
 public:
  explicit L1GatesEvaluator(const GeometryTable& geom) {
    mask_.assign(static_cast<size_t>(geom.encoding_length), T(0));
    for (int s : geom.gated_encoding_slots()) mask_[static_cast<size_t>(s)] = T(1);
  }
  Tensor<T> eval(const Tensor<T>& encoding) const override {
    auto mask = Tensor<T>::from_vector(std::vector<T>(mask_),
                                       {static_cast<int64_t>(mask_.size())});
    return sum(mul(encoding, mask));
  }
  double value(const std::vector<double>& counts) const override {
    double acc = 0.0;
    for (size_t i = 0; i < counts.size(); ++i) acc += counts[i] * static_cast<double>(mask_[i]);
    return acc;
  }
  std::string mode() const override { return "l1"; }

 private:
  std::vector<T> mask_;
};

extern template class LpNet<float>;
extern template class LpNet<double>;

}  // namespace gatecrush
