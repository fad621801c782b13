#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gatecrush/arch.hpp"
#include "gatecrush/checkpoint.hpp"
#include "gatecrush/ops.hpp"
#include "gatecrush/wgates.hpp"

namespace gatecrush {

template <typename T>
struct ConvBnLayer {
  int geom_row = -1;
  Tensor<T> w;
  Tensor<T> gamma, beta, run_mean, run_var;
  int stride = 1;
  int pad = 1;
};

template <typename T>
struct GatedForwardResult {
  Tensor<T> logits;
  // one entry per encoding slot: gated slots carry the gate tensor
  std::vector<Tensor<T>> slot_counts;  // scalar node per slot (popcount or constant)
  Tensor<T> encoding;                  // packed [L]
  std::map<int, Tensor<T>> gates_by_slot;
};

// Conv-BN-ReLU network for both plain and basic-block-residual architectures,
// with optional W-Gates on the geometry's gated rows. Widths are per encoding
// slot so decoded (narrowed) and exported models reuse the same machinery.
template <typename T>
class ConvNet {
 public:
  ConvNet(const ArchitectureSpec& spec, std::vector<int> widths, uint64_t init_seed);
  ConvNet(const ArchitectureSpec& spec, uint64_t init_seed);

  Tensor<T> forward(const Tensor<T>& x, bool train);
  GatedForwardResult<T> forward_gated(const Tensor<T>& x, bool train,
                                      GateForward fwd = GateForward::Hard);

  void attach_gates(Rng& rng, bool bias_enabled = true, GateMode mode = GateMode::Binary,
                    double sigmoid_k = 4.0, int min_open = 1);
  // explicit placement; rejects rows the shortcut rule forbids
  void attach_gates_at(const std::vector<int>& geom_rows, Rng& rng, bool bias_enabled = true,
                       GateMode mode = GateMode::Binary, double sigmoid_k = 4.0,
                       int min_open = 1);
  bool has_gates() const { return !gates_.empty(); }

  std::vector<NamedParam<T>> parameters(bool include_gates = true);
  std::vector<NamedParam<T>> state();  // parameters + running stats

  // hard gates recomputed from current weights, no tape
  std::map<int, std::vector<int>> current_gates();
  std::vector<int> current_encoding();

  // forces a gate pattern on a gated row (testing/ablation); pattern values
  // must be 0/1 and respect min_open
  void set_gate_override(int geom_row, std::vector<T> pattern);
  void clear_gate_overrides();

  const ArchitectureSpec& spec() const { return spec_; }
  const GeometryTable& geometry() const { return geom_; }
  const std::vector<int>& widths() const { return widths_; }
  std::map<int, GateState<T>>& gates() { return gates_; }

  int64_t parameter_count();
  int width_of_row(int geom_row) const;

  // (geometry row, layer) pairs in forward order; export slices through this
  std::vector<std::pair<int, ConvBnLayer<T>*>> conv_layers();
  void copy_classifier_from(ConvNet<T>& other);

 private:
  ArchitectureSpec spec_;
  GeometryTable geom_;
  std::vector<int> widths_;  // per encoding slot

  // plain path
  std::vector<ConvBnLayer<T>> plain_convs_;
  std::vector<bool> pool_after_;

  struct Block {
    ConvBnLayer<T> conv1, conv2;
    std::optional<ConvBnLayer<T>> proj;
  };
  ConvBnLayer<T> stem_;
  std::vector<Block> blocks_;

  Tensor<T> fc_w_, fc_b_;

  std::map<int, GateState<T>> gates_;            // keyed by geometry row
  std::map<int, std::vector<T>> gate_overrides_;  // keyed by geometry row

  ConvBnLayer<T> make_conv(const ConvGeom& geom, int in_ch, int out_ch, Rng& rng);
  Tensor<T> conv_bn_relu(ConvBnLayer<T>& l, const Tensor<T>& x, bool train,
                         bool apply_relu = true);
};

extern template class ConvNet<float>;
extern template class ConvNet<double>;

}  // namespace gatecrush
