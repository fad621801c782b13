#pragma once

#include <string>
#include <vector>

#include "gatecrush/ops.hpp"
#include "gatecrush/tensor.hpp"

namespace gatecrush {

// Piecewise-polynomial surrogate for the hard gate activation.
// 0 below -1/2, 2x+2x^2+1/2 on [-1/2,0), 2x-2x^2+1/2 on [0,1/2), 1 above.
double surrogate_lambda(double x);

// Its derivative: 2+4x on [-1/2,0), 2-4x on [0,1/2), 0 otherwise.
double surrogate_grad(double x);

// Hard binary gate: (sign(x)+1)/2 with sign(0) = +1, so a zero score keeps
// the filter.
inline double binary_activation(double score) { return score >= 0.0 ? 1.0 : 0.0; }

std::vector<double> binary_activation(const std::vector<double>& scores);

enum class GateMode { Binary, Sigmoid };

// Forward flavor of the gate op. Hard is the training/eval path; Surrogate
// replaces the forward with lambda(x) so finite differences can see the
// Eq.-5 chain during gradient checks.
enum class GateForward { Hard, Surrogate };

// Gate activation node. Hard mode: forward binarizes (min_open highest-score
// gates forced open), backward multiplies by surrogate_grad(score). Sigmoid
// mode: g = 1/(1+exp(-k*s)), exact gradient.
template <typename T>
Tensor<T> gate_activation(const Tensor<T>& scores, GateMode mode, double sigmoid_k, int min_open,
                          GateForward fwd = GateForward::Hard);

// Per-gated-layer state: the scorer's own trainable weights plus the most
// recent scores/gates for inspection and export.
template <typename T>
struct GateState {
  int layer_id = -1;
  Tensor<T> weights;      // length C_{l-1}*K*K
  Tensor<T> bias;         // scalar, optional extension
  bool bias_enabled = true;
  GateMode mode = GateMode::Binary;
  double sigmoid_k = 4.0;
  int min_open = 1;

  std::vector<T> last_scores;
  std::vector<T> last_gates;

  static GateState init(int layer_id, int64_t feature_len, Rng& rng, bool bias_enabled);

  // W* -> scores -> gates, all on the tape. W* must be [C_l, D].
  Tensor<T> forward(const Tensor<T>& reshaped_weights, GateForward fwd = GateForward::Hard);
};

// [C_l, C_{l-1}, K, K] -> [C_l, C_{l-1}*K*K]; row i is filter i flattened
// input-channel-major, then kernel rows, then columns (row-major order).
template <typename T>
Tensor<T> reshape_weights(const Tensor<T>& w);

// s^r = W* Whats (+ bias); gradients reach both the scorer and the conv
// weights themselves.
template <typename T>
Tensor<T> filter_scores(const Tensor<T>& reshaped_weights, const GateState<T>& gate);

// c_l = sum_i g_i; a graph node so latency/FLOPs gradients flow to each gate.
template <typename T>
Tensor<T> layer_encoding(const Tensor<T>& gates);

extern template struct GateState<float>;
extern template struct GateState<double>;

}  // namespace gatecrush
