#include "gatecrush/wgates.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gatecrush {

double surrogate_lambda(double x) {
  if (x < -0.5) return 0.0;
  if (x < 0.0) return 2.0 * x + 2.0 * x * x + 0.5;
  if (x < 0.5) return 2.0 * x - 2.0 * x * x + 0.5;
  return 1.0;
}

double surrogate_grad(double x) {
  if (x >= -0.5 && x < 0.0) return 2.0 + 4.0 * x;
  if (x >= 0.0 && x < 0.5) return 2.0 - 4.0 * x;
  return 0.0;
}

std::vector<double> binary_activation(const std::vector<double>& scores) {
  std::vector<double> out(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) {
    check(std::isfinite(scores[i]), "binary_activation: NaN score");
    out[i] = binary_activation(scores[i]);
  }
  return out;
}

template <typename T>
Tensor<T> gate_activation(const Tensor<T>& scores, GateMode mode, double sigmoid_k, int min_open,
                          GateForward fwd) {
  check(scores.rank() == 1, "gate_activation: rank-1 scores required");
  const int64_t C = scores.dim(0);
  check(min_open >= 0 && min_open <= C, "gate_activation: invalid min_open");
  for (const T& v : scores.data_vec())
    check(std::isfinite(static_cast<double>(v)), "gate_activation: NaN score");
  auto out = detail::make_op<T>({C}, "gate_activation", {scores});
  const auto& s = scores.data_vec();
  auto& g = out.data_vec();

  if (mode == GateMode::Sigmoid) {
    check(sigmoid_k > 0.0, "gate_activation: sigmoid scale must be positive");
    for (int64_t i = 0; i < C; ++i)
      g[static_cast<size_t>(i)] =
          T(1) / (T(1) + static_cast<T>(std::exp(-sigmoid_k * static_cast<double>(s[i]))));
  } else if (fwd == GateForward::Surrogate) {
    for (int64_t i = 0; i < C; ++i)
      g[static_cast<size_t>(i)] = static_cast<T>(surrogate_lambda(static_cast<double>(s[i])));
  } else {
    for (int64_t i = 0; i < C; ++i)
      g[static_cast<size_t>(i)] = s[static_cast<size_t>(i)] >= T(0) ? T(1) : T(0);
    // min-open guard: if a layer would close entirely, force the top scores
    int64_t open = 0;
    for (int64_t i = 0; i < C; ++i) open += g[static_cast<size_t>(i)] > T(0) ? 1 : 0;
    if (open < min_open) {
      std::vector<int64_t> idx(static_cast<size_t>(C));
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(),
                       [&](int64_t a, int64_t b) { return s[a] > s[b]; });
      for (int64_t r = 0; r < min_open; ++r) g[static_cast<size_t>(idx[r])] = T(1);
    }
  }

  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* si = scores.impl().get();
    out.impl()->grad_fn = [oi, si, mode, sigmoid_k] {
      si->ensure_grad();
      if (mode == GateMode::Sigmoid) {
        for (size_t i = 0; i < oi->grad.size(); ++i) {
          const double gvi = static_cast<double>(oi->data[i]);
          si->grad[i] += oi->grad[i] * static_cast<T>(sigmoid_k * gvi * (1.0 - gvi));
        }
      } else {
        for (size_t i = 0; i < oi->grad.size(); ++i)
          si->grad[i] += oi->grad[i] * static_cast<T>(surrogate_grad(double(si->data[i])));
      }
    };
  }
  check_finite(*out.impl(), "forward");
  return out;
}

template <typename T>
GateState<T> GateState<T>::init(int layer_id, int64_t feature_len, Rng& rng, bool bias_enabled) {
  GateState<T> gs;
  gs.layer_id = layer_id;
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(feature_len)));
  gs.weights = Tensor<T>::rand_uniform({feature_len}, rng, -bound, bound, true);
  gs.bias = Tensor<T>::from_vector({static_cast<T>(0.1)}, {1}, true);
  gs.bias_enabled = bias_enabled;
  if (!bias_enabled) {
    gs.bias.data_vec()[0] = T(0);
    gs.bias.set_requires_grad(false);
  }
  return gs;
}

template <typename T>
Tensor<T> reshape_weights(const Tensor<T>& w) {
  check(w.rank() == 4, "reshape_weights: 4-D conv weights required");
  return reshape(w, {w.dim(0), w.dim(1) * w.dim(2) * w.dim(3)});
}

template <typename T>
Tensor<T> filter_scores(const Tensor<T>& reshaped_weights, const GateState<T>& gate) {
  check(reshaped_weights.rank() == 2, "filter_scores: [C,D] weights required");
  check(reshaped_weights.dim(1) == gate.weights.dim(0),
        "filter_scores: feature length does not match gate weights");
  auto s = matvec(reshaped_weights, gate.weights);
  if (gate.bias_enabled) s = broadcast_add_scalar(s, gate.bias);
  return s;
}

template <typename T>
Tensor<T> GateState<T>::forward(const Tensor<T>& reshaped_weights, GateForward fwd) {
  auto s = filter_scores(reshaped_weights, *this);
  auto g = gate_activation(s, mode, sigmoid_k, min_open, fwd);
  last_scores.assign(s.data_vec().begin(), s.data_vec().end());
  last_gates.assign(g.data_vec().begin(), g.data_vec().end());
  return g;
}

template <typename T>
Tensor<T> layer_encoding(const Tensor<T>& gates) {
  return sum(gates);
}

#define GATECRUSH_INSTANTIATE_WGATES(T)                                                       \
  template Tensor<T> gate_activation(const Tensor<T>&, GateMode, double, int, GateForward);   \
  template struct GateState<T>;                                                               \
  template Tensor<T> reshape_weights(const Tensor<T>&);                                       \
  template Tensor<T> filter_scores(const Tensor<T>&, const GateState<T>&);                    \
  template Tensor<T> layer_encoding(const Tensor<T>&);

GATECRUSH_INSTANTIATE_WGATES(float)
GATECRUSH_INSTANTIATE_WGATES(double)

}  // namespace gatecrush
