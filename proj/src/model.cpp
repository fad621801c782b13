#include "gatecrush/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gatecrush {

template <typename T>
ConvNet<T>::ConvNet(const ArchitectureSpec& spec, uint64_t init_seed)
    : ConvNet(spec, spec.geometry().full_width_encoding(), init_seed) {}

template <typename T>
ConvNet<T>::ConvNet(const ArchitectureSpec& spec, std::vector<int> widths, uint64_t init_seed)
    : spec_(spec), geom_(spec.geometry()), widths_(std::move(widths)) {
  check(static_cast<int>(widths_.size()) == geom_.encoding_length,
        "ConvNet: widths length does not match encoding length");
  for (const auto& r : geom_.rows) {
    if (r.enc_index < 0) continue;
    const int w = widths_[static_cast<size_t>(r.enc_index)];
    check(w >= 1, "decode_network: zero-width layer '" + r.name + "' is undecodable");
    check(w <= r.out_max, "decode_network: width exceeds baseline for '" + r.name + "'");
  }
  Rng rng(init_seed);

  auto width_at = [&](int row) -> int {
    if (row < 0) return spec_.input_channels;
    const auto& r = geom_.rows[static_cast<size_t>(row)];
    return r.enc_index >= 0 ? widths_[static_cast<size_t>(r.enc_index)] : r.out_max;
  };

  if (spec_.kind == ArchKind::Plain) {
    for (size_t ri = 0; ri < geom_.rows.size(); ++ri) {
      const auto& r = geom_.rows[ri];
      if (r.kind != LayerKind::Conv) continue;
      plain_convs_.push_back(make_conv(r, width_at(r.in_row), width_at(static_cast<int>(ri)), rng));
      pool_after_.push_back(r.downsample);
    }
    const int feat = width_at(geom_.rows.back().in_row);
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(feat)));
    fc_w_ = Tensor<T>::rand_uniform({feat, spec_.num_classes}, rng, -bound, bound, true);
    fc_b_ = Tensor<T>::zeros({spec_.num_classes}, true);
  } else {
    for (size_t ri = 0; ri < geom_.rows.size(); ++ri) {
      const auto& r = geom_.rows[ri];
      if (r.name == "stem") {
        stem_ = make_conv(r, spec_.input_channels, width_at(static_cast<int>(ri)), rng);
      } else if (r.kind == LayerKind::Conv && r.name.find(".conv1") != std::string::npos) {
        Block b;
        b.conv1 = make_conv(r, width_at(r.in_row), width_at(static_cast<int>(ri)), rng);
        const auto& r2 = geom_.rows[ri + 1];
        b.conv2 = make_conv(r2, width_at(r2.in_row), width_at(static_cast<int>(ri + 1)), rng);
        if (ri + 2 < geom_.rows.size() && geom_.rows[ri + 2].kind == LayerKind::Projection) {
          const auto& rp = geom_.rows[ri + 2];
          b.proj = make_conv(rp, width_at(rp.in_row), width_at(static_cast<int>(ri + 1)), rng);
        }
        blocks_.push_back(std::move(b));
      }
    }
    const int feat = width_at(geom_.rows.back().in_row);
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(feat)));
    fc_w_ = Tensor<T>::rand_uniform({feat, spec_.num_classes}, rng, -bound, bound, true);
    fc_b_ = Tensor<T>::zeros({spec_.num_classes}, true);
  }
}

template <typename T>
ConvBnLayer<T> ConvNet<T>::make_conv(const ConvGeom& geom, int in_ch, int out_ch, Rng& rng) {
  ConvBnLayer<T> l;
  l.geom_row = -1;
  for (size_t ri = 0; ri < geom_.rows.size(); ++ri)
    if (geom_.rows[ri].name == geom.name) l.geom_row = static_cast<int>(ri);
  const int k = geom.kernel;
  const double fan_in = static_cast<double>(in_ch) * k * k;
  const T std = static_cast<T>(std::sqrt(2.0 / fan_in));
  l.w = Tensor<T>::randn({out_ch, in_ch, k, k}, rng, std, true);
  l.gamma = Tensor<T>::ones({out_ch}, true);
  l.beta = Tensor<T>::zeros({out_ch}, true);
  l.run_mean = Tensor<T>::zeros({out_ch}, false);
  l.run_var = Tensor<T>::ones({out_ch}, false);
  l.stride = geom.stride;
  l.pad = k == 1 ? 0 : 1;
  return l;
}

template <typename T>
Tensor<T> ConvNet<T>::conv_bn_relu(ConvBnLayer<T>& l, const Tensor<T>& x, bool train,
                                   bool apply_relu) {
  auto y = conv2d(x, l.w, l.stride, l.pad);
  y = batchnorm2d(y, l.gamma, l.beta, l.run_mean, l.run_var, train);
  if (apply_relu) y = relu(y);
  return y;
}

template <typename T>
Tensor<T> ConvNet<T>::forward(const Tensor<T>& x, bool train) {
  return forward_gated(x, train).logits;
}

template <typename T>
GatedForwardResult<T> ConvNet<T>::forward_gated(const Tensor<T>& x, bool train, GateForward fwd) {
  GatedForwardResult<T> out;
  out.slot_counts.assign(static_cast<size_t>(geom_.encoding_length), Tensor<T>());

  auto record_constant_slot = [&](int enc_index) {
    if (enc_index < 0) return;
    out.slot_counts[static_cast<size_t>(enc_index)] =
        Tensor<T>::scalar(static_cast<T>(widths_[static_cast<size_t>(enc_index)]));
  };

  auto gate_channel = [&](ConvBnLayer<T>& l, Tensor<T> y) -> Tensor<T> {
    const int row = l.geom_row;
    const auto& geom_row = geom_.rows[static_cast<size_t>(row)];
    auto it = gates_.find(row);
    if (it == gates_.end()) {
      record_constant_slot(geom_row.enc_index);
      return y;
    }
    Tensor<T> g;
    auto ov = gate_overrides_.find(row);
    if (ov != gate_overrides_.end()) {
      g = Tensor<T>::from_vector(std::vector<T>(ov->second),
                                 {static_cast<int64_t>(ov->second.size())}, false);
      it->second.last_gates = ov->second;
      it->second.last_scores.assign(ov->second.size(), T(0));
    } else {
      g = it->second.forward(reshape_weights(l.w), fwd);
    }
    out.gates_by_slot[geom_row.enc_index] = g;
    out.slot_counts[static_cast<size_t>(geom_row.enc_index)] = layer_encoding(g);
    return channel_scale(y, g);
  };

  Tensor<T> h;
  if (spec_.kind == ArchKind::Plain) {
    h = x;
    for (size_t i = 0; i < plain_convs_.size(); ++i) {
      h = conv_bn_relu(plain_convs_[i], h, train);
      h = gate_channel(plain_convs_[i], h);
      if (pool_after_[i]) h = maxpool2d(h, 2, 2);
    }
  } else {
    h = conv_bn_relu(stem_, x, train);
    h = gate_channel(stem_, h);
    for (auto& b : blocks_) {
      Tensor<T> identity = h;
      auto y = conv_bn_relu(b.conv1, h, train);
      y = gate_channel(b.conv1, y);
      y = conv_bn_relu(b.conv2, y, train, /*apply_relu=*/false);
      Tensor<T> shortcut =
          b.proj ? conv_bn_relu(*b.proj, identity, train, /*apply_relu=*/false) : identity;
      h = relu(add(y, shortcut));
      record_constant_slot(geom_.rows[static_cast<size_t>(b.conv2.geom_row)].enc_index);
    }
  }

  h = global_avgpool(h);
  out.logits = linear(h, fc_w_, fc_b_);
  std::vector<Tensor<T>> scalars(out.slot_counts.begin(), out.slot_counts.end());
  out.encoding = pack(scalars);
  return out;
}

template <typename T>
void ConvNet<T>::attach_gates(Rng& rng, bool bias_enabled, GateMode mode, double sigmoid_k,
                              int min_open) {
  std::vector<int> rows;
  for (size_t ri = 0; ri < geom_.rows.size(); ++ri)
    if (geom_.rows[ri].gated) rows.push_back(static_cast<int>(ri));
  attach_gates_at(rows, rng, bias_enabled, mode, sigmoid_k, min_open);
}

template <typename T>
void ConvNet<T>::attach_gates_at(const std::vector<int>& geom_rows, Rng& rng, bool bias_enabled,
                                 GateMode mode, double sigmoid_k, int min_open) {
  gates_.clear();
  for (int ri : geom_rows) {
    check(ri >= 0 && ri < static_cast<int>(geom_.rows.size()), "attach_gates: bad geometry row");
    const auto& r = geom_.rows[static_cast<size_t>(ri)];
    check(r.gated, "attach_gates: layer '" + r.name +
                       "' cannot be gated (shortcut rule / stem / last layer)");
    // feature length follows the current (possibly narrowed) input width
    int in_ch = spec_.input_channels;
    if (r.in_row >= 0) {
      const auto& rin = geom_.rows[static_cast<size_t>(r.in_row)];
      in_ch = rin.enc_index >= 0 ? widths_[static_cast<size_t>(rin.enc_index)] : rin.out_max;
    }
    const int64_t feat = static_cast<int64_t>(in_ch) * r.kernel * r.kernel;
    auto gs = GateState<T>::init(ri, feat, rng, bias_enabled);
    gs.mode = mode;
    gs.sigmoid_k = sigmoid_k;
    gs.min_open = min_open;
    if (bias_enabled) {
      // raise the bias when +0.1 alone would not open every gate at the
      // current weights; narrow scorers have score spread well above 0.1
      ConvBnLayer<T>* layer = nullptr;
      for (auto& [lrow, l] : conv_layers())
        if (lrow == ri) layer = l;
      check(layer != nullptr, "attach_gates: no layer for gated row");
      const int64_t C = layer->w.dim(0);
      T min_score = std::numeric_limits<T>::max();
      for (int64_t i = 0; i < C; ++i) {
        T s = T(0);
        const T* wrow = layer->w.data().data() + i * feat;
        for (int64_t d = 0; d < feat; ++d) s += wrow[d] * gs.weights.data()[static_cast<size_t>(d)];
        min_score = std::min(min_score, s);
      }
      if (min_score + static_cast<T>(0.1) <= T(0))
        gs.bias.data_vec()[0] = static_cast<T>(0.1) - min_score;
    }
    gates_.emplace(ri, std::move(gs));
  }
}

template <typename T>
std::vector<NamedParam<T>> ConvNet<T>::parameters(bool include_gates) {
  std::vector<NamedParam<T>> out;
  auto add_conv = [&](ConvBnLayer<T>& l) {
    const std::string base = geom_.rows[static_cast<size_t>(l.geom_row)].name;
    out.push_back({base + ".weight", l.w, true});
    out.push_back({base + ".bn.gamma", l.gamma, true});
    out.push_back({base + ".bn.beta", l.beta, true});
  };
  if (spec_.kind == ArchKind::Plain) {
    for (auto& l : plain_convs_) add_conv(l);
  } else {
    add_conv(stem_);
    for (auto& b : blocks_) {
      add_conv(b.conv1);
      add_conv(b.conv2);
      if (b.proj) add_conv(*b.proj);
    }
  }
  out.push_back({"fc.weight", fc_w_, true});
  out.push_back({"fc.bias", fc_b_, true});
  if (include_gates) {
    for (auto& [row, gs] : gates_) {
      const std::string base = "gate." + geom_.rows[static_cast<size_t>(row)].name;
      out.push_back({base + ".weights", gs.weights, false});
      if (gs.bias_enabled) out.push_back({base + ".bias", gs.bias, false});
    }
  }
  return out;
}

template <typename T>
std::vector<NamedParam<T>> ConvNet<T>::state() {
  auto out = parameters(true);
  auto add_stats = [&](ConvBnLayer<T>& l) {
    const std::string base = geom_.rows[static_cast<size_t>(l.geom_row)].name;
    out.push_back({base + ".bn.running_mean", l.run_mean, false});
    out.push_back({base + ".bn.running_var", l.run_var, false});
  };
  if (spec_.kind == ArchKind::Plain) {
    for (auto& l : plain_convs_) add_stats(l);
  } else {
    add_stats(stem_);
    for (auto& b : blocks_) {
      add_stats(b.conv1);
      add_stats(b.conv2);
      if (b.proj) add_stats(*b.proj);
    }
  }
  return out;
}

template <typename T>
std::map<int, std::vector<int>> ConvNet<T>::current_gates() {
  std::map<int, std::vector<int>> out;
  for (auto& [row, gs] : gates_) {
    std::vector<int> bits;
    auto ov = gate_overrides_.find(row);
    if (ov != gate_overrides_.end()) {
      for (T v : ov->second) bits.push_back(v > T(0) ? 1 : 0);
    } else {
      ConvBnLayer<T>* layer = nullptr;
      if (spec_.kind == ArchKind::Plain) {
        for (auto& l : plain_convs_)
          if (l.geom_row == row) layer = &l;
      } else {
        if (stem_.geom_row == row) layer = &stem_;
        for (auto& b : blocks_) {
          if (b.conv1.geom_row == row) layer = &b.conv1;
          if (b.conv2.geom_row == row) layer = &b.conv2;
        }
      }
      check(layer != nullptr, "current_gates: no layer for gated row");
      auto w = layer->w.detach();
      auto g = gs.forward(reshape_weights(w), GateForward::Hard);
      for (T v : g.data_vec()) bits.push_back(v > T(0) ? 1 : 0);
    }
    out.emplace(row, std::move(bits));
  }
  return out;
}

template <typename T>
std::vector<int> ConvNet<T>::current_encoding() {
  std::vector<int> enc(widths_.begin(), widths_.end());
  auto gates = current_gates();
  for (auto& [row, bits] : gates) {
    const auto& r = geom_.rows[static_cast<size_t>(row)];
    int c = 0;
    for (int b : bits) c += b;
    enc[static_cast<size_t>(r.enc_index)] = c;
  }
  return enc;
}

template <typename T>
void ConvNet<T>::set_gate_override(int geom_row, std::vector<T> pattern) {
  auto it = gates_.find(geom_row);
  check(it != gates_.end(), "set_gate_override: row has no gates attached");
  const auto& r = geom_.rows[static_cast<size_t>(geom_row)];
  const int w = widths_[static_cast<size_t>(r.enc_index)];
  check(static_cast<int>(pattern.size()) == w, "set_gate_override: pattern length mismatch");
  int open = 0;
  for (T v : pattern) {
    check(v == T(0) || v == T(1), "set_gate_override: pattern must be binary");
    open += v > T(0) ? 1 : 0;
  }
  check(open >= it->second.min_open, "set_gate_override: pattern violates min_open");
  gate_overrides_[geom_row] = std::move(pattern);
}

template <typename T>
void ConvNet<T>::clear_gate_overrides() {
  gate_overrides_.clear();
}

template <typename T>
int64_t ConvNet<T>::parameter_count() {
  int64_t n = 0;
  for (auto& p : parameters(false)) n += p.tensor.numel();
  return n;
}

template <typename T>
int ConvNet<T>::width_of_row(int geom_row) const {
  const auto& r = geom_.rows[static_cast<size_t>(geom_row)];
  return r.enc_index >= 0 ? widths_[static_cast<size_t>(r.enc_index)] : r.out_max;
}

template <typename T>
std::vector<std::pair<int, ConvBnLayer<T>*>> ConvNet<T>::conv_layers() {
  std::vector<std::pair<int, ConvBnLayer<T>*>> out;
  if (spec_.kind == ArchKind::Plain) {
    for (auto& l : plain_convs_) out.emplace_back(l.geom_row, &l);
  } else {
    out.emplace_back(stem_.geom_row, &stem_);
    for (auto& b : blocks_) {
      out.emplace_back(b.conv1.geom_row, &b.conv1);
      out.emplace_back(b.conv2.geom_row, &b.conv2);
      if (b.proj) out.emplace_back(b.proj->geom_row, &*b.proj);
    }
  }
  return out;
}

template <typename T>
void ConvNet<T>::copy_classifier_from(ConvNet<T>& other) {
  check(fc_w_.shape() == other.fc_w_.shape(), "copy_classifier_from: classifier shape mismatch");
  fc_w_.data_vec() = other.fc_w_.data_vec();
  fc_b_.data_vec() = other.fc_b_.data_vec();
}

template class ConvNet<float>;
template class ConvNet<double>;

}  // namespace gatecrush
