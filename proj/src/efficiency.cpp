#include "gatecrush/efficiency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "gatecrush/checkpoint.hpp"

namespace gatecrush {

namespace {

double count_for_row(const GeometryTable& geom, const std::vector<double>& counts, int row,
                     int input_channels = 3) {
  if (row < 0) return static_cast<double>(input_channels);
  const auto& r = geom.rows[static_cast<size_t>(row)];
  if (r.enc_index >= 0) return counts[static_cast<size_t>(r.enc_index)];
  return static_cast<double>(r.out_max);
}

}  // namespace

double flops_layer(const ConvGeom& row, double c_in, double c_out) {
  check(c_in >= 0.0 && c_out >= 0.0, "flops_layer: negative channel count");
  return static_cast<double>(row.map_h) * row.map_w * row.kernel * row.kernel * c_in * c_out;
}

double flops_network(const GeometryTable& geom, const std::vector<double>& counts) {
  check(static_cast<int>(counts.size()) == geom.encoding_length,
        "flops_network: encoding/geometry length mismatch");
  double total = 0.0;
  for (size_t ri = 0; ri < geom.rows.size(); ++ri) {
    const auto& r = geom.rows[ri];
    if (r.kind == LayerKind::Linear) continue;
    const double c_out = count_for_row(geom, counts, static_cast<int>(ri));
    const double c_in = count_for_row(geom, counts, r.in_row);
    total += flops_layer(r, c_in, c_out);
  }
  return total;
}

int64_t flops_network_exact(const GeometryTable& geom, const std::vector<int>& counts) {
  check(static_cast<int>(counts.size()) == geom.encoding_length,
        "flops_network: encoding/geometry length mismatch");
  int64_t total = 0;
  for (size_t ri = 0; ri < geom.rows.size(); ++ri) {
    const auto& r = geom.rows[ri];
    if (r.kind == LayerKind::Linear) continue;
    auto cnt = [&](int row) -> int64_t {
      if (row < 0) return 3;
      const auto& rr = geom.rows[static_cast<size_t>(row)];
      return rr.enc_index >= 0 ? counts[static_cast<size_t>(rr.enc_index)] : rr.out_max;
    };
    total += static_cast<int64_t>(r.map_h) * r.map_w * r.kernel * r.kernel *
             cnt(static_cast<int>(ri)) * cnt(r.in_row);
  }
  return total;
}

std::vector<std::pair<std::string, int64_t>> flops_breakdown(const GeometryTable& geom,
                                                             const std::vector<int>& counts) {
  std::vector<std::pair<std::string, int64_t>> out;
  for (size_t ri = 0; ri < geom.rows.size(); ++ri) {
    const auto& r = geom.rows[ri];
    if (r.kind == LayerKind::Linear) continue;
    auto cnt = [&](int row) -> int64_t {
      if (row < 0) return 3;
      const auto& rr = geom.rows[static_cast<size_t>(row)];
      return rr.enc_index >= 0 ? counts[static_cast<size_t>(rr.enc_index)] : rr.out_max;
    };
    out.emplace_back(r.name, static_cast<int64_t>(r.map_h) * r.map_w * r.kernel * r.kernel *
                                 cnt(static_cast<int>(ri)) * cnt(r.in_row));
  }
  return out;
}

template <typename T>
Tensor<T> flops_penalty(const GeometryTable& geom, const Tensor<T>& encoding, double unit_scale) {
  check(encoding.rank() == 1 && encoding.dim(0) == geom.encoding_length,
        "flops_penalty: encoding length mismatch");
  // (slot_out, slot_in, coef); slot -1 carries a fixed channel count in fixed_c
  struct Term {
    int slot_out, slot_in;
    double fixed_out, fixed_in, coef;
  };
  std::vector<Term> terms;
  for (size_t ri = 0; ri < geom.rows.size(); ++ri) {
    const auto& r = geom.rows[ri];
    if (r.kind == LayerKind::Linear) continue;
    Term t;
    t.coef = static_cast<double>(r.map_h) * r.map_w * r.kernel * r.kernel * unit_scale;
    t.slot_out = r.enc_index;
    t.fixed_out = static_cast<double>(r.out_max);
    if (r.in_row < 0) {
      t.slot_in = -1;
      t.fixed_in = 3.0;
    } else {
      const auto& rin = geom.rows[static_cast<size_t>(r.in_row)];
      t.slot_in = rin.enc_index;
      t.fixed_in = static_cast<double>(rin.out_max);
    }
    terms.push_back(t);
  }

  auto out = detail::make_op<T>({1}, "flops_penalty", {encoding});
  const auto& c = encoding.data_vec();
  auto at = [&](int slot, double fixed) -> double {
    return slot >= 0 ? static_cast<double>(c[static_cast<size_t>(slot)]) : fixed;
  };
  double total = 0.0;
  for (const auto& t : terms) total += t.coef * at(t.slot_out, t.fixed_out) * at(t.slot_in, t.fixed_in);
  out.data_vec()[0] = static_cast<T>(total);

  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* ei = encoding.impl().get();
    auto terms_ptr = std::make_shared<std::vector<Term>>(std::move(terms));
    out.impl()->grad_fn = [oi, ei, terms_ptr] {
      ei->ensure_grad();
      const T g = oi->grad[0];
      auto val = [&](int slot, double fixed) -> double {
        return slot >= 0 ? static_cast<double>(ei->data[static_cast<size_t>(slot)]) : fixed;
      };
      for (const auto& t : *terms_ptr) {
        if (t.slot_out >= 0)
          ei->grad[static_cast<size_t>(t.slot_out)] +=
              g * static_cast<T>(t.coef * val(t.slot_in, t.fixed_in));
        if (t.slot_in >= 0)
          ei->grad[static_cast<size_t>(t.slot_in)] +=
              g * static_cast<T>(t.coef * val(t.slot_out, t.fixed_out));
      }
    };
  }
  check_finite(*out.impl(), "forward");
  return out;
}

std::vector<int> encoding_grid(const ConvGeom& row) {
  const int C = row.out_max;
  if (!row.gated) return {C};
  const int step = std::max(1, C / 32);
  const int lo = static_cast<int>(std::ceil(0.1 * C));
  std::vector<int> grid;
  for (int v = step; v <= C; v += step)
    if (v >= lo) grid.push_back(v);
  if (grid.empty() || grid.back() != C) grid.push_back(C);
  return grid;
}

std::vector<std::vector<int>> sample_encodings(const GeometryTable& geom, int n, uint64_t seed) {
  check(n >= 1, "sample_encodings: n must be >= 1");
  Rng rng(seed);
  std::vector<std::vector<int>> grids;
  for (int s = 0; s < geom.encoding_length; ++s) grids.push_back(encoding_grid(geom.row_for_slot(s)));
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<int> enc(static_cast<size_t>(geom.encoding_length));
    for (int s = 0; s < geom.encoding_length; ++s) {
      const auto& grid = grids[static_cast<size_t>(s)];
      enc[static_cast<size_t>(s)] =
          grid[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(grid.size()) - 1))];
    }
    out.push_back(std::move(enc));
  }
  return out;
}

double block_latency_sum(const std::vector<double>& block_predictions) {
  check(!block_predictions.empty(), "block_latency_sum: empty prediction list");
  double acc = 0.0;
  for (double v : block_predictions) acc += v;
  return acc;
}

GeometryTable sub_geometry(const GeometryTable& geom, const std::vector<int>& slots) {
  GeometryTable out;
  int enc = 0;
  for (int s : slots) {
    ConvGeom r = geom.row_for_slot(s);
    r.in_row = -1;  // feature view only; adjacency is not preserved
    r.enc_index = enc++;
    out.rows.push_back(r);
  }
  out.encoding_length = enc;
  out.main_path_weighted = enc;
  return out;
}

template <typename T>
LpNet<T>::LpNet(const GeometryTable& geom, uint64_t init_seed, int hidden) {
  slots_ = geom.encoding_length;
  feat_len_ = 3 * slots_;
  std::vector<T> inv_cmax(static_cast<size_t>(slots_));
  std::vector<T> geo(static_cast<size_t>(2 * slots_));
  const double area_norm = std::log1p(1024.0);
  for (int s = 0; s < slots_; ++s) {
    const auto& r = geom.row_for_slot(s);
    inv_cmax[static_cast<size_t>(s)] = static_cast<T>(1.0 / r.out_max);
    geo[static_cast<size_t>(s)] =
        static_cast<T>(std::log1p(static_cast<double>(r.map_h) * r.map_w) / area_norm);
    geo[static_cast<size_t>(slots_ + s)] = static_cast<T>(r.downsample ? 1.0 : 0.0);
  }
  inv_cmax_ = Tensor<T>::from_vector(std::move(inv_cmax), {slots_});
  geom_feats_ = Tensor<T>::from_vector(std::move(geo), {2 * slots_});

  Rng rng(init_seed);
  auto init_linear = [&](int64_t in, int64_t outw, Tensor<T>& w, Tensor<T>& b) {
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
    w = Tensor<T>::rand_uniform({in, outw}, rng, -bound, bound, true);
    b = Tensor<T>::zeros({outw}, true);
  };
  init_linear(feat_len_, hidden, w1_, b1_);
  init_linear(hidden, hidden, w2_, b2_);
  init_linear(hidden, 1, w3_, b3_);
}

template <typename T>
Tensor<T> LpNet<T>::features(const Tensor<T>& encoding) const {
  check(encoding.rank() == 1 && encoding.dim(0) == slots_, "lpnet: feature-length mismatch");
  auto scaled = mul(encoding, inv_cmax_);
  return concat1d(scaled, geom_feats_);
}

template <typename T>
Tensor<T> LpNet<T>::forward(const Tensor<T>& encoding) const {
  auto x = reshape(features(encoding), {1, feat_len_});
  x = relu(linear(x, w1_, b1_));
  x = relu(linear(x, w2_, b2_));
  x = linear(x, w3_, b3_);
  return scale(reshape(x, {1}), target_scale_);
}

template <typename T>
double LpNet<T>::predict(const std::vector<double>& counts) const {
  std::vector<T> c(counts.begin(), counts.end());
  auto enc = Tensor<T>::from_vector(std::move(c), {slots_});
  return static_cast<double>(forward(enc).item());
}

template <typename T>
double LpNet<T>::predict(const std::vector<int>& counts) const {
  return predict(std::vector<double>(counts.begin(), counts.end()));
}

template <typename T>
std::vector<NamedParam<T>> LpNet<T>::parameters() {
  return {{"lpnet.fc1.weight", w1_, false}, {"lpnet.fc1.bias", b1_, false},
          {"lpnet.fc2.weight", w2_, false}, {"lpnet.fc2.bias", b2_, false},
          {"lpnet.fc3.weight", w3_, false}, {"lpnet.fc3.bias", b3_, false}};
}

template <typename T>
void LpNet<T>::save(const std::string& path) const {
  std::vector<CheckpointEntry> entries;
  auto self = const_cast<LpNet<T>*>(this);
  for (const auto& p : self->parameters()) {
    CheckpointEntry e;
    e.name = p.name;
    e.shape = p.tensor.shape();
    e.values.assign(p.tensor.data_vec().begin(), p.tensor.data_vec().end());
    entries.push_back(std::move(e));
  }
  CheckpointEntry meta;
  meta.name = "lpnet.meta";
  meta.shape = {3};
  meta.values = {static_cast<float>(slots_), static_cast<float>(target_scale_),
                 static_cast<float>(w1_.dim(1))};
  entries.push_back(std::move(meta));
  save_checkpoint(path, entries);
}

template <typename T>
LpNet<T> LpNet<T>::load(const std::string& path, const GeometryTable& geom) {
  auto entries = load_checkpoint(path);
  const CheckpointEntry* meta = nullptr;
  for (const auto& e : entries)
    if (e.name == "lpnet.meta") meta = &e;
  check(meta != nullptr, "lpnet: checkpoint missing meta entry");
  check(static_cast<int>(meta->values[0]) == geom.encoding_length,
        "lpnet: checkpoint was trained for a different architecture (feature-length mismatch)");
  LpNet<T> net(geom, 0, static_cast<int>(meta->values[2]));
  net.target_scale_ = static_cast<double>(meta->values[1]);
  auto params = net.parameters();
  load_params(path, params);
  return net;
}

template <typename T>
LpNetTrainResult<T> lpnet_train(const GeometryTable& geom, const std::vector<LatencySample>& samples,
                                const LpNetConfig& cfg) {
  check(samples.size() >= 100, "lpnet_train: need at least 100 samples");
  bool all_same = true;
  for (const auto& s : samples) {
    check(s.latency_ms > 0.0, "lpnet_train: non-positive latency label");
    if (s.encoding != samples.front().encoding) all_same = false;
  }
  check(!all_same, "lpnet_train: degenerate dataset (all encodings identical)");

  Rng rng(cfg.seed);
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const size_t n_train = static_cast<size_t>(cfg.train_fraction * static_cast<double>(order.size()));
  check(n_train >= 1 && n_train < order.size(), "lpnet_train: bad split");

  double mean_lat = 0.0;
  for (size_t i = 0; i < n_train; ++i) mean_lat += samples[order[i]].latency_ms;
  mean_lat /= static_cast<double>(n_train);

  LpNet<T> net(geom, rng.raw(), cfg.hidden);
  net.set_target_scale(1.0);  // train in normalized space; scale applied after

  const int64_t L = geom.encoding_length;
  const int64_t F = net.feature_length();
  auto params = net.parameters();
  for (auto& p : params) p.tensor.set_requires_grad(true);
  Adam<T> opt(params, cfg.lr);

  // assemble one [B,F] batch on the fly
  std::vector<T> inv_cmax(static_cast<size_t>(L));
  std::vector<T> geo(static_cast<size_t>(2 * L));
  {
    const double area_norm = std::log1p(1024.0);
    for (int s = 0; s < L; ++s) {
      const auto& r = geom.row_for_slot(s);
      inv_cmax[static_cast<size_t>(s)] = static_cast<T>(1.0 / r.out_max);
      geo[static_cast<size_t>(s)] =
          static_cast<T>(std::log1p(static_cast<double>(r.map_h) * r.map_w) / area_norm);
      geo[static_cast<size_t>(L + s)] = static_cast<T>(r.downsample ? 1.0 : 0.0);
    }
  }
  auto fill_features = [&](const std::vector<int>& enc, T* dst) {
    for (int64_t s = 0; s < L; ++s)
      dst[s] = static_cast<T>(enc[static_cast<size_t>(s)]) * inv_cmax[static_cast<size_t>(s)];
    std::copy(geo.begin(), geo.end(), dst + L);
  };

  auto fc1 = params[0].tensor, fb1 = params[1].tensor;
  auto fc2 = params[2].tensor, fb2 = params[3].tensor;
  auto fc3 = params[4].tensor, fb3 = params[5].tensor;

  std::vector<size_t> train_idx(order.begin(), order.begin() + static_cast<long>(n_train));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(train_idx);
    for (size_t start = 0; start < train_idx.size(); start += static_cast<size_t>(cfg.batch)) {
      const size_t end = std::min(train_idx.size(), start + static_cast<size_t>(cfg.batch));
      const int64_t B = static_cast<int64_t>(end - start);
      std::vector<T> xb(static_cast<size_t>(B * F));
      std::vector<T> tb(static_cast<size_t>(B));
      for (int64_t b = 0; b < B; ++b) {
        const auto& s = samples[train_idx[start + static_cast<size_t>(b)]];
        fill_features(s.encoding, xb.data() + b * F);
        tb[static_cast<size_t>(b)] = static_cast<T>(s.latency_ms / mean_lat);
      }
      auto x = Tensor<T>::from_vector(std::move(xb), {B, F});
      auto t = Tensor<T>::from_vector(std::move(tb), {B});
      auto h = relu(linear(x, fc1, fb1));
      h = relu(linear(h, fc2, fb2));
      auto pred = reshape(linear(h, fc3, fb3), {B});
      auto diff = sub(pred, t);
      auto loss = scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(B));
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
  }

  net.set_target_scale(mean_lat);
  double rel = 0.0;
  int n_test = 0;
  for (size_t i = n_train; i < order.size(); ++i) {
    const auto& s = samples[order[i]];
    const double pred = net.predict(s.encoding);
    rel += std::abs(pred - s.latency_ms) / s.latency_ms;
    ++n_test;
  }
  LpNetTrainResult<T> res{std::move(net), rel / std::max(1, n_test),
                          static_cast<int>(n_train), n_test};
  return res;
}

#define GATECRUSH_INSTANTIATE_EFF(T)                                                   \
  template Tensor<T> flops_penalty(const GeometryTable&, const Tensor<T>&, double);    \
  template class LpNet<T>;                                                             \
  template LpNetTrainResult<T> lpnet_train(const GeometryTable&,                       \
                                           const std::vector<LatencySample>&,          \
                                           const LpNetConfig&);

GATECRUSH_INSTANTIATE_EFF(float)
GATECRUSH_INSTANTIATE_EFF(double)

}  // namespace gatecrush
