#include <doctest.h>

#include <cmath>
#include <set>

#include "gatecrush/efficiency.hpp"
#include "support/op_gradchecks.hpp"
#include "support/oracles.hpp"

using namespace gatecrush;
using namespace gatecrush::testing;

TEST_CASE("flops_layer basics") {
  ConvGeom r;
  r.map_h = r.map_w = 32;
  r.kernel = 3;
  CHECK(flops_layer(r, 0.0, 64.0) == 0.0);
  CHECK(flops_layer(r, 3.0, 64.0) == doctest::Approx(1769472.0));  // 32*32*9*3*64
  CHECK_THROWS_AS(flops_layer(r, -1.0, 4.0), Error);
}

TEST_CASE("flops_network anchors: full-width VGG16 and ResNet56 at 32x32") {
  auto gv = ArchitectureSpec::preset("vgg16").geometry();
  auto fv = gv.full_width_encoding();
  const double v = flops_network(gv, std::vector<double>(fv.begin(), fv.end()));
  CHECK(std::abs(v - 313e6) / 313e6 < 0.02);

  auto gr = ArchitectureSpec::preset("resnet56").geometry();
  auto fr = gr.full_width_encoding();
  const double r = flops_network(gr, std::vector<double>(fr.begin(), fr.end()));
  CHECK(std::abs(r - 126.8e6) / 126.8e6 < 0.02);
}

TEST_CASE("all-zero encoding gives zero FLOPs") {
  auto g = ArchitectureSpec::preset("vgg_small").geometry();
  std::vector<double> zeros(static_cast<size_t>(g.encoding_length), 0.0);
  CHECK(flops_network(g, zeros) == 0.0);
}

TEST_CASE("flops_network equals the brute-force counting oracle exactly") {
  for (const auto& name : {"vgg_small", "vgg16", "resnet8", "resnet56"}) {
    auto geom = ArchitectureSpec::preset(name).geometry();
    Rng rng(911);
    auto encs = sample_encodings(geom, 100, rng.raw());
    for (const auto& enc : encs)
      CHECK(flops_network_exact(geom, enc) == brute_force_macs(geom, enc));
  }
}

TEST_CASE("flops gradient couples adjacent layers") {
  Rng rng(515);
  CHECK(check_flops_penalty(rng).checked > 0);
}

TEST_CASE("encoding sampling: reproducible, in range, roughly uniform") {
  auto geom = ArchitectureSpec::preset("resnet8").geometry();

  SUBCASE("fixed seed reproduces the encoding") {
    auto a = sample_encodings(geom, 1, 55);
    auto b = sample_encodings(geom, 1, 55);
    CHECK(a == b);
  }

  SUBCASE("every c_l within [ceil(0.1*C), C]") {
    auto encs = sample_encodings(geom, 1000, 77);
    for (const auto& enc : encs)
      for (int s = 0; s < geom.encoding_length; ++s) {
        const auto& r = geom.row_for_slot(s);
        if (!r.gated) {
          CHECK(enc[static_cast<size_t>(s)] == r.out_max);
          continue;
        }
        CHECK(enc[static_cast<size_t>(s)] >= static_cast<int>(std::ceil(0.1 * r.out_max)));
        CHECK(enc[static_cast<size_t>(s)] <= r.out_max);
      }
  }

  SUBCASE("per-layer distribution passes a chi-square sanity check at p > 0.01") {
    const int n = 4000;
    auto encs = sample_encodings(geom, n, 99);
    for (int s : geom.gated_encoding_slots()) {
      auto grid = encoding_grid(geom.row_for_slot(s));
      std::map<int, int> counts;
      for (const auto& enc : encs) counts[enc[static_cast<size_t>(s)]]++;
      const double expect = static_cast<double>(n) / static_cast<double>(grid.size());
      double chi2 = 0.0;
      for (int v : grid) {
        const double d = counts[v] - expect;
        chi2 += d * d / expect;
      }
      // Wilson-Hilferty critical value for p=0.01
      const double k = static_cast<double>(grid.size() - 1);
      const double crit = k * std::pow(1.0 - 2.0 / (9.0 * k) + 2.326 * std::sqrt(2.0 / (9.0 * k)), 3.0);
      CHECK(chi2 < crit);
    }
  }
}

namespace {

// affine-in-c_{l-1}*c_l synthetic latency with per-layer coefficients
double synthetic_affine_latency(const GeometryTable& geom, const std::vector<int>& enc,
                                double noise_frac, Rng* noise_rng) {
  double lat = 0.4;
  int li = 0;
  for (size_t ri = 0; ri < geom.rows.size(); ++ri) {
    const auto& r = geom.rows[ri];
    if (r.kind == LayerKind::Linear) continue;
    auto cnt = [&](int row) -> double {
      if (row < 0) return 3.0;
      const auto& rr = geom.rows[static_cast<size_t>(row)];
      return rr.enc_index >= 0 ? enc[static_cast<size_t>(rr.enc_index)] : rr.out_max;
    };
    const double a = 0.8 + 0.22 * (li % 5);
    lat += a * cnt(static_cast<int>(ri)) * cnt(r.in_row) * r.map_h * r.map_w / 2.5e5;
    ++li;
  }
  if (noise_rng && noise_frac > 0.0) lat *= 1.0 + noise_frac * noise_rng->normal();
  return lat;
}

std::vector<LatencySample> make_synthetic_samples(const GeometryTable& geom, int n, uint64_t seed,
                                                  double noise_frac) {
  auto encs = sample_encodings(geom, n, seed);
  Rng noise(seed + 1);
  std::vector<LatencySample> out;
  for (auto& enc : encs) {
    LatencySample s;
    s.encoding = enc;
    s.latency_ms = synthetic_affine_latency(geom, enc, noise_frac, &noise);
    out.push_back(std::move(s));
  }
  return out;
}

// held-out error against the clean oracle: a 5% noise floor on test labels
// would otherwise dominate the model error being measured
double heldout_error_vs_oracle(const GeometryTable& geom, const LpNet<float>& net,
                               uint64_t enc_seed, int n) {
  auto encs = sample_encodings(geom, n, enc_seed);
  double rel = 0.0;
  for (const auto& enc : encs) {
    const double truth = synthetic_affine_latency(geom, enc, 0.0, nullptr);
    rel += std::abs(net.predict(enc) - truth) / truth;
  }
  return rel / n;
}

}  // namespace

TEST_CASE("lpnet: zero weights and zero bias predict zero") {
  auto geom = ArchitectureSpec::preset("resnet8").geometry();
  LpNet<float> net(geom, 4);
  for (auto& p : net.parameters()) std::fill(p.tensor.data_vec().begin(), p.tensor.data_vec().end(), 0.0f);
  CHECK(net.predict(geom.full_width_encoding()) == 0.0);
}

TEST_CASE("lpnet feature-length mismatch rejected") {
  auto geom = ArchitectureSpec::preset("resnet8").geometry();
  LpNet<float> net(geom, 4);
  auto enc = Tensor<float>::ones({3});
  CHECK_THROWS_AS(net.forward(enc), Error);
}

TEST_CASE("lpnet gradient w.r.t. the encoding matches finite differences") {
  Rng rng(808);
  CHECK(check_lpnet_wrt_encoding(rng).checked > 0);
}

TEST_CASE("lpnet training on noiseless affine latency reaches < 0.5% held-out error") {
  auto geom = ArchitectureSpec::preset("resnet8").geometry();
  auto samples = make_synthetic_samples(geom, 1200, 7, 0.0);
  LpNetConfig cfg;
  cfg.epochs = 240;
  cfg.seed = 5;
  auto res = lpnet_train<float>(geom, samples, cfg);
  CHECK(res.test_rel_error < 0.005);
}

TEST_CASE("lpnet trained on 5%-noisy labels stays under 2% error vs the clean oracle") {
  auto geom = ArchitectureSpec::preset("resnet8").geometry();
  auto samples = make_synthetic_samples(geom, 1500, 11, 0.05);
  LpNetConfig cfg;
  cfg.epochs = 240;
  cfg.seed = 6;
  auto res = lpnet_train<float>(geom, samples, cfg);
  CHECK(heldout_error_vs_oracle(geom, res.net, 1234, 300) < 0.02);
}

TEST_CASE("lpnet training rejects tiny and degenerate datasets") {
  auto geom = ArchitectureSpec::preset("resnet8").geometry();
  LpNetConfig cfg;
  auto few = make_synthetic_samples(geom, 50, 3, 0.0);
  CHECK_THROWS_AS(lpnet_train<float>(geom, few, cfg), Error);

  std::vector<LatencySample> dup(150);
  for (auto& s : dup) {
    s.encoding = geom.full_width_encoding();
    s.latency_ms = 2.0;
  }
  CHECK_THROWS_AS(lpnet_train<float>(geom, dup, cfg), Error);
}

TEST_CASE("lpnet monotone response on the affine-trained net") {
  auto geom = ArchitectureSpec::preset("resnet8").geometry();
  auto samples = make_synthetic_samples(geom, 1200, 19, 0.0);
  LpNetConfig cfg;
  cfg.epochs = 240;
  cfg.seed = 9;
  auto res = lpnet_train<float>(geom, samples, cfg);
  REQUIRE(res.test_rel_error < 0.02);

  // sweep each gated coordinate upward; prediction may not drop below the
  // model's own error band
  auto base = geom.full_width_encoding();
  for (int s : geom.gated_encoding_slots()) {
    auto enc = base;
    auto grid = encoding_grid(geom.row_for_slot(s));
    double prev = -1e30;
    for (int v : grid) {
      enc[static_cast<size_t>(s)] = v;
      const double pred = res.net.predict(enc);
      CHECK(pred >= prev * (1.0 - 0.02) - 0.02);
      prev = pred;
    }
  }
}

TEST_CASE("block latency sum") {
  CHECK(block_latency_sum({1.0, 2.0, 3.0}) == doctest::Approx(6.0));
  CHECK(block_latency_sum({4.25}) == doctest::Approx(4.25));
  CHECK_THROWS_AS(block_latency_sum({}), Error);
}

TEST_CASE("block-level lpnets match the whole-network one on additive latency") {
  auto geom = ArchitectureSpec::preset("resnet8").geometry();

  // block partition: each residual block's two slots (the stem is constant
  // width, so its slice would be a degenerate training set)
  std::vector<std::vector<int>> groups{{1, 2}, {3, 4}, {5, 6}};

  // per-block additive latencies from disjoint slices of the affine model
  auto group_latency = [&](const std::vector<int>& enc, const std::vector<int>& slots) {
    double lat = 0.1;
    for (size_t ri = 0; ri < geom.rows.size(); ++ri) {
      const auto& r = geom.rows[ri];
      if (r.kind == LayerKind::Linear || r.enc_index < 0) continue;
      if (std::find(slots.begin(), slots.end(), r.enc_index) == slots.end()) continue;
      auto cnt = [&](int row) -> double {
        if (row < 0) return 3.0;
        const auto& rr = geom.rows[static_cast<size_t>(row)];
        return rr.enc_index >= 0 ? enc[static_cast<size_t>(rr.enc_index)] : rr.out_max;
      };
      lat += cnt(static_cast<int>(ri)) * cnt(r.in_row) * r.map_h * r.map_w / 2.0e5;
    }
    return lat;
  };

  auto encs = sample_encodings(geom, 900, 31);

  // whole-network samples are exact sums of the per-block latencies
  std::vector<LatencySample> whole;
  for (const auto& enc : encs) {
    LatencySample s;
    s.encoding = enc;
    s.latency_ms = 0.0;
    for (const auto& g : groups) s.latency_ms += group_latency(enc, g);
    whole.push_back(std::move(s));
  }
  LpNetConfig cfg;
  cfg.epochs = 200;
  cfg.seed = 77;
  auto whole_net = lpnet_train<float>(geom, whole, cfg);

  // per-block nets over sub-geometries
  std::vector<LpNet<float>> block_nets;
  for (const auto& g : groups) {
    auto sub = sub_geometry(geom, g);
    std::vector<LatencySample> block_samples;
    for (const auto& enc : encs) {
      LatencySample s;
      for (int slot : g) s.encoding.push_back(enc[static_cast<size_t>(slot)]);
      s.latency_ms = group_latency(enc, g);
      block_samples.push_back(std::move(s));
    }
    LpNetConfig bcfg;
    bcfg.epochs = 200;
    bcfg.seed = 78;
    auto r = lpnet_train<float>(sub, block_samples, bcfg);
    block_nets.push_back(std::move(r.net));
  }

  // summed block predictions track the whole-network prediction
  auto test_encs = sample_encodings(geom, 40, 999);
  double worst = 0.0;
  for (const auto& enc : test_encs) {
    std::vector<double> preds;
    for (size_t gi = 0; gi < groups.size(); ++gi) {
      std::vector<int> slice;
      for (int slot : groups[gi]) slice.push_back(enc[static_cast<size_t>(slot)]);
      preds.push_back(block_nets[gi].predict(slice));
    }
    const double summed = block_latency_sum(preds);
    const double whole_pred = whole_net.net.predict(enc);
    double truth = 0.0;
    for (const auto& g : groups) truth += group_latency(enc, g);
    worst = std::max(worst, std::abs(summed - whole_pred) / truth);
  }
  CHECK(worst < 0.06);  // combined model error of the two routes
}

TEST_CASE("evaluator interface is switchable without other code changes") {
  auto geom = ArchitectureSpec::preset("resnet8").geometry();
  std::vector<std::unique_ptr<EfficiencyEvaluator<float>>> evals;
  evals.emplace_back(new FlopsEvaluator<float>(geom));
  evals.emplace_back(new L1GatesEvaluator<float>(geom));
  auto full = geom.full_width_encoding();
  std::vector<double> counts(full.begin(), full.end());
  auto enc = Tensor<float>::from_vector(std::vector<float>(full.begin(), full.end()),
                                        {static_cast<int64_t>(full.size())});
  for (auto& ev : evals) {
    const double v = ev->value(counts);
    CHECK(ev->eval(enc).item() == doctest::Approx(v).epsilon(1e-4));
    CHECK(v > 0.0);
  }
}
