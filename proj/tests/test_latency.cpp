#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "gatecrush/latency.hpp"

using namespace gatecrush;

namespace {

TimingConfig quick_cfg() {
  TimingConfig cfg;
  cfg.batch_size = 2;
  cfg.warmup_runs = 1;
  cfg.timed_runs = 9;
  cfg.stability_iqr_frac = 0.5;  // wide: CI boxes are noisy
  return cfg;
}

ArchitectureSpec tiny_arch() {
  auto spec = ArchitectureSpec::preset("toy2");
  spec.input_size = 16;
  return spec;
}

}  // namespace

TEST_CASE("decode_network widths and parameter counts") {
  auto spec = ArchitectureSpec::preset("vgg_small");
  auto geom = spec.geometry();

  SUBCASE("full width matches the baseline parameter count") {
    ConvNet<float> base(spec, 3);
    auto model = decode_network(spec, geom.full_width_encoding(), 4);
    CHECK(model.parameter_count() == base.parameter_count());
  }

  SUBCASE("half width roughly quarters interior conv parameters") {
    auto full = geom.full_width_encoding();
    auto half = full;
    for (auto& v : half) v /= 2;
    auto base = decode_network(spec, full, 4);
    auto narrow = decode_network(spec, half, 4);

    // conv weight parameters only (biases/BN scale linearly, not quadratically)
    auto conv_params = [&](ConvNet<float>& m) {
      int64_t n = 0;
      for (auto& [row, layer] : m.conv_layers()) n += layer->w.numel();
      return n;
    };
    const double ratio = static_cast<double>(conv_params(narrow)) /
                         static_cast<double>(conv_params(base));
    CHECK(ratio > 0.2);
    CHECK(ratio < 0.3);  // ~1/4 with a stem term slightly above
  }

  SUBCASE("zero width is undecodable") {
    auto enc = geom.full_width_encoding();
    enc[1] = 0;
    CHECK_THROWS_AS(decode_network(spec, enc, 4), Error);
  }

  SUBCASE("over-width encodings are rejected") {
    auto enc = geom.full_width_encoding();
    enc[0] += 1;
    CHECK_THROWS_AS(decode_network(spec, enc, 4), Error);
  }
}

TEST_CASE("measure_latency: medians are stable and permutation-invariant") {
  auto spec = tiny_arch();
  auto model = decode_network(spec, spec.geometry().full_width_encoding(), 9);
  auto cfg = quick_cfg();

  auto a = measure_latency(model, cfg, 1);
  auto b = measure_latency(model, cfg, 1);
  CHECK(a.median_ms > 0.0);
  // repeat-measurement stability: generous band because CI machines wobble
  CHECK(std::abs(a.median_ms - b.median_ms) / std::max(a.median_ms, b.median_ms) < 0.5);
}

TEST_CASE("timing resolution gate fires for a too-coarse clock") {
  auto spec = tiny_arch();
  auto model = decode_network(spec, spec.geometry().full_width_encoding(), 9);
  auto cfg = quick_cfg();
  cfg.clock_granularity_override_ms = 1e6;  // absurd granularity: everything is too fast
  CHECK_THROWS_AS(measure_latency(model, cfg, 1), Error);
}

TEST_CASE("timing config invariants") {
  TimingConfig cfg;
  cfg.timed_runs = 2;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TimingConfig{};
  cfg.warmup_runs = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("latency dataset file round trip and manifest") {
  LatencyDataset ds;
  ds.manifest.host = host_descriptor();
  ds.manifest.version = toolkit_version();
  ds.manifest.arch = "toy2";
  ds.manifest.batch_size = 2;
  ds.manifest.warmup_runs = 1;
  ds.manifest.timed_runs = 9;
  ds.manifest.seed = 42;
  ds.samples.push_back({{8, 8}, 1.234567, 0.01});
  ds.samples.push_back({{4, 8}, 0.654321, 0.02});

  const std::string path = "/tmp/gatecrush_lat.txt";
  write_latency_dataset(path, ds);

  auto back = read_latency_dataset(path);
  CHECK(back.manifest.host == ds.manifest.host);
  CHECK(back.manifest.arch == "toy2");
  CHECK(back.manifest.seed == 42);
  REQUIRE(back.samples.size() == 2);
  CHECK(back.samples[0].encoding == std::vector<int>{8, 8});
  CHECK(back.samples[0].latency_ms == doctest::Approx(1.234567));
  CHECK(back.samples[1].iqr_ms == doctest::Approx(0.02));

  SUBCASE("the file is append-only and self-describing") {
    append_latency_samples(path, ds.manifest, {{{6, 8}, 0.8, 0.01}});
    auto more = read_latency_dataset(path);
    CHECK(more.samples.size() == 3);
    CHECK(more.samples[2].encoding == std::vector<int>{6, 8});
  }

  SUBCASE("merge refuses mismatched manifests") {
    auto other = ds;
    other.manifest.host = "another-box";
    CHECK_THROWS_AS(merge_latency_datasets(ds, other), Error);
    auto other2 = ds;
    other2.manifest.batch_size = 99;
    CHECK_THROWS_AS(merge_latency_datasets(ds, other2), Error);
    auto ok = merge_latency_datasets(ds, ds);
    CHECK(ok.samples.size() == 4);
  }

  SUBCASE("appending under a different config is refused") {
    auto other = ds.manifest;
    other.timed_runs = 99;
    CHECK_THROWS_AS(append_latency_samples(path, other, ds.samples), Error);
  }
}

TEST_CASE("collect_dataset smoke run: n=10 completes and round-trips") {
  auto spec = tiny_arch();
  auto cfg = quick_cfg();
  cfg.stability_iqr_frac = 1e9;  // disable the abort path for the smoke run
  const std::string path = "/tmp/gatecrush_collect.txt";
  auto res = collect_dataset(spec, 10, cfg, 5, path);
  CHECK(res.dataset.samples.size() == 10);

  auto back = read_latency_dataset(path);
  REQUIRE(back.samples.size() == 10);
  for (size_t i = 0; i < 10; ++i) {
    CHECK(back.samples[i].encoding == res.dataset.samples[i].encoding);
    CHECK(back.samples[i].latency_ms == doctest::Approx(res.dataset.samples[i].latency_ms));
  }

  SUBCASE("same seed reproduces the same encodings") {
    auto res2 = collect_dataset(spec, 10, cfg, 5, "");
    for (size_t i = 0; i < 10; ++i)
      CHECK(res2.dataset.samples[i].encoding == res.dataset.samples[i].encoding);
  }
}

TEST_CASE("decoded FLOPs are monotone in each encoding coordinate") {
  auto geom = ArchitectureSpec::preset("resnet8").geometry();
  auto base = geom.full_width_encoding();
  for (int s : geom.gated_encoding_slots()) {
    auto grid = encoding_grid(geom.row_for_slot(s));
    int64_t prev = -1;
    auto enc = base;
    for (int v : grid) {
      enc[static_cast<size_t>(s)] = v;
      const int64_t f = flops_network_exact(geom, enc);
      CHECK(f > prev);
      prev = f;
    }
  }
}

TEST_CASE("wider models cost at least as much as strictly narrower ones") {
  // pairwise dominance with a scaled-width family; generous slack for CI noise
  auto spec = tiny_arch();
  auto geom = spec.geometry();
  auto cfg = quick_cfg();
  cfg.timed_runs = 15;
  cfg.batch_size = 8;

  std::vector<double> scales{0.25, 1.0};
  std::vector<LatencyMeasurement> ms;
  for (double sc : scales) {
    auto enc = geom.full_width_encoding();
    for (size_t i = 0; i < enc.size(); ++i)
      enc[i] = std::max(1, static_cast<int>(std::lround(enc[i] * sc)));
    for (int s : geom.gated_encoding_slots())
      enc[static_cast<size_t>(s)] = std::max(1, enc[static_cast<size_t>(s)]);
    // ungated slots must stay at full width for a legal decode comparison;
    // narrow only the gated ones
    auto legal = geom.full_width_encoding();
    for (int s : geom.gated_encoding_slots()) legal[static_cast<size_t>(s)] = enc[static_cast<size_t>(s)];
    auto model = decode_network(spec, legal, 3);
    ms.push_back(measure_latency(model, cfg, 11));
  }
  const double slack = ms[0].iqr_ms + ms[1].iqr_ms;
  CHECK(ms[1].median_ms >= ms[0].median_ms - slack);
}
