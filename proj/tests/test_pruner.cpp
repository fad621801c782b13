#include <doctest.h>

#include <cmath>

#include "gatecrush/latency.hpp"
#include "gatecrush/pruner.hpp"

using namespace gatecrush;

namespace {

SyntheticConfig small_data_cfg(uint64_t seed, int n = 256) {
  SyntheticConfig cfg;
  cfg.n = n;
  cfg.classes = 10;
  cfg.resolution = 16;
  cfg.seed = seed;
  cfg.noise = 0.12;
  cfg.color_jitter = 0.02;
  return cfg;
}

}  // namespace

TEST_CASE("efficiency_loss trivials") {
  auto acc = Tensor<float>::scalar(2.0f);

  SUBCASE("alpha=0 leaves the accuracy loss unchanged") {
    auto eff = Tensor<float>::scalar(123.0f);
    CHECK(efficiency_loss(acc, eff, 0.0).item() == doctest::Approx(2.0f));
  }
  SUBCASE("eff=0 contributes nothing") {
    auto eff = Tensor<float>::scalar(0.0f);
    CHECK(efficiency_loss(acc, eff, 5.0).item() == doctest::Approx(2.0f));
  }
  SUBCASE("acc=2, eff=e-1, alpha=1.5 gives 3.5") {
    auto eff = Tensor<float>::scalar(static_cast<float>(std::exp(1.0) - 1.0));
    CHECK(efficiency_loss(acc, eff, 1.5).item() == doctest::Approx(3.5f).epsilon(1e-5));
  }
  SUBCASE("negative eff rejected") {
    auto eff = Tensor<float>::scalar(-1.0f);
    CHECK_THROWS_AS(efficiency_loss(acc, eff, 1.0), Error);
  }
}

TEST_CASE("l1 gate regularizer counts open gates") {
  auto spec = ArchitectureSpec::preset("vgg_small");
  ConvNet<float> net(spec, 4);
  Rng grng(5);
  net.attach_gates(grng);

  // bias +0.1 with small weights keeps everything open at init
  double total_gated_width = 0.0;
  for (int s : spec.geometry().gated_encoding_slots())
    total_gated_width += spec.geometry().row_for_slot(s).out_max;
  CHECK(l1_gate_regularizer(net) == doctest::Approx(total_gated_width));

  // force a mixed pattern on the first gated row
  auto slots = spec.geometry().gated_encoding_slots();
  const auto& row0 = spec.geometry().row_for_slot(slots[0]);
  int row_index = -1;
  for (size_t ri = 0; ri < spec.geometry().rows.size(); ++ri)
    if (spec.geometry().rows[ri].name == row0.name) row_index = static_cast<int>(ri);
  std::vector<float> pattern(static_cast<size_t>(row0.out_max), 0.0f);
  pattern[0] = 1.0f;
  pattern[3] = 1.0f;
  net.set_gate_override(row_index, pattern);
  CHECK(l1_gate_regularizer(net) ==
        doctest::Approx(total_gated_width - row0.out_max + 2.0));
}

TEST_CASE("gate attachment rejects forbidden layers") {
  auto spec = ArchitectureSpec::preset("resnet8");
  ConvNet<float> net(spec, 4);
  Rng grng(5);
  // stem (row 0) is ungated by the placement rule
  CHECK_THROWS_AS(net.attach_gates_at({0}, grng), Error);
  // block-final conv (s1.b0.conv2 is row 2)
  CHECK_THROWS_AS(net.attach_gates_at({2}, grng), Error);
}

TEST_CASE("export equivalence: random legal gate patterns keep logits within 1e-4") {
  Rng rng(616);
  for (const char* arch : {"resnet8", "vgg_small"}) {
    auto spec = ArchitectureSpec::preset(arch);
    ConvNet<float> net(spec, 77);
    Rng grng(78);
    net.attach_gates(grng);
    auto geom = net.geometry();

    // make BN stats nontrivial so eval mode is meaningful
    {
      Rng drng(5);
      auto warm = Tensor<float>::randn({8, 3, 32, 32}, drng);
      (void)net.forward(warm, /*train=*/true);
    }

    for (int trial = 0; trial < 8; ++trial) {
      // random legal pattern per gated row
      for (auto& [row, gs] : net.gates()) {
        const auto& r = geom.rows[static_cast<size_t>(row)];
        std::vector<float> pattern(static_cast<size_t>(r.out_max));
        int open = 0;
        for (auto& v : pattern) {
          v = rng.bernoulli(0.6) ? 1.0f : 0.0f;
          open += v > 0 ? 1 : 0;
        }
        if (open == 0) pattern[static_cast<size_t>(rng.uniform_int(0, r.out_max - 1))] = 1.0f;
        net.set_gate_override(row, pattern);
      }

      ConvNet<float> exported(spec, 1);
      auto arch_out = export_pruned(net, exported);

      auto x = Tensor<float>::randn({4, 3, 32, 32}, rng);
      auto gated_logits = net.forward(x, /*train=*/false);
      auto exported_logits = exported.forward(x, /*train=*/false);
      REQUIRE(gated_logits.numel() == exported_logits.numel());
      for (size_t i = 0; i < gated_logits.data_vec().size(); ++i) {
        const double a = gated_logits.data_vec()[i];
        const double b = exported_logits.data_vec()[i];
        CHECK(std::abs(a - b) / std::max(1.0, std::abs(a)) < 1e-4);
      }

      // kept indices strictly increasing and widths consistent
      for (auto& [name, kept] : arch_out.kept) {
        REQUIRE(!kept.empty());
        for (size_t i = 1; i < kept.size(); ++i) CHECK(kept[i] > kept[i - 1]);
      }
    }
    net.clear_gate_overrides();
  }
}

TEST_CASE("export with all gates open reproduces the baseline bit-for-bit") {
  auto spec = ArchitectureSpec::preset("vgg_small");
  ConvNet<float> net(spec, 31);
  Rng grng(32);
  net.attach_gates(grng);  // bias-open init keeps all gates open

  ConvNet<float> exported(spec, 1);
  (void)export_pruned(net, exported);

  Rng rng(33);
  auto x = Tensor<float>::randn({2, 3, 32, 32}, rng);
  auto a = net.forward(x, false);
  auto b = exported.forward(x, false);
  for (size_t i = 0; i < a.data_vec().size(); ++i) CHECK(a.data_vec()[i] == b.data_vec()[i]);
}

TEST_CASE("prune_train with alpha=0 keeps full width under open-gate initialization") {
  auto data = synthetic_dataset(small_data_cfg(1));
  auto eval = synthetic_dataset(small_data_cfg(2, 128));

  auto spec = ArchitectureSpec::preset("toy2");
  spec.input_size = 16;
  ConvNet<float> net(spec, 21);
  Rng grng(22);
  net.attach_gates(grng);

  PruneConfig pc;
  pc.alpha = 0.0;
  pc.mode = "flops";
  pc.train.epochs = 2;
  pc.train.lr = 0.01;
  pc.train.batch_size = 64;
  pc.train.seed = 3;
  FlopsEvaluator<float> ev(net.geometry());
  auto hist = prune_train(net, ev, pc, data, eval);
  CHECK(hist.back().encoding == net.geometry().full_width_encoding());
}

TEST_CASE("toy net with large alpha prunes below full width in flops mode") {
  auto data = synthetic_dataset(small_data_cfg(5, 512));
  auto eval = synthetic_dataset(small_data_cfg(6, 128));

  auto spec = ArchitectureSpec::preset("toy2");
  spec.input_size = 16;
  ConvNet<float> net(spec, 41);
  Rng grng(42);
  net.attach_gates(grng);

  PruneConfig pc;
  pc.alpha = 50.0;
  pc.mode = "flops";
  pc.train.epochs = 4;
  pc.train.lr = 0.02;
  pc.train.batch_size = 64;
  pc.train.seed = 7;
  FlopsEvaluator<float> ev(net.geometry());
  auto hist = prune_train(net, ev, pc, data, eval);

  const auto full = net.geometry().full_width_encoding();
  int total = 0, full_total = 0;
  for (size_t i = 0; i < full.size(); ++i) {
    total += hist.back().encoding[i];
    full_total += full[i];
  }
  CHECK(total < full_total);
  // legality: at least min_open_gates survive per gated layer
  for (auto& [row, bits] : net.current_gates()) {
    int open = 0;
    for (int b : bits) open += b;
    CHECK(open >= 1);
  }
}

TEST_CASE("loss decomposition: alpha=0 trajectory is bit-identical to a disabled efficiency term") {
  auto data = synthetic_dataset(small_data_cfg(8, 192));
  auto eval = synthetic_dataset(small_data_cfg(9, 64));
  auto spec = ArchitectureSpec::preset("toy2");
  spec.input_size = 16;

  auto run = [&](bool disable_term) {
    ConvNet<float> net(spec, 51);
    Rng grng(52);
    net.attach_gates(grng);
    PruneConfig pc;
    pc.alpha = 0.0;
    pc.mode = "flops";
    pc.disable_efficiency_term = disable_term;
    pc.train.epochs = 2;
    pc.train.lr = 0.01;
    pc.train.batch_size = 64;
    pc.train.seed = 11;
    FlopsEvaluator<float> ev(net.geometry());
    auto hist = prune_train(net, ev, pc, data, eval);
    std::vector<float> weights;
    for (auto& p : net.parameters(true))
      weights.insert(weights.end(), p.tensor.data_vec().begin(), p.tensor.data_vec().end());
    return std::make_pair(hist, weights);
  };

  auto [h1, w1] = run(false);
  auto [h2, w2] = run(true);
  REQUIRE(w1.size() == w2.size());
  for (size_t i = 0; i < w1.size(); ++i) CHECK(w1[i] == w2[i]);
  for (size_t e = 0; e < h1.size(); ++e) {
    CHECK(h1[e].acc_loss == h2[e].acc_loss);
    CHECK(h1[e].eval_accuracy == h2[e].eval_accuracy);
  }
}

TEST_CASE("encoding consistency: evaluator input equals gate popcounts each step") {
  auto spec = ArchitectureSpec::preset("toy2");
  spec.input_size = 16;
  ConvNet<float> net(spec, 61);
  Rng grng(62);
  net.attach_gates(grng);

  Rng rng(63);
  auto x = Tensor<float>::randn({4, 3, 16, 16}, rng);
  auto out = net.forward_gated(x, /*train=*/true);
  const auto& enc = out.encoding.data_vec();
  auto gates = net.current_gates();
  const auto& geom = net.geometry();
  for (auto& [row, bits] : gates) {
    int pop = 0;
    for (int b : bits) pop += b;
    const int slot = geom.rows[static_cast<size_t>(row)].enc_index;
    CHECK(enc[static_cast<size_t>(slot)] == doctest::Approx(static_cast<float>(pop)));
  }
}

TEST_CASE("finetune recovers and zero epochs is a no-op") {
  auto data = synthetic_dataset(small_data_cfg(13, 512));
  auto eval = synthetic_dataset(small_data_cfg(14, 256));

  auto spec = ArchitectureSpec::preset("toy2");
  spec.input_size = 16;
  ConvNet<float> net(spec, 71);

  TrainConfig tc;
  tc.epochs = 4;
  tc.lr = 0.1;
  tc.batch_size = 64;
  tc.seed = 15;
  tc.lr_schedule = false;
  train_baseline(net, data, eval, tc);

  Rng grng(72);
  net.attach_gates(grng);
  PruneConfig pc;
  pc.alpha = 30.0;
  pc.mode = "flops";
  pc.train.epochs = 3;
  pc.train.lr = 0.02;
  pc.train.batch_size = 64;
  pc.train.seed = 16;
  FlopsEvaluator<float> ev(net.geometry());
  prune_train(net, ev, pc, data, eval);

  ConvNet<float> exported(spec, 1);
  (void)export_pruned(net, exported);
  const double post_export = evaluate_accuracy(exported, eval);

  SUBCASE("zero epochs returns the post-export accuracy") {
    TrainConfig ft;
    ft.epochs = 0;
    auto hist = finetune(exported, data, eval, ft);
    CHECK(hist.back().eval_accuracy == doctest::Approx(post_export));
  }

  SUBCASE("a short fine-tune does not regress more than half a point") {
    TrainConfig ft;
    ft.epochs = 4;
    ft.lr = 0.02;
    ft.batch_size = 64;
    ft.seed = 17;
    auto hist = finetune(exported, data, eval, ft);
    CHECK(hist.back().eval_accuracy >= post_export - 0.005);
  }
}

TEST_CASE("history csv round trip") {
  std::vector<EpochMetrics> hist(2);
  hist[0].epoch = 0;
  hist[0].train_loss = 1.5;
  hist[0].acc_loss = 1.25;
  hist[0].eff_value = 12.25;
  hist[0].predicted = 12250000.0;
  hist[0].encoding = {16, 8, 16};
  hist[0].eval_accuracy = 0.75;
  hist[1].epoch = 1;
  hist[1].train_loss = 1.0;
  hist[1].acc_loss = 0.9;
  hist[1].eff_value = 10.0;
  hist[1].predicted = 10000000.0;
  hist[1].encoding = {16, 6, 16};
  hist[1].eval_accuracy = 0.8;

  const std::string path = "/tmp/gatecrush_hist.csv";
  write_history_csv(path, hist);
  auto back = read_history_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[1].encoding == hist[1].encoding);
  CHECK(back[0].eff_value == doctest::Approx(12.25));
  CHECK(back[1].eval_accuracy == doctest::Approx(0.8));
}
