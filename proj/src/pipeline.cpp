#include "gatecrush/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gatecrush/checkpoint.hpp"
#include "gatecrush/efficiency.hpp"
#include "gatecrush/latency.hpp"
#include "gatecrush/model.hpp"
#include "gatecrush/pruner.hpp"

namespace gatecrush {

namespace {

namespace fs = std::filesystem;

void ensure_out(const RunConfig& cfg) { fs::create_directories(cfg.out); }

void require_artifact(const std::string& path, const std::string& what,
                      const std::string& producer) {
  if (!fs::exists(path)) {
    throw Error("missing prerequisite artifact: " + what + " (" + path + "); run `" + producer +
                "` first");
  }
}

template <typename T>
void save_model(const std::string& path, ConvNet<T>& model) {
  std::vector<CheckpointEntry> entries;
  for (const auto& p : model.state()) {
    CheckpointEntry e;
    e.name = p.name;
    e.shape = p.tensor.shape();
    e.values.assign(p.tensor.data_vec().begin(), p.tensor.data_vec().end());
    entries.push_back(std::move(e));
  }
  CheckpointEntry widths;
  widths.name = "meta.widths";
  widths.shape = {static_cast<int64_t>(model.widths().size())};
  for (int w : model.widths()) widths.values.push_back(static_cast<float>(w));
  entries.push_back(std::move(widths));
  save_checkpoint(path, entries);
}

std::vector<int> checkpoint_widths(const std::string& path, const GeometryTable& geom) {
  auto entries = load_checkpoint(path);
  for (const auto& e : entries) {
    if (e.name == "meta.widths") {
      check(static_cast<int>(e.values.size()) == geom.encoding_length,
            "checkpoint: meta.widths does not match the configured architecture");
      std::vector<int> w;
      for (float v : e.values) w.push_back(static_cast<int>(v));
      return w;
    }
  }
  return geom.full_width_encoding();
}

template <typename T>
ConvNet<T> load_model(const std::string& path, const ArchitectureSpec& spec, bool with_gates,
                      const RunConfig& cfg) {
  auto geom = spec.geometry();
  ConvNet<T> model(spec, checkpoint_widths(path, geom), /*init_seed=*/cfg.seed);
  // weights first: gate attachment reads them to seed an all-open start
  auto state = model.state();
  load_params(path, state);
  if (with_gates) {
    Rng grng(cfg.seed + 10);
    model.attach_gates(grng, cfg.prune.gate_bias,
                       cfg.prune.sigmoid_k > 0.0 ? GateMode::Sigmoid : GateMode::Binary,
                       cfg.prune.sigmoid_k > 0.0 ? cfg.prune.sigmoid_k : 4.0,
                       cfg.prune.min_open_gates);
    // a gated checkpoint (resumption) restores its scorer state as well
    bool has_gate_entries = false;
    for (const auto& e : load_checkpoint(path))
      if (e.name.rfind("gate.", 0) == 0) has_gate_entries = true;
    if (has_gate_entries) {
      auto full = model.state();
      load_params(path, full);
    }
  }
  return model;
}

template <typename T>
int train_baseline_impl(const RunConfig& cfg) {
  ensure_out(cfg);
  cfg.write_resolved(cfg.out + "/resolved_config_train-baseline.json");
  auto spec = cfg.make_arch();
  auto [train, eval] = cfg.make_datasets();
  ConvNet<T> model(spec, cfg.seed);
  auto hist = train_baseline(model, train, eval, cfg.baseline_train_config());
  save_model(cfg.baseline_ckpt(), model);
  write_history_csv(cfg.baseline_metrics(), hist);
  std::printf("train-baseline: %d epochs, final eval accuracy %.4f\n",
              static_cast<int>(hist.size()), hist.back().eval_accuracy);
  return 0;
}

int collect_latency_impl(const RunConfig& cfg) {
  ensure_out(cfg);
  cfg.write_resolved(cfg.out + "/resolved_config_collect-latency.json");
  auto spec = cfg.make_arch();
  auto res =
      collect_dataset(spec, cfg.latency.samples, cfg.timing_config(), cfg.seed,
                      cfg.latency_dataset_path());
  std::printf("collect-latency: %d samples -> %s (%d unstable)\n",
              static_cast<int>(res.dataset.samples.size()), cfg.latency_dataset_path().c_str(),
              res.unstable_count);
  return 0;
}

template <typename T>
int train_lpnet_impl(const RunConfig& cfg) {
  ensure_out(cfg);
  cfg.write_resolved(cfg.out + "/resolved_config_train-lpnet.json");
  auto spec = cfg.make_arch();
  require_artifact(cfg.latency_dataset_path(), "latency dataset", "collect-latency");
  auto ds = read_latency_dataset(cfg.latency_dataset_path());

  // refuse datasets measured under a different config than the requested one
  auto timing = cfg.timing_config();
  check(ds.manifest.arch == spec.name,
        "train-lpnet: dataset was collected for architecture '" + ds.manifest.arch +
            "', not '" + spec.name + "'");
  check(ds.manifest.batch_size == timing.batch_size &&
            ds.manifest.warmup_runs == timing.warmup_runs &&
            ds.manifest.timed_runs == timing.timed_runs,
        "train-lpnet: dataset manifest timing config differs from the requested one");

  LpNetConfig lc;
  lc.hidden = cfg.lpnet.hidden;
  lc.epochs = cfg.lpnet.epochs;
  lc.lr = cfg.lpnet.lr;
  lc.batch = cfg.lpnet.batch_size;
  lc.train_fraction = cfg.lpnet.split;
  lc.seed = cfg.seed;
  auto res = lpnet_train<T>(spec.geometry(), ds.samples, lc);
  res.net.save(cfg.lpnet_ckpt());

  std::ofstream report(cfg.lpnet_report(), std::ios::trunc);
  report << "samples=" << ds.samples.size() << "\n";
  report << "train=" << res.train_count << " test=" << res.test_count << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", res.test_rel_error);
  report << "test_rel_error=" << buf << "\n";
  report << "threshold=" << cfg.lpnet.max_rel_error << "\n";

  std::printf("train-lpnet: held-out mean relative error %.4f (threshold %.4f)\n",
              res.test_rel_error, cfg.lpnet.max_rel_error);
  if (res.test_rel_error >= cfg.lpnet.max_rel_error) {
    std::printf("train-lpnet: FAILED error threshold\n");
    return 1;
  }
  return 0;
}

template <typename T>
std::unique_ptr<EfficiencyEvaluator<T>> make_evaluator(const RunConfig& cfg,
                                                       const GeometryTable& geom) {
  if (cfg.prune.efficiency == "latency") {
    require_artifact(cfg.lpnet_ckpt(), "LPNet checkpoint (latency mode)", "train-lpnet");
    return std::make_unique<LatencyEvaluator<T>>(LpNet<T>::load(cfg.lpnet_ckpt(), geom));
  }
  if (cfg.prune.efficiency == "flops") return std::make_unique<FlopsEvaluator<T>>(geom);
  return std::make_unique<L1GatesEvaluator<T>>(geom);
}

template <typename T>
int prune_impl(const RunConfig& cfg) {
  ensure_out(cfg);
  cfg.write_resolved(cfg.out + "/resolved_config_prune.json");
  auto spec = cfg.make_arch();
  auto [train, eval] = cfg.make_datasets();
  require_artifact(cfg.baseline_ckpt(), "pretrained baseline checkpoint", "train-baseline");
  auto model = load_model<T>(cfg.baseline_ckpt(), spec, /*with_gates=*/true, cfg);

  auto evaluator = make_evaluator<T>(cfg, model.geometry());
  auto hist = prune_train(model, *evaluator, cfg.prune_config(), train, eval);
  write_history_csv(cfg.history_csv(), hist);
  save_model(cfg.gated_ckpt(), model);

  ConvNet<T> exported(spec, 1);
  auto arch = export_pruned(model, exported);
  save_model(cfg.pruned_ckpt(), exported);
  write_pruned_manifest(cfg.pruned_manifest(), arch);

  const auto& enc = hist.back().encoding;
  std::ostringstream encs;
  for (size_t i = 0; i < enc.size(); ++i) encs << (i ? ";" : "") << enc[i];
  std::printf("prune: mode=%s alpha=%.3g final encoding [%s] eff=%.4f eval=%.4f\n",
              cfg.prune.efficiency.c_str(), cfg.prune.alpha, encs.str().c_str(),
              hist.back().eff_value, hist.back().eval_accuracy);
  return 0;
}

template <typename T>
int finetune_impl(const RunConfig& cfg) {
  ensure_out(cfg);
  cfg.write_resolved(cfg.out + "/resolved_config_finetune.json");
  auto spec = cfg.make_arch();
  auto [train, eval] = cfg.make_datasets();
  require_artifact(cfg.pruned_ckpt(), "exported pruned checkpoint", "prune");
  auto model = load_model<T>(cfg.pruned_ckpt(), spec, /*with_gates=*/false, cfg);

  const double post_export = evaluate_accuracy(model, eval);
  auto hist = finetune(model, train, eval, cfg.finetune_train_config());
  save_model(cfg.final_ckpt(), model);

  EpochMetrics before;
  before.epoch = -1;
  before.eval_accuracy = post_export;
  before.encoding = model.widths();
  std::vector<EpochMetrics> full{before};
  full.insert(full.end(), hist.begin(), hist.end());
  write_history_csv(cfg.finetune_metrics(), full);

  const double final_acc = hist.back().eval_accuracy;
  std::printf("finetune: post-export accuracy %.4f -> final %.4f (delta %+.4f)\n", post_export,
              final_acc, final_acc - post_export);
  return 0;
}

std::vector<int> parse_encoding_csv(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

int flops_impl(const RunConfig& cfg, const std::string& checkpoint,
               const std::string& encoding_csv) {
  ensure_out(cfg);
  auto spec = cfg.make_arch();
  auto geom = spec.geometry();
  std::vector<int> counts = geom.full_width_encoding();
  if (!encoding_csv.empty()) {
    counts = parse_encoding_csv(encoding_csv);
    check(static_cast<int>(counts.size()) == geom.encoding_length,
          "flops: encoding length does not match the architecture");
  } else if (!checkpoint.empty()) {
    require_artifact(checkpoint, "checkpoint", "train-baseline or prune");
    counts = checkpoint_widths(checkpoint, geom);
  }

  auto rows = flops_breakdown(geom, counts);
  const int64_t total = flops_network_exact(geom, counts);
  std::printf("%-14s %6s %3s %6s %6s %14s\n", "layer", "map", "k", "c_in", "c_out", "flops");
  std::ofstream csv(cfg.out + "/flops.csv", std::ios::trunc);
  csv << "layer,map_h,map_w,kernel,c_in,c_out,flops\n";
  size_t bi = 0;
  for (size_t ri = 0; ri < geom.rows.size(); ++ri) {
    const auto& r = geom.rows[ri];
    if (r.kind == LayerKind::Linear) continue;
    auto cnt = [&](int row) -> int {
      if (row < 0) return 3;
      const auto& rr = geom.rows[static_cast<size_t>(row)];
      return rr.enc_index >= 0 ? counts[static_cast<size_t>(rr.enc_index)] : rr.out_max;
    };
    std::printf("%-14s %3dx%-3d %3d %6d %6d %14lld\n", r.name.c_str(), r.map_h, r.map_w, r.kernel,
                cnt(r.in_row), cnt(static_cast<int>(ri)),
                static_cast<long long>(rows[bi].second));
    csv << r.name << "," << r.map_h << "," << r.map_w << "," << r.kernel << "," << cnt(r.in_row)
        << "," << cnt(static_cast<int>(ri)) << "," << rows[bi].second << "\n";
    ++bi;
  }
  std::printf("total %lld FLOPs (%.1fM, 1 MAC = 1 FLOP)\n", static_cast<long long>(total),
              static_cast<double>(total) / 1e6);
  csv << "total,,,,,," << total << "\n";
  return 0;
}

}  // namespace

int cmd_train_baseline(const RunConfig& cfg) {
  return cfg.precision == "f64" ? train_baseline_impl<double>(cfg) : train_baseline_impl<float>(cfg);
}

int cmd_collect_latency(const RunConfig& cfg) { return collect_latency_impl(cfg); }

int cmd_train_lpnet(const RunConfig& cfg) {
  return cfg.precision == "f64" ? train_lpnet_impl<double>(cfg) : train_lpnet_impl<float>(cfg);
}

int cmd_prune(const RunConfig& cfg) {
  return cfg.precision == "f64" ? prune_impl<double>(cfg) : prune_impl<float>(cfg);
}

int cmd_finetune(const RunConfig& cfg) {
  return cfg.precision == "f64" ? finetune_impl<double>(cfg) : finetune_impl<float>(cfg);
}

int cmd_flops(const RunConfig& cfg, const std::string& checkpoint,
              const std::string& encoding_csv) {
  return flops_impl(cfg, checkpoint, encoding_csv);
}

int cmd_report(const RunConfig& cfg) {
  write_report_files(cfg);
  return 0;
}

int run_command(const std::string& name, const RunConfig& cfg) {
  if (name == "train-baseline") return cmd_train_baseline(cfg);
  if (name == "collect-latency") return cmd_collect_latency(cfg);
  if (name == "train-lpnet") return cmd_train_lpnet(cfg);
  if (name == "prune") return cmd_prune(cfg);
  if (name == "finetune") return cmd_finetune(cfg);
  if (name == "flops") return cmd_flops(cfg);
  if (name == "report") return cmd_report(cfg);
  throw Error("unknown command: " + name);
}

}  // namespace gatecrush
