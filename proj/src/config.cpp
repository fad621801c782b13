#include "gatecrush/config.hpp"

#include <fstream>
#include <set>

namespace gatecrush {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  check(j.is_object(), "config: section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    check(known.count(it.key()) > 0, "config: unknown key '" + where + "." + it.key() + "'");
}

template <typename T>
void get_if(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  reject_unknown(j, {"seed", "precision", "out", "architecture", "dataset", "baseline",
                     "finetune", "prune", "lpnet", "latency"},
                 "<root>");
  get_if(j, "seed", c.seed);
  get_if(j, "precision", c.precision);
  get_if(j, "out", c.out);
  check(c.precision == "f32" || c.precision == "f64", "config: precision must be f32 or f64");

  if (j.contains("architecture")) {
    const auto& a = j.at("architecture");
    reject_unknown(a, {"preset", "input_size", "num_classes"}, "architecture");
    get_if(a, "preset", c.architecture.preset);
    get_if(a, "input_size", c.architecture.input_size);
    get_if(a, "num_classes", c.architecture.num_classes);
  }
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    reject_unknown(d,
                   {"source", "path", "train_count", "eval_count", "classes", "resolution",
                    "noise", "color_jitter", "seed"},
                   "dataset");
    get_if(d, "source", c.dataset.source);
    get_if(d, "path", c.dataset.path);
    get_if(d, "train_count", c.dataset.train_count);
    get_if(d, "eval_count", c.dataset.eval_count);
    get_if(d, "classes", c.dataset.classes);
    get_if(d, "resolution", c.dataset.resolution);
    get_if(d, "noise", c.dataset.noise);
    get_if(d, "color_jitter", c.dataset.color_jitter);
    get_if(d, "seed", c.dataset.seed);
    check(c.dataset.source == "synthetic" || c.dataset.source == "cifar10",
          "config: dataset.source must be synthetic or cifar10");
  }
  auto parse_stage = [&](const char* key, StageSection& s) {
    if (!j.contains(key)) return;
    const auto& b = j.at(key);
    reject_unknown(b, {"epochs", "lr", "momentum", "weight_decay", "batch_size", "lr_schedule"},
                   key);
    get_if(b, "epochs", s.epochs);
    get_if(b, "lr", s.lr);
    get_if(b, "momentum", s.momentum);
    get_if(b, "weight_decay", s.weight_decay);
    get_if(b, "batch_size", s.batch_size);
    get_if(b, "lr_schedule", s.lr_schedule);
  };
  parse_stage("baseline", c.baseline);
  parse_stage("finetune", c.finetune_stage);

  if (j.contains("prune")) {
    const auto& p = j.at("prune");
    reject_unknown(p,
                   {"alpha", "efficiency", "epochs", "lr", "momentum", "weight_decay",
                    "batch_size", "lr_schedule", "min_open_gates", "gate_bias", "sigmoid_k"},
                   "prune");
    get_if(p, "alpha", c.prune.alpha);
    get_if(p, "efficiency", c.prune.efficiency);
    get_if(p, "epochs", c.prune.epochs);
    get_if(p, "lr", c.prune.lr);
    get_if(p, "momentum", c.prune.momentum);
    get_if(p, "weight_decay", c.prune.weight_decay);
    get_if(p, "batch_size", c.prune.batch_size);
    get_if(p, "lr_schedule", c.prune.lr_schedule);
    get_if(p, "min_open_gates", c.prune.min_open_gates);
    get_if(p, "gate_bias", c.prune.gate_bias);
    get_if(p, "sigmoid_k", c.prune.sigmoid_k);
    check(c.prune.efficiency == "latency" || c.prune.efficiency == "flops" ||
              c.prune.efficiency == "l1",
          "config: prune.efficiency must be latency, flops, or l1");
  }
  if (j.contains("lpnet")) {
    const auto& l = j.at("lpnet");
    reject_unknown(l, {"samples", "epochs", "lr", "batch_size", "hidden", "split", "max_rel_error"},
                   "lpnet");
    get_if(l, "samples", c.lpnet.samples);
    get_if(l, "epochs", c.lpnet.epochs);
    get_if(l, "lr", c.lpnet.lr);
    get_if(l, "batch_size", c.lpnet.batch_size);
    get_if(l, "hidden", c.lpnet.hidden);
    get_if(l, "split", c.lpnet.split);
    get_if(l, "max_rel_error", c.lpnet.max_rel_error);
  }
  if (j.contains("latency")) {
    const auto& l = j.at("latency");
    reject_unknown(
        l, {"batch_size", "warmup_runs", "timed_runs", "samples", "stability_iqr_frac",
            "paper_parity"},
        "latency");
    get_if(l, "batch_size", c.latency.batch_size);
    get_if(l, "warmup_runs", c.latency.warmup_runs);
    get_if(l, "timed_runs", c.latency.timed_runs);
    get_if(l, "samples", c.latency.samples);
    get_if(l, "stability_iqr_frac", c.latency.stability_iqr_frac);
    get_if(l, "paper_parity", c.latency.paper_parity);
  }
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  check(is.is_open(), "config: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw Error("config: parse error in " + path + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["precision"] = precision;
  j["out"] = out;
  j["architecture"] = {{"preset", architecture.preset},
                       {"input_size", architecture.input_size},
                       {"num_classes", architecture.num_classes}};
  j["dataset"] = {{"source", dataset.source},         {"path", dataset.path},
                  {"train_count", dataset.train_count}, {"eval_count", dataset.eval_count},
                  {"classes", dataset.classes},        {"resolution", dataset.resolution},
                  {"noise", dataset.noise},            {"color_jitter", dataset.color_jitter},
                  {"seed", dataset.seed}};
  auto stage = [](const StageSection& s) {
    return json{{"epochs", s.epochs},           {"lr", s.lr},
                {"momentum", s.momentum},       {"weight_decay", s.weight_decay},
                {"batch_size", s.batch_size},   {"lr_schedule", s.lr_schedule}};
  };
  j["baseline"] = stage(baseline);
  j["finetune"] = stage(finetune_stage);
  j["prune"] = {{"alpha", prune.alpha},
                {"efficiency", prune.efficiency},
                {"epochs", prune.epochs},
                {"lr", prune.lr},
                {"momentum", prune.momentum},
                {"weight_decay", prune.weight_decay},
                {"batch_size", prune.batch_size},
                {"lr_schedule", prune.lr_schedule},
                {"min_open_gates", prune.min_open_gates},
                {"gate_bias", prune.gate_bias},
                {"sigmoid_k", prune.sigmoid_k}};
  j["lpnet"] = {{"samples", lpnet.samples},       {"epochs", lpnet.epochs},
                {"lr", lpnet.lr},                 {"batch_size", lpnet.batch_size},
                {"hidden", lpnet.hidden},         {"split", lpnet.split},
                {"max_rel_error", lpnet.max_rel_error}};
  j["latency"] = {{"batch_size", latency.batch_size},
                  {"warmup_runs", latency.warmup_runs},
                  {"timed_runs", latency.timed_runs},
                  {"samples", latency.samples},
                  {"stability_iqr_frac", latency.stability_iqr_frac},
                  {"paper_parity", latency.paper_parity}};
  return j;
}

void RunConfig::write_resolved(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  check(os.is_open(), "config: cannot write resolved config to " + path);
  os << to_json().dump(2) << "\n";
}

ArchitectureSpec RunConfig::make_arch() const {
  auto spec = ArchitectureSpec::preset(architecture.preset);
  spec.input_size = architecture.input_size;
  spec.num_classes = architecture.num_classes;
  return spec;
}

std::pair<DatasetHandle, DatasetHandle> RunConfig::make_datasets() const {
  if (dataset.source == "cifar10") {
    check(!dataset.path.empty(), "config: dataset.path required for cifar10");
    auto train = load_cifar10(dataset.path, "train").subset(static_cast<size_t>(dataset.train_count));
    auto eval = load_cifar10(dataset.path, "test").subset(static_cast<size_t>(dataset.eval_count));
    return {std::move(train), std::move(eval)};
  }
  SyntheticConfig s;
  s.n = dataset.train_count;
  s.classes = dataset.classes;
  s.resolution = dataset.resolution;
  s.seed = dataset.seed;
  s.noise = dataset.noise;
  s.color_jitter = dataset.color_jitter;
  auto train = synthetic_dataset(s);
  s.n = dataset.eval_count;
  s.seed = dataset.seed + 1;
  auto eval = synthetic_dataset(s);
  return {std::move(train), std::move(eval)};
}

TrainConfig RunConfig::baseline_train_config() const {
  TrainConfig t;
  t.epochs = baseline.epochs;
  t.lr = baseline.lr;
  t.momentum = baseline.momentum;
  t.weight_decay = baseline.weight_decay;
  t.batch_size = baseline.batch_size;
  t.lr_schedule = baseline.lr_schedule;
  t.seed = seed;
  return t;
}

TrainConfig RunConfig::finetune_train_config() const {
  TrainConfig t;
  t.epochs = finetune_stage.epochs;
  t.lr = finetune_stage.lr;
  t.momentum = finetune_stage.momentum;
  t.weight_decay = finetune_stage.weight_decay;
  t.batch_size = finetune_stage.batch_size;
  t.lr_schedule = finetune_stage.lr_schedule;
  t.seed = seed + 2;
  return t;
}

PruneConfig RunConfig::prune_config() const {
  PruneConfig p;
  p.alpha = prune.alpha;
  p.mode = prune.efficiency;
  p.train.epochs = prune.epochs;
  p.train.lr = prune.lr;
  p.train.momentum = prune.momentum;
  p.train.weight_decay = prune.weight_decay;
  p.train.batch_size = prune.batch_size;
  p.train.lr_schedule = prune.lr_schedule;
  p.train.seed = seed + 1;
  p.min_open_gates = prune.min_open_gates;
  p.gate_bias = prune.gate_bias;
  p.sigmoid_k = prune.sigmoid_k;
  return p;
}

TimingConfig RunConfig::timing_config() const {
  TimingConfig t;
  t.batch_size = latency.paper_parity ? 100 : latency.batch_size;
  t.warmup_runs = latency.warmup_runs;
  t.timed_runs = latency.timed_runs;
  t.stability_iqr_frac = latency.stability_iqr_frac;
  return t;
}

}  // namespace gatecrush
