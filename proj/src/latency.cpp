#include "gatecrush/latency.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <sys/utsname.h>

namespace gatecrush {

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(sorted.size() - 1, lo + 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

double clock_granularity_ms() {
  using clock = std::chrono::steady_clock;
  double best = 1e9;
  for (int i = 0; i < 64; ++i) {
    auto t0 = clock::now();
    auto t1 = clock::now();
    while (t1 == t0) t1 = clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

std::string host_descriptor() {
  struct utsname u;
  if (uname(&u) != 0) return "unknown";
  std::string cpu = "unknown-cpu";
  std::ifstream cpuinfo("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpuinfo, line)) {
    if (line.rfind("model name", 0) == 0) {
      auto pos = line.find(':');
      if (pos != std::string::npos) {
        cpu = line.substr(pos + 1);
        while (!cpu.empty() && cpu.front() == ' ') cpu.erase(cpu.begin());
      }
      break;
    }
  }
  return std::string(u.machine) + "/" + u.sysname + "/" + cpu;
}

ConvNet<float> decode_network(const ArchitectureSpec& spec, const std::vector<int>& encoding,
                              uint64_t seed) {
  return ConvNet<float>(spec, encoding, seed);
}

LatencyMeasurement measure_latency(ConvNet<float>& model, const TimingConfig& cfg,
                                   uint64_t input_seed) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  Rng rng(input_seed);
  const int res = model.spec().input_size;
  auto batch = Tensor<float>::randn({cfg.batch_size, model.spec().input_channels, res, res}, rng);

  for (int i = 0; i < cfg.warmup_runs; ++i) (void)model.forward(batch, /*train=*/false);

  std::vector<double> times;
  times.reserve(static_cast<size_t>(cfg.timed_runs));
  for (int i = 0; i < cfg.timed_runs; ++i) {
    auto t0 = clock::now();
    (void)model.forward(batch, /*train=*/false);
    auto t1 = clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  LatencyMeasurement m;
  m.median_ms = quantile_sorted(times, 0.5);
  m.iqr_ms = quantile_sorted(times, 0.75) - quantile_sorted(times, 0.25);

  const double gran = cfg.clock_granularity_override_ms > 0.0 ? cfg.clock_granularity_override_ms
                                                              : clock_granularity_ms();
  check(m.median_ms >= cfg.min_resolution_mult * gran,
        "measure_latency: timing resolution too coarse for this model (median " +
            std::to_string(m.median_ms) + " ms vs clock granularity " + std::to_string(gran) +
            " ms)");
  return m;
}

namespace {

void write_manifest(std::ostream& os, const DatasetManifest& m) {
  os << "gatecrush-latency v1\n";
  os << "# host=" << m.host << "\n";
  os << "# version=" << m.version << "\n";
  os << "# arch=" << m.arch << "\n";
  os << "# batch_size=" << m.batch_size << "\n";
  os << "# warmup_runs=" << m.warmup_runs << "\n";
  os << "# timed_runs=" << m.timed_runs << "\n";
  os << "# seed=" << m.seed << "\n";
}

void write_sample(std::ostream& os, const LatencySample& s) {
  os << "{\"encoding\":[";
  for (size_t i = 0; i < s.encoding.size(); ++i) {
    if (i) os << ",";
    os << s.encoding[i];
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", s.latency_ms);
  os << "],\"latency_ms\":" << buf;
  std::snprintf(buf, sizeof(buf), "%.6f", s.iqr_ms);
  os << ",\"iqr_ms\":" << buf << "}\n";
}

}  // namespace

void write_latency_dataset(const std::string& path, const LatencyDataset& ds) {
  std::ofstream os(path, std::ios::trunc);
  check(os.is_open(), "latency dataset: cannot open for write: " + path);
  write_manifest(os, ds.manifest);
  for (const auto& s : ds.samples) write_sample(os, s);
  check(static_cast<bool>(os), "latency dataset: write failed");
}

void append_latency_samples(const std::string& path, const DatasetManifest& manifest,
                            const std::vector<LatencySample>& samples) {
  std::ifstream probe(path);
  if (!probe.good()) {
    LatencyDataset ds;
    ds.manifest = manifest;
    ds.samples = samples;
    write_latency_dataset(path, ds);
    return;
  }
  probe.close();
  auto existing = read_latency_dataset(path);
  check(existing.manifest.compatible(manifest),
        "latency dataset: manifest mismatch; refusing to append to " + path);
  std::ofstream os(path, std::ios::app);
  check(os.is_open(), "latency dataset: cannot open for append: " + path);
  for (const auto& s : samples) write_sample(os, s);
}

LatencyDataset read_latency_dataset(const std::string& path) {
  std::ifstream is(path);
  check(is.is_open(), "latency dataset: cannot open: " + path);
  std::string line;
  check(static_cast<bool>(std::getline(is, line)) && line == "gatecrush-latency v1",
        "latency dataset: bad or missing header in " + path);
  LatencyDataset ds;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(2, eq - 2);
      std::string val = line.substr(eq + 1);
      if (key == "host") ds.manifest.host = val;
      else if (key == "version") ds.manifest.version = val;
      else if (key == "arch") ds.manifest.arch = val;
      else if (key == "batch_size") ds.manifest.batch_size = std::stoi(val);
      else if (key == "warmup_runs") ds.manifest.warmup_runs = std::stoi(val);
      else if (key == "timed_runs") ds.manifest.timed_runs = std::stoi(val);
      else if (key == "seed") ds.manifest.seed = std::stoull(val);
      continue;
    }
    LatencySample s;
    auto enc_start = line.find('[');
    auto enc_end = line.find(']');
    check(enc_start != std::string::npos && enc_end != std::string::npos,
          "latency dataset: malformed record: " + line);
    std::stringstream enc(line.substr(enc_start + 1, enc_end - enc_start - 1));
    std::string tok;
    while (std::getline(enc, tok, ',')) s.encoding.push_back(std::stoi(tok));
    auto lat_pos = line.find("\"latency_ms\":");
    auto iqr_pos = line.find("\"iqr_ms\":");
    check(lat_pos != std::string::npos && iqr_pos != std::string::npos,
          "latency dataset: malformed record: " + line);
    s.latency_ms = std::stod(line.substr(lat_pos + 13));
    s.iqr_ms = std::stod(line.substr(iqr_pos + 9));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

LatencyDataset merge_latency_datasets(const LatencyDataset& a, const LatencyDataset& b) {
  check(a.manifest.compatible(b.manifest),
        "latency dataset: manifest mismatch (host/config differ); merge refused");
  LatencyDataset out = a;
  out.samples.insert(out.samples.end(), b.samples.begin(), b.samples.end());
  return out;
}

CollectResult collect_dataset(const ArchitectureSpec& spec, int n, const TimingConfig& cfg,
                              uint64_t seed, const std::string& out_path) {
  check(n >= 1, "collect_dataset: n must be >= 1");
  cfg.validate();
  auto geom = spec.geometry();
  auto encodings = sample_encodings(geom, n, seed);

  CollectResult res;
  res.dataset.manifest.host = host_descriptor();
  res.dataset.manifest.version = toolkit_version();
  res.dataset.manifest.arch = spec.name;
  res.dataset.manifest.batch_size = cfg.batch_size;
  res.dataset.manifest.warmup_runs = cfg.warmup_runs;
  res.dataset.manifest.timed_runs = cfg.timed_runs;
  res.dataset.manifest.seed = seed;

  Rng model_seeds(seed ^ 0x9e3779b97f4a7c15ull);
  for (const auto& enc : encodings) {
    auto model = decode_network(spec, enc, model_seeds.raw());
    auto m = measure_latency(model, cfg, model_seeds.raw());
    if (!m.stable(cfg.stability_iqr_frac)) ++res.unstable_count;
    LatencySample s;
    s.encoding = enc;
    s.latency_ms = m.median_ms;
    s.iqr_ms = m.iqr_ms;
    res.dataset.samples.push_back(std::move(s));
    check(res.unstable_count * 20 <= n,
          "collect_dataset: more than 5% of measurements failed the stability gate; aborting");
  }
  if (!out_path.empty()) write_latency_dataset(out_path, res.dataset);
  return res;
}

}  // namespace gatecrush
