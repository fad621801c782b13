#pragma once

#include <map>
#include <string>
#include <vector>

#include "gatecrush/efficiency.hpp"
#include "gatecrush/model.hpp"

namespace gatecrush {

struct TimingConfig {
  int batch_size = 16;  // paper-parity runs use 100
  int warmup_runs = 5;
  int timed_runs = 30;
  // per-measurement stability gate: iqr <= stability_iqr_frac * median
  double stability_iqr_frac = 0.15;
  // median must exceed this multiple of the clock granularity
  double min_resolution_mult = 10.0;
  // test hook; 0 means "measure the real clock"
  double clock_granularity_override_ms = 0.0;

  void validate() const {
    check(timed_runs >= 3, "TimingConfig: timed_runs must be >= 3");
    check(warmup_runs >= 1, "TimingConfig: warmup_runs must be >= 1");
    check(batch_size >= 1, "TimingConfig: batch_size must be >= 1");
  }
};

struct LatencyMeasurement {
  double median_ms = 0.0;
  double iqr_ms = 0.0;
  bool stable(double frac) const { return iqr_ms <= frac * median_ms; }
};

// Builds the base architecture with layer widths narrowed per the encoding;
// weights are randomly initialized (latency does not depend on them).
ConvNet<float> decode_network(const ArchitectureSpec& spec, const std::vector<int>& encoding,
                              uint64_t seed = 1);

// median (and IQR) wall-clock milliseconds over timed_runs eval-mode forwards
// of a fixed random batch, after warmup_runs unrecorded forwards.
LatencyMeasurement measure_latency(ConvNet<float>& model, const TimingConfig& cfg,
                                   uint64_t input_seed = 7);

double clock_granularity_ms();
std::string host_descriptor();

struct DatasetManifest {
  std::string host;
  std::string version;
  std::string arch;
  int batch_size = 0;
  int warmup_runs = 0;
  int timed_runs = 0;
  uint64_t seed = 0;

  bool compatible(const DatasetManifest& other) const {
    return host == other.host && arch == other.arch && batch_size == other.batch_size &&
           warmup_runs == other.warmup_runs && timed_runs == other.timed_runs;
  }
};

struct LatencyDataset {
  DatasetManifest manifest;
  std::vector<LatencySample> samples;
};

// File format: header line "gatecrush-latency v1", manifest as '#' comment
// lines, then one JSON record per sample with the encoding as comma-separated
// integers, latency_ms to 6 decimals, and iqr_ms.
void write_latency_dataset(const std::string& path, const LatencyDataset& ds);
void append_latency_samples(const std::string& path, const DatasetManifest& manifest,
                            const std::vector<LatencySample>& samples);
LatencyDataset read_latency_dataset(const std::string& path);

// Refuses to merge datasets whose manifests disagree.
LatencyDataset merge_latency_datasets(const LatencyDataset& a, const LatencyDataset& b);

struct CollectResult {
  LatencyDataset dataset;
  int unstable_count = 0;
};

// Samples encodings, decodes, measures, appends. Aborts if more than 5% of
// measurements fail the stability gate.
CollectResult collect_dataset(const ArchitectureSpec& spec, int n, const TimingConfig& cfg,
                              uint64_t seed, const std::string& out_path = "");

}  // namespace gatecrush
