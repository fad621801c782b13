#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gatecrush/common.hpp"
#include "gatecrush/tensor.hpp"

namespace gatecrush {

// Per-channel standardization constants, fixed in config for reproducibility.
struct NormalizationConstants {
  std::array<double, 3> mean{0.4914, 0.4822, 0.4465};
  std::array<double, 3> stddev{0.2470, 0.2435, 0.2616};
};

// In-memory dataset: raw u8 pixels in CIFAR plane order (R,G,B row-major),
// one label byte per image. Geometric augmentation runs on raw pixels; the
// standardization constants are applied when a batch is materialized.
struct DatasetHandle {
  std::string source;  // "cifar10" or "synthetic"
  int resolution = 32;
  int classes = 10;
  std::vector<std::vector<uint8_t>> images;  // each 3*res*res
  std::vector<int32_t> labels;
  NormalizationConstants norm;

  size_t size() const { return images.size(); }
  DatasetHandle subset(size_t n) const;
};

// Standard CIFAR-10 binary format: 3073-byte records, label byte then 3072
// pixel bytes (R plane, G plane, B plane, row-major 32x32).
DatasetHandle load_cifar10_file(const std::string& path);
// dir layout: data_batch_1..5.bin for train, test_batch.bin for test
DatasetHandle load_cifar10(const std::string& dir, const std::string& split);
void write_cifar10_file(const std::string& path, const DatasetHandle& data);

struct SyntheticConfig {
  int n = 1000;
  int classes = 10;
  int resolution = 32;
  uint64_t seed = 0;
  double noise = 0.25;        // per-pixel noise stddev in [0,1] units
  double color_jitter = 0.04; // per-image channel shift stddev; difficulty knob
};

// Deterministic separable Gaussian-blob images; class balance is exact when
// n is divisible by classes.
DatasetHandle synthetic_dataset(const SyntheticConfig& cfg);

// Versioned text container in the latency-dataset style: header line,
// '#' manifest, then one record per sample (label + base64 pixels).
void write_synthetic_dataset(const std::string& path, const DatasetHandle& data,
                             const SyntheticConfig& cfg);
DatasetHandle read_synthetic_dataset(const std::string& path);

struct AugmentConfig {
  int pad = 4;
  double flip_prob = 0.5;
};

// pad-4 zeros, random 32x32 crop, horizontal flip; raw-pixel domain,
// deterministic under the rng state. Returns crop/flip draws for testing.
struct AugmentDraw {
  int dx = 0, dy = 0;
  bool flip = false;
};
std::vector<uint8_t> augment_image(const std::vector<uint8_t>& img, int resolution,
                                   const AugmentConfig& cfg, Rng& rng, AugmentDraw* draw = nullptr);

// Deterministic batch stream: epoch ordering is a seeded shuffle, images are
// optionally augmented, then standardized into an NCHW float tensor.
template <typename T>
struct Batch {
  Tensor<T> images;
  std::vector<int32_t> labels;
};

template <typename T>
class BatchStream {
 public:
  BatchStream(const DatasetHandle& data, int batch_size, bool augment, uint64_t seed);

  void start_epoch(int epoch);
  bool next(Batch<T>& out);
  int batches_per_epoch() const;

 private:
  const DatasetHandle& data_;
  int batch_size_;
  bool augment_;
  uint64_t seed_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
  Rng rng_{0};
};

extern template class BatchStream<float>;
extern template class BatchStream<double>;

}  // namespace gatecrush
