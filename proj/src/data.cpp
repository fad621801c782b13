#include "gatecrush/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace gatecrush {

namespace {
constexpr int64_t kCifarRecord = 3073;
constexpr int64_t kCifarPixels = 3072;

const char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string b64_encode(const std::vector<uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (size_t i = 0; i < bytes.size(); i += 3) {
    uint32_t v = static_cast<uint32_t>(bytes[i]) << 16;
    int have = 1;
    if (i + 1 < bytes.size()) {
      v |= static_cast<uint32_t>(bytes[i + 1]) << 8;
      have = 2;
    }
    if (i + 2 < bytes.size()) {
      v |= bytes[i + 2];
      have = 3;
    }
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(have >= 2 ? kB64[(v >> 6) & 63] : '=');
    out.push_back(have >= 3 ? kB64[v & 63] : '=');
  }
  return out;
}

std::vector<uint8_t> b64_decode(const std::string& s) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<uint8_t> out;
  uint32_t v = 0;
  int bits = 0;
  for (char c : s) {
    if (c == '=') break;
    const int d = val(c);
    check(d >= 0, "synthetic dataset: invalid base64 payload");
    v = (v << 6) | static_cast<uint32_t>(d);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<uint8_t>((v >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace

DatasetHandle DatasetHandle::subset(size_t n) const {
  DatasetHandle out = *this;
  if (n < images.size()) {
    out.images.assign(images.begin(), images.begin() + static_cast<long>(n));
    out.labels.assign(labels.begin(), labels.begin() + static_cast<long>(n));
  }
  return out;
}

DatasetHandle load_cifar10_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  check(is.is_open(), "cifar10: cannot open " + path);
  const int64_t size = static_cast<int64_t>(is.tellg());
  check(size > 0 && size % kCifarRecord == 0,
        "cifar10: truncated file (size not a multiple of 3073): " + path);
  const int64_t count = size / kCifarRecord;
  is.seekg(0);

  DatasetHandle ds;
  ds.source = "cifar10";
  ds.images.reserve(static_cast<size_t>(count));
  ds.labels.reserve(static_cast<size_t>(count));
  std::vector<uint8_t> record(kCifarRecord);
  for (int64_t i = 0; i < count; ++i) {
    is.read(reinterpret_cast<char*>(record.data()), kCifarRecord);
    check(static_cast<bool>(is), "cifar10: read failed at record " + std::to_string(i));
    const int label = record[0];
    check(label >= 0 && label <= 9, "cifar10: label byte out of range 0..9");
    ds.labels.push_back(static_cast<int32_t>(label));
    ds.images.emplace_back(record.begin() + 1, record.end());
  }
  return ds;
}

DatasetHandle load_cifar10(const std::string& dir, const std::string& split) {
  DatasetHandle ds;
  ds.source = "cifar10";
  if (split == "test") {
    return load_cifar10_file(dir + "/test_batch.bin");
  }
  check(split == "train", "cifar10: split must be train or test");
  for (int i = 1; i <= 5; ++i) {
    auto part = load_cifar10_file(dir + "/data_batch_" + std::to_string(i) + ".bin");
    ds.images.insert(ds.images.end(), part.images.begin(), part.images.end());
    ds.labels.insert(ds.labels.end(), part.labels.begin(), part.labels.end());
  }
  return ds;
}

void write_cifar10_file(const std::string& path, const DatasetHandle& data) {
  check(data.resolution == 32, "cifar10: format is fixed at 32x32");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.is_open(), "cifar10: cannot open for write: " + path);
  for (size_t i = 0; i < data.images.size(); ++i) {
    const uint8_t label = static_cast<uint8_t>(data.labels[i]);
    os.write(reinterpret_cast<const char*>(&label), 1);
    check(static_cast<int64_t>(data.images[i].size()) == kCifarPixels,
          "cifar10: image payload must be 3072 bytes");
    os.write(reinterpret_cast<const char*>(data.images[i].data()), kCifarPixels);
  }
}

DatasetHandle synthetic_dataset(const SyntheticConfig& cfg) {
  check(cfg.n >= cfg.classes, "synthetic_dataset: n must be >= classes");
  DatasetHandle ds;
  ds.source = "synthetic";
  ds.resolution = cfg.resolution;
  ds.classes = cfg.classes;
  Rng rng(cfg.seed);
  const int res = cfg.resolution;
  const int plane = res * res;

  // Class identity lives in crop/flip-invariant features: the blob's
  // per-channel amplitudes and its size. The center is random per image so
  // the standard augmentation cannot relabel a sample. Difficulty comes from
  // per-pixel noise and a per-image channel shift.
  const int m = cfg.classes;
  for (int i = 0; i < cfg.n; ++i) {
    const int label = i % m;
    const double cx = rng.uniform(0.35, 0.65);
    const double cy = rng.uniform(0.35, 0.65);
    const double sigma = 0.10 + 0.03 * (label % 3);
    std::array<double, 3> amp{0.30 + 0.60 * ((label * 7 + 1) % m) / std::max(1, m - 1),
                              0.30 + 0.60 * ((label * 3 + 4) % m) / std::max(1, m - 1),
                              0.30 + 0.60 * ((label * 9 + 2) % m) / std::max(1, m - 1)};
    std::array<double, 3> jitter{cfg.color_jitter * rng.normal(),
                                 cfg.color_jitter * rng.normal(),
                                 cfg.color_jitter * rng.normal()};
    std::vector<uint8_t> img(static_cast<size_t>(3 * plane));
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
          const double fx = (x + 0.5) / res - cx;
          const double fy = (y + 0.5) / res - cy;
          const double blob = amp[static_cast<size_t>(c)] *
                              std::exp(-(fx * fx + fy * fy) / (2.0 * sigma * sigma));
          double v = 0.1 + blob + jitter[static_cast<size_t>(c)] + cfg.noise * rng.normal();
          v = std::clamp(v, 0.0, 1.0);
          img[static_cast<size_t>(c * plane + y * res + x)] =
              static_cast<uint8_t>(std::lround(v * 255.0));
        }
      }
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

void write_synthetic_dataset(const std::string& path, const DatasetHandle& data,
                             const SyntheticConfig& cfg) {
  std::ofstream os(path, std::ios::trunc);
  check(os.is_open(), "synthetic dataset: cannot open for write: " + path);
  os << "gatecrush-synthetic v1\n";
  os << "# n=" << data.images.size() << "\n";
  os << "# classes=" << data.classes << "\n";
  os << "# resolution=" << data.resolution << "\n";
  os << "# seed=" << cfg.seed << "\n";
  os << "# noise=" << cfg.noise << "\n";
  os << "# color_jitter=" << cfg.color_jitter << "\n";
  for (size_t i = 0; i < data.images.size(); ++i)
    os << data.labels[i] << " " << b64_encode(data.images[i]) << "\n";
}

DatasetHandle read_synthetic_dataset(const std::string& path) {
  std::ifstream is(path);
  check(is.is_open(), "synthetic dataset: cannot open: " + path);
  std::string line;
  check(static_cast<bool>(std::getline(is, line)) && line == "gatecrush-synthetic v1",
        "synthetic dataset: bad or missing header");
  DatasetHandle ds;
  ds.source = "synthetic";
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2);
      const std::string val = line.substr(eq + 1);
      if (key == "classes") ds.classes = std::stoi(val);
      if (key == "resolution") ds.resolution = std::stoi(val);
      continue;
    }
    std::stringstream ss(line);
    int label;
    std::string payload;
    ss >> label >> payload;
    ds.labels.push_back(label);
    ds.images.push_back(b64_decode(payload));
    check(static_cast<int64_t>(ds.images.back().size()) ==
              3LL * ds.resolution * ds.resolution,
          "synthetic dataset: payload size mismatch");
  }
  return ds;
}

std::vector<uint8_t> augment_image(const std::vector<uint8_t>& img, int resolution,
                                   const AugmentConfig& cfg, Rng& rng, AugmentDraw* draw) {
  const int res = resolution;
  const int plane = res * res;
  AugmentDraw d;
  d.dx = static_cast<int>(rng.uniform_int(0, 2 * cfg.pad));
  d.dy = static_cast<int>(rng.uniform_int(0, 2 * cfg.pad));
  d.flip = rng.bernoulli(cfg.flip_prob);
  if (draw) *draw = d;

  std::vector<uint8_t> out(img.size(), 0);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < res; ++y) {
      // source row in the padded image
      const int sy = y + d.dy - cfg.pad;
      if (sy < 0 || sy >= res) continue;  // zero padding
      for (int x = 0; x < res; ++x) {
        const int sx = x + d.dx - cfg.pad;
        if (sx < 0 || sx >= res) continue;
        const int ox = d.flip ? (res - 1 - x) : x;
        out[static_cast<size_t>(c * plane + y * res + ox)] =
            img[static_cast<size_t>(c * plane + sy * res + sx)];
      }
    }
  }
  return out;
}

template <typename T>
BatchStream<T>::BatchStream(const DatasetHandle& data, int batch_size, bool augment, uint64_t seed)
    : data_(data), batch_size_(batch_size), augment_(augment), seed_(seed) {
  check(batch_size_ >= 1, "BatchStream: batch size must be >= 1");
  order_.resize(data_.size());
  std::iota(order_.begin(), order_.end(), 0);
}

template <typename T>
void BatchStream<T>::start_epoch(int epoch) {
  rng_ = Rng(seed_ + 0x517cc1b727220a95ull * static_cast<uint64_t>(epoch + 1));
  std::iota(order_.begin(), order_.end(), 0);
  if (augment_) rng_.shuffle(order_);
  cursor_ = 0;
}

template <typename T>
int BatchStream<T>::batches_per_epoch() const {
  return static_cast<int>((data_.size() + static_cast<size_t>(batch_size_) - 1) /
                          static_cast<size_t>(batch_size_));
}

template <typename T>
bool BatchStream<T>::next(Batch<T>& out) {
  if (cursor_ >= order_.size()) return false;
  const size_t end = std::min(order_.size(), cursor_ + static_cast<size_t>(batch_size_));
  const int64_t B = static_cast<int64_t>(end - cursor_);
  const int res = data_.resolution;
  const int plane = res * res;
  AugmentConfig acfg;

  std::vector<T> buf(static_cast<size_t>(B * 3 * plane));
  out.labels.resize(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b) {
    const size_t idx = order_[cursor_ + static_cast<size_t>(b)];
    const auto& raw = data_.images[idx];
    std::vector<uint8_t> img = augment_ ? augment_image(raw, res, acfg, rng_) : raw;
    out.labels[static_cast<size_t>(b)] = data_.labels[idx];
    for (int c = 0; c < 3; ++c) {
      const double mean = data_.norm.mean[static_cast<size_t>(c)];
      const double sd = data_.norm.stddev[static_cast<size_t>(c)];
      for (int i = 0; i < plane; ++i) {
        const double v = img[static_cast<size_t>(c * plane + i)] / 255.0;
        buf[static_cast<size_t>((b * 3 + c) * plane + i)] = static_cast<T>((v - mean) / sd);
      }
    }
  }
  out.images = Tensor<T>::from_vector(std::move(buf), {B, 3, res, res});
  cursor_ = end;
  return true;
}

template class BatchStream<float>;
template class BatchStream<double>;

}  // namespace gatecrush
