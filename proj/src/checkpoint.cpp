#include "gatecrush/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace gatecrush {

namespace {

constexpr char kMagic[4] = {'G', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  check(static_cast<bool>(is), "checkpoint: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

float get_f32(std::istream& is) {
  uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.is_open(), "checkpoint: cannot open for write: " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(os, static_cast<uint32_t>(e.shape.size()));
    int64_t n = 1;
    for (int64_t d : e.shape) {
      put_u32(os, static_cast<uint32_t>(d));
      n *= d;
    }
    check(n == static_cast<int64_t>(e.values.size()), "checkpoint: shape/payload mismatch");
  }
  for (const auto& e : entries)
    for (float v : e.values) put_f32(os, v);
  check(static_cast<bool>(os), "checkpoint: write failed: " + path);
}

std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.is_open(), "checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  check(static_cast<bool>(is) && std::memcmp(magic, kMagic, 4) == 0,
        "checkpoint: bad magic bytes in " + path);
  const uint32_t version = get_u32(is);
  check(version == kVersion, "checkpoint: unsupported format version");
  const uint32_t count = get_u32(is);
  std::vector<CheckpointEntry> entries(count);
  for (auto& e : entries) {
    const uint32_t name_len = get_u32(is);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    check(static_cast<bool>(is), "checkpoint: truncated manifest");
    const uint32_t rank = get_u32(is);
    int64_t n = 1;
    e.shape.resize(rank);
    for (uint32_t i = 0; i < rank; ++i) {
      e.shape[i] = static_cast<int64_t>(get_u32(is));
      n *= e.shape[i];
    }
    e.values.resize(static_cast<size_t>(n));
  }
  for (auto& e : entries)
    for (auto& v : e.values) v = get_f32(is);
  return entries;
}

template <typename T>
void save_params(const std::string& path, const std::vector<NamedParam<T>>& params) {
  std::vector<CheckpointEntry> entries;
  entries.reserve(params.size());
  for (const auto& p : params) {
    CheckpointEntry e;
    e.name = p.name;
    e.shape = p.tensor.shape();
    e.values.assign(p.tensor.data_vec().begin(), p.tensor.data_vec().end());
    entries.push_back(std::move(e));
  }
  save_checkpoint(path, entries);
}

template <typename T>
void load_params(const std::string& path, std::vector<NamedParam<T>>& params) {
  auto entries = load_checkpoint(path);
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    check(it != by_name.end(), "checkpoint: missing parameter '" + p.name + "' in " + path);
    const auto& e = *it->second;
    check(e.shape == p.tensor.shape(), "checkpoint: shape mismatch for '" + p.name + "'");
    auto& data = p.tensor.data_vec();
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(e.values[i]);
  }
}

template void save_params<float>(const std::string&, const std::vector<NamedParam<float>>&);
template void save_params<double>(const std::string&, const std::vector<NamedParam<double>>&);
template void load_params<float>(const std::string&, std::vector<NamedParam<float>>&);
template void load_params<double>(const std::string&, std::vector<NamedParam<double>>&);

}  // namespace gatecrush
