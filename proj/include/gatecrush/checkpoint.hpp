#pragma once

#include <map>
#include <string>
#include <vector>

#include "gatecrush/optim.hpp"
#include "gatecrush/tensor.hpp"

namespace gatecrush {

// Checkpoint container: magic "GCKP", version u32, length-prefixed manifest of
// (name, shape) entries, then raw little-endian f32 payloads in manifest
// order. The on-disk payload is always f32; f64 tensors are narrowed on save.
struct CheckpointEntry {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> values;
};

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::string& path);

template <typename T>
void save_params(const std::string& path, const std::vector<NamedParam<T>>& params);

// Loads values into matching names; errors on any shape mismatch or missing
// parameter so partially restored models cannot arise silently.
template <typename T>
void load_params(const std::string& path, std::vector<NamedParam<T>>& params);

}  // namespace gatecrush
