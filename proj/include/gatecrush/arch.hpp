#pragma once

#include <string>
#include <vector>

#include "gatecrush/common.hpp"

namespace gatecrush {

enum class ArchKind { Plain, BasicBlockResidual };

enum class LayerKind { Conv, Projection, Linear };

// One weighted layer of the base architecture. map_h/map_w is the layer's
// output feature-map size, so F = map_h*map_w*K^2*c_in*c_out counts real MACs
// for strided convs as well.
struct ConvGeom {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  int out_max = 0;
  int in_row = -1;  // geometry row supplying input channels; -1 = input image
  int map_h = 0, map_w = 0;
  int kernel = 0;
  int stride = 1;
  bool downsample = false;
  bool gated = false;
  int enc_index = -1;  // slot in the network encoding; -1 for rows outside it
};

struct GeometryTable {
  std::vector<ConvGeom> rows;
  int encoding_length = 0;
  // stem + block convs + classifier; the 6n+2 count for basic-block resnets
  int main_path_weighted = 0;

  std::vector<int> full_width_encoding() const;
  std::vector<int> gated_encoding_slots() const;
  const ConvGeom& row_for_slot(int enc_index) const;
};

struct ArchitectureSpec {
  std::string name;
  ArchKind kind = ArchKind::Plain;
  int input_channels = 3;
  int input_size = 32;
  int num_classes = 10;

  // plain nets: conv widths in order; -1 marks a 2x2 maxpool
  std::vector<int> plain_cfg;

  // basic-block residual nets
  int stem_width = 16;
  std::vector<int> stage_widths;
  std::vector<int> stage_blocks;

  // presets: vgg_small, vgg16, resnet8, resnet20, resnet56, toy2 (2-conv net)
  static ArchitectureSpec preset(const std::string& name);
  static std::vector<std::string> preset_names();

  GeometryTable geometry() const;
};

}  // namespace gatecrush
