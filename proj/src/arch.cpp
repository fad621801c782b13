#include "gatecrush/arch.hpp"

#include <algorithm>

namespace gatecrush {

std::vector<int> GeometryTable::full_width_encoding() const {
  std::vector<int> enc(static_cast<size_t>(encoding_length), 0);
  for (const auto& r : rows)
    if (r.enc_index >= 0) enc[static_cast<size_t>(r.enc_index)] = r.out_max;
  return enc;
}

std::vector<int> GeometryTable::gated_encoding_slots() const {
  std::vector<int> slots;
  for (const auto& r : rows)
    if (r.gated && r.enc_index >= 0) slots.push_back(r.enc_index);
  std::sort(slots.begin(), slots.end());
  return slots;
}

const ConvGeom& GeometryTable::row_for_slot(int enc_index) const {
  for (const auto& r : rows)
    if (r.enc_index == enc_index) return r;
  throw Error("GeometryTable: no row for encoding slot " + std::to_string(enc_index));
}

ArchitectureSpec ArchitectureSpec::preset(const std::string& name) {
  ArchitectureSpec s;
  s.name = name;
  if (name == "vgg_small") {
    s.kind = ArchKind::Plain;
    s.plain_cfg = {32, 32, -1, 64, -1, 128, -1};
  } else if (name == "vgg16") {
    s.kind = ArchKind::Plain;
    s.plain_cfg = {64, 64, -1, 128, 128, -1, 256, 256, 256, -1, 512, 512, 512, -1,
                   512, 512, 512, -1};
  } else if (name == "toy2") {
    // two-conv plain net for gradient checks and smoke runs
    s.kind = ArchKind::Plain;
    s.plain_cfg = {8, -1, 8, -1};
  } else if (name == "resnet8" || name == "resnet20" || name == "resnet56") {
    s.kind = ArchKind::BasicBlockResidual;
    s.stem_width = 16;
    s.stage_widths = {16, 32, 64};
    const int n = name == "resnet8" ? 1 : (name == "resnet20" ? 3 : 9);
    s.stage_blocks = {n, n, n};
  } else {
    throw Error("unknown architecture preset: " + name);
  }
  return s;
}

std::vector<std::string> ArchitectureSpec::preset_names() {
  return {"vgg_small", "vgg16", "resnet8", "resnet20", "resnet56", "toy2"};
}

GeometryTable ArchitectureSpec::geometry() const {
  GeometryTable g;
  int enc = 0;
  int map = input_size;

  if (kind == ArchKind::Plain) {
    int conv_count = 0;
    for (int w : plain_cfg)
      if (w > 0) ++conv_count;
    check(conv_count >= 1, "architecture: plain net needs at least one conv");
    int prev_row = -1;
    int idx = 0;
    for (size_t i = 0; i < plain_cfg.size(); ++i) {
      if (plain_cfg[i] < 0) {
        check(map % 2 == 0, "architecture: pool on odd feature map");
        map /= 2;
        continue;
      }
      ConvGeom r;
      r.name = "conv" + std::to_string(idx + 1);
      r.kind = LayerKind::Conv;
      r.out_max = plain_cfg[i];
      r.in_row = prev_row;
      r.map_h = r.map_w = map;
      r.kernel = 3;
      r.stride = 1;
      r.downsample = (i + 1 < plain_cfg.size() && plain_cfg[i + 1] < 0);
      r.gated = (idx + 1 < conv_count);  // every conv except the last
      r.enc_index = enc++;
      prev_row = static_cast<int>(g.rows.size());
      g.rows.push_back(r);
      ++idx;
    }
    ConvGeom fc;
    fc.name = "fc";
    fc.kind = LayerKind::Linear;
    fc.out_max = num_classes;
    fc.in_row = prev_row;
    fc.map_h = fc.map_w = 1;
    fc.kernel = 0;
    g.rows.push_back(fc);
    g.main_path_weighted = conv_count + 1;
  } else {
    check(stage_widths.size() == stage_blocks.size(), "architecture: stage config mismatch");
    ConvGeom stem;
    stem.name = "stem";
    stem.out_max = stem_width;
    stem.in_row = -1;
    stem.map_h = stem.map_w = map;
    stem.kernel = 3;
    stem.enc_index = enc++;
    g.rows.push_back(stem);
    int prev_row = 0;
    int main_convs = 1;

    for (size_t si = 0; si < stage_widths.size(); ++si) {
      const int width = stage_widths[si];
      for (int b = 0; b < stage_blocks[si]; ++b) {
        const bool down = (si > 0 && b == 0);
        if (down) {
          check(map % 2 == 0, "architecture: downsample on odd feature map");
          map /= 2;
        }
        const std::string base = "s" + std::to_string(si + 1) + ".b" + std::to_string(b);
        const int block_in_row = prev_row;

        ConvGeom c1;
        c1.name = base + ".conv1";
        c1.out_max = width;
        c1.in_row = block_in_row;
        c1.map_h = c1.map_w = map;
        c1.kernel = 3;
        c1.stride = down ? 2 : 1;
        c1.downsample = down;
        c1.gated = true;  // first conv of each basic block
        c1.enc_index = enc++;
        const int c1_row = static_cast<int>(g.rows.size());
        g.rows.push_back(c1);

        ConvGeom c2;
        c2.name = base + ".conv2";
        c2.out_max = width;
        c2.in_row = c1_row;
        c2.map_h = c2.map_w = map;
        c2.kernel = 3;
        c2.stride = 1;
        c2.downsample = down;
        c2.gated = false;  // block output: shortcut rule
        c2.enc_index = enc++;
        const int c2_row = static_cast<int>(g.rows.size());
        g.rows.push_back(c2);
        main_convs += 2;

        const int in_width = g.rows[static_cast<size_t>(block_in_row)].out_max;
        if (down || in_width != width) {
          ConvGeom proj;
          proj.name = base + ".proj";
          proj.kind = LayerKind::Projection;
          proj.out_max = width;
          proj.in_row = block_in_row;
          proj.map_h = proj.map_w = map;
          proj.kernel = 1;
          proj.stride = down ? 2 : 1;
          proj.downsample = down;
          g.rows.push_back(proj);
        }
        prev_row = c2_row;
      }
    }
    ConvGeom fc;
    fc.name = "fc";
    fc.kind = LayerKind::Linear;
    fc.out_max = num_classes;
    fc.in_row = prev_row;
    fc.map_h = fc.map_w = 1;
    g.rows.push_back(fc);
    g.main_path_weighted = main_convs + 1;
  }

  g.encoding_length = enc;
  return g;
}

}  // namespace gatecrush
