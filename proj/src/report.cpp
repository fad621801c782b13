#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gatecrush/pipeline.hpp"
#include "gatecrush/pruner.hpp"

namespace gatecrush {

namespace {

namespace fs = std::filesystem;

// minimal line-plot SVG: axes, polyline per series, labels
void write_line_svg(const std::string& path, const std::string& title,
                    const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  const int W = 640, H = 400, ml = 60, mr = 20, mt = 40, mb = 40;
  double lo = 1e300, hi = -1e300;
  size_t n = 0;
  for (const auto& [name, ys] : series) {
    n = std::max(n, ys.size());
    for (double y : ys) {
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
  }
  if (n == 0) return;
  if (hi <= lo) hi = lo + 1.0;
  const double span = hi - lo;
  lo -= 0.05 * span;
  hi += 0.05 * span;

  auto sx = [&](size_t i) {
    return ml + (W - ml - mr) * (n > 1 ? static_cast<double>(i) / (n - 1) : 0.5);
  };
  auto sy = [&](double y) { return H - mb - (H - mt - mb) * (y - lo) / (hi - lo); };

  std::ofstream os(path, std::ios::trunc);
  check(os.is_open(), "report: cannot write " + path);
  char buf[256];
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
     << "</text>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
     << H - mb << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
     << "\" stroke=\"black\"/>\n";
  std::snprintf(buf, sizeof(buf), "%.4g", hi);
  os << "<text x=\"" << ml - 5 << "\" y=\"" << mt + 5 << "\" text-anchor=\"end\" font-size=\"11\">"
     << buf << "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.4g", lo);
  os << "<text x=\"" << ml - 5 << "\" y=\"" << H - mb << "\" text-anchor=\"end\" font-size=\"11\">"
     << buf << "</text>\n";
  os << "<text x=\"" << (W + ml) / 2 << "\" y=\"" << H - 8
     << "\" text-anchor=\"middle\" font-size=\"11\">epoch</text>\n";

  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  int ci = 0;
  for (const auto& [name, ys] : series) {
    os << "<polyline fill=\"none\" stroke=\"" << colors[ci % 4] << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < ys.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", sx(i), sy(ys[i]));
      os << buf;
    }
    os << "\"/>\n";
    os << "<text x=\"" << W - mr - 5 << "\" y=\"" << mt + 15 * (ci + 1)
       << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << colors[ci % 4] << "\">" << name
       << "</text>\n";
    ++ci;
  }
  os << "</svg>\n";
}

void write_bar_svg(const std::string& path, const std::string& title,
                   const std::vector<int>& values, const std::vector<int>& maxima) {
  const int W = 640, H = 400, ml = 60, mr = 20, mt = 40, mb = 40;
  const size_t n = values.size();
  if (n == 0) return;
  int hi = 1;
  for (int m : maxima) hi = std::max(hi, m);

  std::ofstream os(path, std::ios::trunc);
  check(os.is_open(), "report: cannot write " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
     << "</text>\n";
  const double bw = static_cast<double>(W - ml - mr) / (n * 2.0);
  for (size_t i = 0; i < n; ++i) {
    const double x = ml + (W - ml - mr) * static_cast<double>(i) / n;
    const double hmax = (H - mt - mb) * static_cast<double>(maxima[i]) / hi;
    const double hval = (H - mt - mb) * static_cast<double>(values[i]) / hi;
    os << "<rect x=\"" << x << "\" y=\"" << H - mb - hmax << "\" width=\"" << bw << "\" height=\""
       << hmax << "\" fill=\"#cccccc\"/>\n";
    os << "<rect x=\"" << x + bw * 0.2 << "\" y=\"" << H - mb - hval << "\" width=\"" << bw * 0.6
       << "\" height=\"" << hval << "\" fill=\"#1f77b4\"/>\n";
    os << "<text x=\"" << x + bw / 2 << "\" y=\"" << H - mb + 14
       << "\" text-anchor=\"middle\" font-size=\"9\">" << i + 1 << "</text>\n";
  }
  os << "<text x=\"" << (W + ml) / 2 << "\" y=\"" << H - 8
     << "\" text-anchor=\"middle\" font-size=\"11\">layer (grey = full width, blue = kept)</text>\n";
  os << "</svg>\n";
}

}  // namespace

void write_report_files(const RunConfig& cfg) {
  const std::string report_dir = cfg.out + "/report";
  fs::create_directories(report_dir);

  if (!fs::exists(cfg.history_csv()))
    throw Error("missing prerequisite artifact: prune history (" + cfg.history_csv() +
                "); run `prune` first");
  auto hist = read_history_csv(cfg.history_csv());
  check(!hist.empty(), "report: empty history");

  // accuracy vs efficiency, one row per epoch
  {
    std::ofstream os(report_dir + "/accuracy_vs_efficiency.csv", std::ios::trunc);
    os << "epoch,eff_value,eval_accuracy\n";
    char buf[64];
    for (const auto& m : hist) {
      os << m.epoch << ",";
      std::snprintf(buf, sizeof(buf), "%.9g", m.eff_value);
      os << buf << ",";
      std::snprintf(buf, sizeof(buf), "%.9g", m.eval_accuracy);
      os << buf << "\n";
    }
  }

  std::vector<double> train_loss, acc_loss, eff, acc;
  for (const auto& m : hist) {
    train_loss.push_back(m.train_loss);
    acc_loss.push_back(m.acc_loss);
    eff.push_back(m.eff_value);
    acc.push_back(m.eval_accuracy);
  }
  write_line_svg(report_dir + "/loss_curve.svg", "training loss",
                 {{"total", train_loss}, {"accuracy term", acc_loss}});
  write_line_svg(report_dir + "/efficiency_curve.svg", "predicted efficiency",
                 {{"eff", eff}});
  write_line_svg(report_dir + "/accuracy_curve.svg", "eval accuracy", {{"top1", acc}});

  // final encoding against full widths
  auto geom = cfg.make_arch().geometry();
  auto full = geom.full_width_encoding();
  const auto& enc = hist.back().encoding;
  check(enc.size() == full.size(), "report: history encoding does not match the architecture");
  {
    std::ofstream os(report_dir + "/encoding_bars.csv", std::ios::trunc);
    os << "slot,layer,kept,full\n";
    for (size_t i = 0; i < enc.size(); ++i)
      os << i << "," << geom.row_for_slot(static_cast<int>(i)).name << "," << enc[i] << ","
         << full[i] << "\n";
  }
  write_bar_svg(report_dir + "/encoding_bars.svg", "kept filters per layer", enc, full);

  std::printf("report: wrote %s\n", report_dir.c_str());
}

}  // namespace gatecrush
