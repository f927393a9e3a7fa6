#ifndef ELLADA_PLOT_HPP
#define ELLADA_PLOT_HPP

#include <string>
#include <vector>

namespace ellada::plot {

struct Series {
  std::string label;
  std::vector<double> x, y;
  std::string color;  // css color, auto-assigned when empty
};

/// Minimal static line/bar chart writer: SVG natively, PNG via a small
/// rasterizer + zlib-deflated encoder. No interactivity.
struct Figure {
  std::string title;
  std::string x_label, y_label;
  bool log_y = false;
  std::vector<Series> lines;
  std::vector<std::pair<std::string, double>> bars;  // bar chart when non-empty
  int width = 860, height = 520;

  void write_svg(const std::string& path) const;
  void write_png(const std::string& path) const;
};

}  // namespace ellada::plot

#endif
