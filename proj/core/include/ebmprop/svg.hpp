#pragma once

#include <string>
#include <vector>

namespace ebmprop {

// One density panel: value(ix, iy) = values[ix * ny + iy], iy counting from
// the bottom of the y range.
struct HeatPanel {
  std::string title;
  int nx = 0, ny = 0;
  std::vector<double> values;

  double at(int ix, int iy) const {
    return values[static_cast<size_t>(ix) * ny + iy];
  }
};

// Static side-by-side heatmaps with axes; each panel scaled to its own max.
// meta, when non-empty, is embedded as a comment (version / hash / seed stamp).
void write_heatmap_svg(const std::string& path, const std::vector<HeatPanel>& panels,
                       double x_min, double x_max, double y_min, double y_max,
                       const std::string& meta = "");

}  // namespace ebmprop
