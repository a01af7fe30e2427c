#include "ebmprop/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace ebmprop {

namespace {

struct Color {
  int r, g, b;
};

// dark blue -> teal -> yellow ramp
Color ramp(double t) {
  static const Color stops[] = {
      {13, 8, 135}, {126, 3, 168}, {204, 71, 120}, {248, 149, 64}, {240, 249, 33}};
  t = std::clamp(t, 0.0, 1.0) * 3.999;
  const int i = static_cast<int>(t);
  const double f = t - i;
  return {static_cast<int>(stops[i].r + f * (stops[i + 1].r - stops[i].r)),
          static_cast<int>(stops[i].g + f * (stops[i + 1].g - stops[i].g)),
          static_cast<int>(stops[i].b + f * (stops[i + 1].b - stops[i].b))};
}

}  // namespace

void write_heatmap_svg(const std::string& path, const std::vector<HeatPanel>& panels,
                       double x_min, double x_max, double y_min, double y_max,
                       const std::string& meta) {
  if (panels.empty()) throw std::invalid_argument("write_heatmap_svg: no panels");
  const int pw = 280, ph = 280, margin = 44, title_h = 24;
  const int total_w = margin + static_cast<int>(panels.size()) * (pw + margin);
  const int total_h = title_h + ph + margin + 18;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write svg: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << total_w
      << "\" height=\"" << total_h << "\" font-family=\"sans-serif\">\n";
  if (!meta.empty()) out << "<!-- " << meta << " -->\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  char buf[256];
  for (size_t p = 0; p < panels.size(); ++p) {
    const HeatPanel& panel = panels[p];
    if (panel.nx <= 0 || panel.ny <= 0 ||
        panel.values.size() != static_cast<size_t>(panel.nx) * panel.ny)
      throw std::invalid_argument("write_heatmap_svg: bad panel dimensions");
    const int x0 = margin + static_cast<int>(p) * (pw + margin);
    const int y0 = title_h;
    double vmax = 0.0;
    for (double v : panel.values) vmax = std::max(vmax, v);
    if (vmax <= 0.0) vmax = 1.0;

    out << "<text x=\"" << x0 + pw / 2 << "\" y=\"" << title_h - 8
        << "\" text-anchor=\"middle\" font-size=\"14\">" << panel.title << "</text>\n";

    const double cw = static_cast<double>(pw) / panel.nx;
    const double ch = static_cast<double>(ph) / panel.ny;
    for (int ix = 0; ix < panel.nx; ++ix) {
      for (int iy = 0; iy < panel.ny; ++iy) {
        const Color c = ramp(panel.at(ix, iy) / vmax);
        // iy = 0 is the bottom of the y range
        std::snprintf(buf, sizeof(buf),
                      "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" "
                      "fill=\"rgb(%d,%d,%d)\"/>\n",
                      x0 + ix * cw, y0 + (panel.ny - 1 - iy) * ch, cw + 0.35, ch + 0.35,
                      c.r, c.g, c.b);
        out << buf;
      }
    }
    out << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << pw
        << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"black\"/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-size=\"11\">%g</text>", x0,
                  y0 + ph + 14, x_min);
    out << buf << '\n';
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" text-anchor=\"end\" font-size=\"11\">%g</text>",
                  x0 + pw, y0 + ph + 14, x_max);
    out << buf << '\n';
    std::snprintf(
        buf, sizeof(buf),
        "<text x=\"%d\" y=\"%d\" text-anchor=\"end\" font-size=\"11\">%g</text>",
        x0 - 4, y0 + ph, y_min);
    out << buf << '\n';
    std::snprintf(
        buf, sizeof(buf),
        "<text x=\"%d\" y=\"%d\" text-anchor=\"end\" font-size=\"11\">%g</text>",
        x0 - 4, y0 + 10, y_max);
    out << buf << '\n';
  }
  out << "</svg>\n";
  if (!out) throw std::runtime_error("failed writing svg: " + path);
}

}  // namespace ebmprop
