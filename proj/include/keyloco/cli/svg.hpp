#pragma once

#include <string>
#include <vector>

namespace keyloco::cli {

struct Series {
  std::string label;
  std::string color;  // CSS color
  std::vector<double> x, y;
};

struct Marker {
  double x = 0, y = 0;
  std::string label;
  std::string color = "#d62728";
};

// Self-contained SVG line chart: one polyline per series, axes with ticks,
// legend. Output is deterministic for identical input.
void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& xlabel, const std::string& ylabel,
                      const std::vector<Series>& series);

// Equal-aspect xy view for trajectories: paths plus point markers.
void write_xy_chart(const std::string& path, const std::string& title,
                    const std::vector<Series>& paths, const std::vector<Marker>& markers);

}  // namespace keyloco::cli
