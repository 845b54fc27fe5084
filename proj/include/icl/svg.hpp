#pragma once

#include <string>
#include <vector>

namespace icl {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;  // optional +-1 se bars
};

struct ReferenceLine {
  std::string name;
  double slope = 0.0;
  // Passes through (x0, y0) in data coordinates.
  double x0 = 1.0;
  double y0 = 1.0;
};

// Standalone log-log plot. Output bytes depend only on the inputs.
std::string loglog_svg(const std::string& title, const std::vector<PlotSeries>& series,
                       const std::vector<ReferenceLine>& references, const std::string& xlabel = "n",
                       const std::string& ylabel = "excess risk");

}  // namespace icl
