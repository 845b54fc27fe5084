#include "icl/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "icl/errors.hpp"

namespace icl {

namespace {

constexpr double kW = 640, kH = 440, kLeft = 70, kRight = 170, kTop = 40, kBottom = 55;
const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string loglog_svg(const std::string& title, const std::vector<PlotSeries>& series,
                       const std::vector<ReferenceLine>& references, const std::string& xlabel,
                       const std::string& ylabel) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("plot series '" + s.name + "' has mismatched lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!(s.x[i] > 0.0) || !(s.y[i] > 0.0)) throw LogDomainError("log-log plot needs positive values");
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) {
    xmin = 1;
    xmax = 10;
    ymin = 0.1;
    ymax = 1;
  }
  // Whole decades around the data.
  const double lx0 = std::floor(std::log10(xmin)), lx1 = std::max(lx0 + 1, std::ceil(std::log10(xmax)));
  const double ly0 = std::floor(std::log10(ymin)), ly1 = std::max(ly0 + 1, std::ceil(std::log10(ymax)));
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (std::log10(x) - lx0) / (lx1 - lx0) * pw; };
  auto py = [&](double y) { return kTop + (ly1 - std::log10(y)) / (ly1 - ly0) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW
    << ' ' << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(kW / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
  o << "<g class=\"axes\" stroke=\"#999\" stroke-width=\"0.5\">\n";
  for (double d = lx0; d <= lx1 + 1e-9; d += 1) {
    const double x = kLeft + (d - lx0) / (lx1 - lx0) * pw;
    o << "<line x1=\"" << num(x) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(x) << "\" y2=\"" << num(kTop + ph) << "\"/>\n";
  }
  for (double d = ly0; d <= ly1 + 1e-9; d += 1) {
    const double y = kTop + (ly1 - d) / (ly1 - ly0) * ph;
    o << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(y) << "\" x2=\"" << num(kLeft + pw) << "\" y2=\"" << num(y) << "\"/>\n";
  }
  o << "</g>\n<g class=\"ticks\">\n";
  for (double d = lx0; d <= lx1 + 1e-9; d += 1) {
    o << "<text x=\"" << num(kLeft + (d - lx0) / (lx1 - lx0) * pw) << "\" y=\"" << num(kTop + ph + 16)
      << "\" text-anchor=\"middle\">1e" << static_cast<int>(d) << "</text>\n";
  }
  for (double d = ly0; d <= ly1 + 1e-9; d += 1) {
    o << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(kTop + (ly1 - d) / (ly1 - ly0) * ph + 4)
      << "\" text-anchor=\"end\">1e" << static_cast<int>(d) << "</text>\n";
  }
  o << "</g>\n";
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kH - 12) << "\" text-anchor=\"middle\">" << escape(xlabel)
    << "</text>\n";
  o << "<text transform=\"translate(16," << num(kTop + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">" << escape(ylabel)
    << "</text>\n";

  int legend = 0;
  auto legend_entry = [&](const std::string& name, const char* color, bool dashed) {
    const double y = kTop + 10 + 18 * legend++;
    o << "<line x1=\"" << num(kW - kRight + 12) << "\" y1=\"" << num(y) << "\" x2=\"" << num(kW - kRight + 36) << "\" y2=\""
      << num(y) << "\" stroke=\"" << color << "\" stroke-width=\"2\"" << (dashed ? " stroke-dasharray=\"5,4\"" : "") << "/>\n";
    o << "<text x=\"" << num(kW - kRight + 42) << "\" y=\"" << num(y + 4) << "\">" << escape(name) << "</text>\n";
  };

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % 7];
    const auto& S = series[s];
    o << "<g class=\"series\" data-name=\"" << escape(S.name) << "\">\n<polyline fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < S.x.size(); ++i) o << (i ? " " : "") << num(px(S.x[i])) << ',' << num(py(S.y[i]));
    o << "\"/>\n";
    for (std::size_t i = 0; i < S.x.size(); ++i) {
      o << "<circle cx=\"" << num(px(S.x[i])) << "\" cy=\"" << num(py(S.y[i])) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      if (i < S.err.size() && S.err[i] > 0.0) {
        const double lo = std::max(S.y[i] - S.err[i], S.y[i] * 1e-3);
        o << "<line x1=\"" << num(px(S.x[i])) << "\" y1=\"" << num(py(lo)) << "\" x2=\"" << num(px(S.x[i])) << "\" y2=\""
          << num(py(S.y[i] + S.err[i])) << "\" stroke=\"" << color << "\"/>\n";
      }
    }
    o << "</g>\n";
  }
  for (std::size_t r = 0; r < references.size(); ++r) {
    const auto& R = references[r];
    const double xa = std::pow(10.0, lx0), xb = std::pow(10.0, lx1);
    auto yline = [&](double x) { return R.y0 * std::pow(x / R.x0, R.slope); };
    o << "<g class=\"reference\" data-slope=\"" << R.slope << "\">\n<clipPath id=\"plot" << r << "\"><rect x=\"" << num(kLeft)
      << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph) << "\"/></clipPath>\n";
    o << "<line clip-path=\"url(#plot" << r << ")\" x1=\"" << num(px(xa)) << "\" y1=\"" << num(py(yline(xa))) << "\" x2=\""
      << num(px(xb)) << "\" y2=\"" << num(py(yline(xb))) << "\" stroke=\"#444\" stroke-width=\"1\" stroke-dasharray=\"5,4\"/>\n</g>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) legend_entry(series[s].name, kPalette[s % 7], false);
  for (const auto& R : references) legend_entry(R.name, "#444", true);
  o << "</svg>\n";
  return o.str();
}

}  // namespace icl
