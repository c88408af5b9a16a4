#include "keyloco/cli/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace keyloco::cli {

namespace {

constexpr double kW = 720, kH = 420;
constexpr double kL = 62, kR = 18, kT = 34, kB = 46;  // margins

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Range {
  double lo = 0, hi = 1;
  double span() const { return hi - lo; }
};

Range find_range(const std::vector<const std::vector<double>*>& cols) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* c : cols)
    for (double v : *c)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  if (!(lo <= hi)) return {0, 1};
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.04 * (hi - lo);
  return {lo - pad, hi + pad};
}

// round tick spacing to 1/2/5 * 10^k
std::vector<double> ticks(const Range& r, int want = 5) {
  const double raw = r.span() / std::max(1, want);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (mag * m >= raw) {
      step = mag * m;
      break;
    }
  std::vector<double> out;
  for (double v = std::ceil(r.lo / step) * step; v <= r.hi + 1e-12 * r.span(); v += step)
    out.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  return out;
}

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

void open_svg(std::ofstream& out, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\""
      << " font-size=\"14\" fill=\"#222\">" << esc(title) << "</text>\n";
}

void axes(std::ofstream& out, const Range& rx, const Range& ry, const std::string& xlabel,
          const std::string& ylabel) {
  auto px = [&](double x) { return kL + (x - rx.lo) / rx.span() * (kW - kL - kR); };
  auto py = [&](double y) { return kH - kB - (y - ry.lo) / ry.span() * (kH - kT - kB); };
  out << "<g font-family=\"sans-serif\" font-size=\"10\" fill=\"#444\">\n";
  for (double tx : ticks(rx)) {
    out << "<line x1=\"" << fmt(px(tx)) << "\" y1=\"" << kT << "\" x2=\"" << fmt(px(tx))
        << "\" y2=\"" << kH - kB << "\" stroke=\"#e5e5e5\"/>\n";
    out << "<text x=\"" << fmt(px(tx)) << "\" y=\"" << kH - kB + 14
        << "\" text-anchor=\"middle\">" << fmt(tx) << "</text>\n";
  }
  for (double ty : ticks(ry)) {
    out << "<line x1=\"" << kL << "\" y1=\"" << fmt(py(ty)) << "\" x2=\"" << kW - kR << "\" y2=\""
        << fmt(py(ty)) << "\" stroke=\"#e5e5e5\"/>\n";
    out << "<text x=\"" << kL - 6 << "\" y=\"" << fmt(py(ty) + 3)
        << "\" text-anchor=\"end\">" << fmt(ty) << "</text>\n";
  }
  out << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 8
      << "\" text-anchor=\"middle\" font-size=\"11\">" << esc(xlabel) << "</text>\n";
  out << "<text x=\"14\" y=\"" << (kT + kH - kB) / 2
      << "\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 14 "
      << (kT + kH - kB) / 2 << ")\">" << esc(ylabel) << "</text>\n";
  out << "</g>\n";
  out << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << kW - kL - kR << "\" height=\""
      << kH - kT - kB << "\" fill=\"none\" stroke=\"#888\"/>\n";
}

void polylines(std::ofstream& out, const Range& rx, const Range& ry,
               const std::vector<Series>& series) {
  auto px = [&](double x) { return kL + (x - rx.lo) / rx.span() * (kW - kL - kR); };
  auto py = [&](double y) { return kH - kB - (y - ry.lo) / ry.span() * (kH - kT - kB); };
  for (const Series& s : series) {
    if (s.x.size() != s.y.size()) throw std::runtime_error("svg: series x/y length mismatch");
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      out << fmt(px(s.x[i])) << "," << fmt(py(s.y[i])) << " ";
    }
    out << "\"/>\n";
  }
}

void legend(std::ofstream& out, const std::vector<Series>& series) {
  double y = kT + 12;
  out << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (const Series& s : series) {
    if (s.label.empty()) continue;
    out << "<line x1=\"" << kL + 10 << "\" y1=\"" << y - 3 << "\" x2=\"" << kL + 34 << "\" y2=\""
        << y - 3 << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << kL + 40 << "\" y=\"" << y << "\" fill=\"#222\">" << esc(s.label)
        << "</text>\n";
    y += 15;
  }
  out << "</g>\n";
}

}  // namespace

void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& xlabel, const std::string& ylabel,
                      const std::vector<Series>& series) {
  std::vector<const std::vector<double>*> xs, ys;
  for (const auto& s : series) {
    xs.push_back(&s.x);
    ys.push_back(&s.y);
  }
  const Range rx = find_range(xs), ry = find_range(ys);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("svg: cannot create " + path);
  open_svg(out, title);
  axes(out, rx, ry, xlabel, ylabel);
  polylines(out, rx, ry, series);
  legend(out, series);
  out << "</svg>\n";
  if (!out) throw std::runtime_error("svg: write failed: " + path);
}

void write_xy_chart(const std::string& path, const std::string& title,
                    const std::vector<Series>& paths, const std::vector<Marker>& markers) {
  std::vector<double> mx, my;
  for (const auto& m : markers) {
    mx.push_back(m.x);
    my.push_back(m.y);
  }
  std::vector<const std::vector<double>*> xs{&mx}, ys{&my};
  for (const auto& s : paths) {
    xs.push_back(&s.x);
    ys.push_back(&s.y);
  }
  Range rx = find_range(xs), ry = find_range(ys);
  // equal aspect: widen the smaller span
  const double plot_w = kW - kL - kR, plot_h = kH - kT - kB;
  const double sx = rx.span() / plot_w, sy = ry.span() / plot_h;
  if (sx > sy) {
    const double c = (ry.lo + ry.hi) / 2, half = sx * plot_h / 2;
    ry = {c - half, c + half};
  } else {
    const double c = (rx.lo + rx.hi) / 2, half = sy * plot_w / 2;
    rx = {c - half, c + half};
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("svg: cannot create " + path);
  open_svg(out, title);
  axes(out, rx, ry, "x [m]", "y [m]");
  polylines(out, rx, ry, paths);
  auto px = [&](double x) { return kL + (x - rx.lo) / rx.span() * plot_w; };
  auto py = [&](double y) { return kH - kB - (y - ry.lo) / ry.span() * plot_h; };
  out << "<g font-family=\"sans-serif\" font-size=\"10\">\n";
  for (const Marker& m : markers) {
    out << "<circle cx=\"" << fmt(px(m.x)) << "\" cy=\"" << fmt(py(m.y))
        << "\" r=\"4\" fill=\"none\" stroke=\"" << m.color << "\" stroke-width=\"1.5\"/>\n";
    if (!m.label.empty())
      out << "<text x=\"" << fmt(px(m.x) + 6) << "\" y=\"" << fmt(py(m.y) - 5) << "\" fill=\""
          << m.color << "\">" << esc(m.label) << "</text>\n";
  }
  out << "</g>\n";
  legend(out, paths);
  out << "</svg>\n";
  if (!out) throw std::runtime_error("svg: write failed: " + path);
}

}  // namespace keyloco::cli
