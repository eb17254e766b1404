#pragma once

// Learning-curve CSV parsing and a dependency-free SVG line chart.
// CSV contract: header "step,rolling,loss,p_ep", one row per trial,
// steps strictly increasing.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "safl/errors.hpp"

namespace safl {

struct CurvePoint {
  int step = 0;
  double rolling = 0.0;
  double loss = 0.0;
  double p_ep = 0.0;
};

struct LearningCurve {
  std::string label;
  std::vector<CurvePoint> points;  // steps strictly increasing
};

namespace plotio {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  size_t from = 0;
  while (true) {
    const size_t at = line.find(',', from);
    if (at == std::string::npos) {
      out.push_back(line.substr(from));
      return out;
    }
    out.push_back(line.substr(from, at - from));
    from = at + 1;
  }
}

inline double parse_num(const std::string& field, const char* what, size_t at) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end != begin + field.size() || field.empty() || !std::isfinite(v))
    throw FormatError(std::string("curve csv: bad ") + what + " '" + field + "'", at);
  return v;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out.push_back(c);
  }
  return out;
}

inline std::string num2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace plotio

inline LearningCurve parse_curve_csv(const std::string& text, const std::string& label) {
  LearningCurve curve;
  curve.label = label;
  bool header_seen = false;
  long long prev_step = -1;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t line_at = pos;
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (line_at >= text.size()) break;
      continue;
    }
    if (!header_seen) {
      if (line != "step,rolling,loss,p_ep")
        throw FormatError("curve csv: expected header step,rolling,loss,p_ep, got '" + line + "'",
                          line_at);
      header_seen = true;
      continue;
    }
    const auto fields = plotio::split_fields(line);
    if (fields.size() != 4)
      throw FormatError("curve csv: expected 4 fields, got " + std::to_string(fields.size()),
                        line_at);
    CurvePoint p;
    const double step = plotio::parse_num(fields[0], "step", line_at);
    if (step != std::floor(step) || step < 0)
      throw FormatError("curve csv: step must be a non-negative integer, got '" + fields[0] + "'",
                        line_at);
    p.step = static_cast<int>(step);
    if (p.step <= prev_step)
      throw FormatError("curve csv: steps must be strictly increasing (" +
                            std::to_string(prev_step) + " then " + std::to_string(p.step) + ")",
                        line_at);
    prev_step = p.step;
    p.rolling = plotio::parse_num(fields[1], "rolling", line_at);
    p.loss = plotio::parse_num(fields[2], "loss", line_at);
    p.p_ep = plotio::parse_num(fields[3], "p_ep", line_at);
    curve.points.push_back(p);
  }
  if (!header_seen) throw FormatError("curve csv: empty input", 0);
  if (curve.points.empty()) throw FormatError("curve csv: no data rows", text.size());
  return curve;
}

// One polyline per curve (rolling success vs. trial step), fixed [0,1] y axis,
// inline legend. Plain SVG so runs stay hermetic.
inline std::string render_curves_svg(const std::vector<LearningCurve>& curves) {
  if (curves.empty()) throw PreconditionError("render_curves_svg: no curves");
  for (const LearningCurve& c : curves)
    if (c.points.empty()) throw PreconditionError("render_curves_svg: empty curve " + c.label);

  int max_step = 1;
  for (const LearningCurve& c : curves)
    for (const CurvePoint& p : c.points) max_step = std::max(max_step, p.step);

  constexpr double kW = 760, kH = 480, kL = 64, kR = 24, kT = 28, kB = 48;
  const double pw = kW - kL - kR, ph = kH - kT - kB;
  const auto sx = [&](double step) { return kL + pw * step / max_step; };
  const auto sy = [&](double v) { return kT + ph * (1.0 - v); };
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  constexpr int kColors = 8;
  using plotio::num2;
  using plotio::xml_escape;

  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"480\" "
       "viewBox=\"0 0 760 480\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"760\" height=\"480\" fill=\"white\"/>\n";

  // grid and axis labels
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    s += "<line x1=\"" + num2(kL) + "\" y1=\"" + num2(sy(v)) + "\" x2=\"" + num2(kW - kR) +
         "\" y2=\"" + num2(sy(v)) + "\" stroke=\"#dddddd\"/>\n";
    s += "<text x=\"" + num2(kL - 8) + "\" y=\"" + num2(sy(v) + 4) +
         "\" text-anchor=\"end\">" + num2(v) + "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const int step = static_cast<int>(std::llround(max_step * (i / 5.0)));
    s += "<line x1=\"" + num2(sx(step)) + "\" y1=\"" + num2(kT) + "\" x2=\"" + num2(sx(step)) +
         "\" y2=\"" + num2(kH - kB) + "\" stroke=\"#dddddd\"/>\n";
    s += "<text x=\"" + num2(sx(step)) + "\" y=\"" + num2(kH - kB + 18) +
         "\" text-anchor=\"middle\">" + std::to_string(step) + "</text>\n";
  }
  s += "<rect x=\"" + num2(kL) + "\" y=\"" + num2(kT) + "\" width=\"" + num2(pw) +
       "\" height=\"" + num2(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  s += "<text x=\"" + num2(kL + pw / 2) + "\" y=\"" + num2(kH - 8) +
       "\" text-anchor=\"middle\">trial</text>\n";
  s += "<text x=\"" + num2(kL) + "\" y=\"" + num2(kT - 8) + "\">rolling success rate</text>\n";

  for (size_t k = 0; k < curves.size(); ++k) {
    std::string pts;
    for (const CurvePoint& p : curves[k].points) {
      if (!pts.empty()) pts.push_back(' ');
      pts += num2(sx(p.step)) + "," + num2(sy(p.rolling));
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(kPalette[k % kColors]) +
         "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
  }

  // legend, top-left inside the plot area
  for (size_t k = 0; k < curves.size(); ++k) {
    const double y = kT + 16 + 18 * static_cast<double>(k);
    s += "<line x1=\"" + num2(kL + 10) + "\" y1=\"" + num2(y) + "\" x2=\"" + num2(kL + 34) +
         "\" y2=\"" + num2(y) + "\" stroke=\"" + std::string(kPalette[k % kColors]) +
         "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num2(kL + 40) + "\" y=\"" + num2(y + 4) + "\">" +
         xml_escape(curves[k].label) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace safl
