#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "simrsa/dsm.hpp"
#include "simrsa/error.hpp"
#include "simrsa/tsne.hpp"

namespace simrsa {
namespace svg_detail {

struct Rgb {
  double r, g, b;
};

/// Five-stop dark-blue-to-yellow ramp for values in [0,1].
inline Rgb colormap(double t) {
  static const Rgb stops[] = {{0.267, 0.005, 0.329},
                              {0.229, 0.322, 0.545},
                              {0.127, 0.566, 0.551},
                              {0.369, 0.789, 0.383},
                              {0.993, 0.906, 0.144}};
  t = std::clamp(t, 0.0, 1.0);
  const double x = t * 4.0;
  const int lo = std::min(3, static_cast<int>(x));
  const double f = x - lo;
  return {stops[lo].r + f * (stops[lo + 1].r - stops[lo].r),
          stops[lo].g + f * (stops[lo + 1].g - stops[lo].g),
          stops[lo].b + f * (stops[lo + 1].b - stops[lo].b)};
}

inline std::string hex(const Rgb& c) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>(std::round(c.r * 255.0)),
                static_cast<int>(std::round(c.g * 255.0)), static_cast<int>(std::round(c.b * 255.0)));
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> colors = {"#4477aa", "#ee6677", "#228833", "#ccbb44",
                                                  "#66ccee", "#aa3377", "#bbbbbb", "#222255",
                                                  "#99cc66", "#884411"};
  return colors;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

}  // namespace svg_detail

/// Renders a DSM as a colored grid with axis labels and a 0-1 legend. Missing
/// cells must have been filled beforehand (see fill_missing).
inline void heatmap_svg(const Dsm& d, const std::filesystem::path& out_path,
                        const std::string& title = "") {
  const std::size_t n = d.n();
  if (n == 0) throw Error("heatmap_svg: empty DSM");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (!d.at(i, j))
        throw Error("heatmap_svg: missing cell (" + d.labels[i] + ", " + d.labels[j] +
                    "); fill_missing first");

  const double cell = n <= 20 ? 24.0 : (n <= 80 ? 10.0 : 6.0);
  const double label_space = 70.0;
  const double legend_space = 60.0;
  const double top = title.empty() ? 10.0 : 30.0;
  const double grid = cell * static_cast<double>(n);
  const double width = label_space + grid + legend_space + 20.0;
  const double height = top + grid + label_space;
  const double font = std::max(3.0, std::min(10.0, cell * 0.8));

  std::string s;
  s.reserve(n * n * 80 + 4096);
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + svg_detail::num(width) + "\" height=\"" +
       svg_detail::num(height) + "\">\n";
  if (!title.empty())
    s += "<text x=\"" + svg_detail::num(label_space) + "\" y=\"20\" font-size=\"13\" font-family=\"sans-serif\">" +
         svg_detail::escape(title) + "</text>\n";

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = *d.at(i, j);
      s += "<rect class=\"cell\" x=\"" + svg_detail::num(label_space + cell * static_cast<double>(j)) +
           "\" y=\"" + svg_detail::num(top + cell * static_cast<double>(i)) + "\" width=\"" +
           svg_detail::num(cell) + "\" height=\"" + svg_detail::num(cell) + "\" fill=\"" +
           svg_detail::hex(svg_detail::colormap(v)) + "\"/>\n";
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double y = top + cell * (static_cast<double>(i) + 0.5);
    s += "<text x=\"" + svg_detail::num(label_space - 4.0) + "\" y=\"" + svg_detail::num(y + font / 3.0) +
         "\" font-size=\"" + svg_detail::num(font) + "\" font-family=\"sans-serif\" text-anchor=\"end\">" +
         svg_detail::escape(d.labels[i]) + "</text>\n";
    const double x = label_space + cell * (static_cast<double>(i) + 0.5);
    s += "<text x=\"" + svg_detail::num(x) + "\" y=\"" + svg_detail::num(top + grid + 4.0) +
         "\" font-size=\"" + svg_detail::num(font) +
         "\" font-family=\"sans-serif\" text-anchor=\"end\" transform=\"rotate(-90 " + svg_detail::num(x) +
         " " + svg_detail::num(top + grid + 4.0) + ")\">" + svg_detail::escape(d.labels[i]) + "</text>\n";
  }

  // legend: vertical gradient bar, dissimilarity 0 (bottom) to 1 (top)
  const double lx = label_space + grid + 20.0;
  const int steps = 32;
  const double lh = std::min(grid, 160.0);
  for (int k = 0; k < steps; ++k) {
    const double v = 1.0 - static_cast<double>(k) / (steps - 1);
    s += "<rect x=\"" + svg_detail::num(lx) + "\" y=\"" + svg_detail::num(top + lh * k / steps) +
         "\" width=\"14\" height=\"" + svg_detail::num(lh / steps + 0.5) + "\" fill=\"" +
         svg_detail::hex(svg_detail::colormap(v)) + "\"/>\n";
  }
  s += "<text x=\"" + svg_detail::num(lx + 18.0) + "\" y=\"" + svg_detail::num(top + 8.0) +
       "\" font-size=\"9\" font-family=\"sans-serif\">1.0</text>\n";
  s += "<text x=\"" + svg_detail::num(lx + 18.0) + "\" y=\"" + svg_detail::num(top + lh) +
       "\" font-size=\"9\" font-family=\"sans-serif\">0.0</text>\n";
  s += "<text x=\"" + svg_detail::num(lx) + "\" y=\"" + svg_detail::num(top + lh + 16.0) +
       "\" font-size=\"9\" font-family=\"sans-serif\">dissimilarity</text>\n";
  s += "</svg>\n";
  svg_detail::write_file(out_path, s);
}

struct HistogramResult {
  std::vector<double> bin_low;
  std::vector<double> bin_high;
  std::vector<long> counts;
};

/// Fixed-width bins over [0,100]; a value of exactly 100 lands in the last
/// bin so the counts always sum to the input size.
inline HistogramResult rating_histogram(const std::vector<double>& values, int bins,
                                        const std::filesystem::path& out_svg,
                                        const std::filesystem::path& out_csv,
                                        const std::string& title = "") {
  if (bins < 1) throw Error("rating_histogram: bins must be >= 1");
  HistogramResult h;
  h.counts.assign(bins, 0);
  const double width = 100.0 / bins;
  for (int b = 0; b < bins; ++b) {
    h.bin_low.push_back(width * b);
    h.bin_high.push_back(width * (b + 1));
  }
  for (double v : values) {
    if (v < 0.0 || v > 100.0) throw Error("rating_histogram: value outside [0,100]");
    int b = static_cast<int>(v / width);
    if (b >= bins) b = bins - 1;
    ++h.counts[b];
  }

  {
    std::ofstream csv(out_csv);
    if (!csv) throw Error("cannot write " + out_csv.string());
    csv << "bin_low,bin_high,count\n";
    for (int b = 0; b < bins; ++b)
      csv << svg_detail::num(h.bin_low[b]) << ',' << svg_detail::num(h.bin_high[b]) << ',' << h.counts[b]
          << '\n';
  }

  const long max_count = h.counts.empty() ? 0 : *std::max_element(h.counts.begin(), h.counts.end());
  const double plot_w = 420.0, plot_h = 200.0, left = 50.0, bottom = 30.0, top = 30.0;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + svg_detail::num(left + plot_w + 20) +
                  "\" height=\"" + svg_detail::num(top + plot_h + bottom) + "\">\n";
  if (!title.empty())
    s += "<text x=\"" + svg_detail::num(left) + "\" y=\"18\" font-size=\"12\" font-family=\"sans-serif\">" +
         svg_detail::escape(title) + "</text>\n";
  const double bar_w = plot_w / bins;
  for (int b = 0; b < bins; ++b) {
    const double frac = max_count > 0 ? static_cast<double>(h.counts[b]) / max_count : 0.0;
    const double bh = plot_h * frac;
    s += "<rect class=\"bar\" x=\"" + svg_detail::num(left + bar_w * b) + "\" y=\"" +
         svg_detail::num(top + plot_h - bh) + "\" width=\"" + svg_detail::num(std::max(1.0, bar_w - 1.0)) +
         "\" height=\"" + svg_detail::num(bh) + "\" fill=\"#4477aa\"/>\n";
  }
  s += "<line x1=\"" + svg_detail::num(left) + "\" y1=\"" + svg_detail::num(top + plot_h) + "\" x2=\"" +
       svg_detail::num(left + plot_w) + "\" y2=\"" + svg_detail::num(top + plot_h) +
       "\" stroke=\"#000\"/>\n";
  s += "<text x=\"" + svg_detail::num(left) + "\" y=\"" + svg_detail::num(top + plot_h + 16) +
       "\" font-size=\"9\" font-family=\"sans-serif\">0</text>\n";
  s += "<text x=\"" + svg_detail::num(left + plot_w - 16) + "\" y=\"" + svg_detail::num(top + plot_h + 16) +
       "\" font-size=\"9\" font-family=\"sans-serif\">100</text>\n";
  s += "<text x=\"4\" y=\"" + svg_detail::num(top + 8) + "\" font-size=\"9\" font-family=\"sans-serif\">" +
       std::to_string(max_count) + "</text>\n";
  s += "</svg>\n";
  svg_detail::write_file(out_svg, s);
  return h;
}

/// Participant scatter from a 2-D layout, one glyph per point colored by
/// group, with a legend. Every point must belong to a group.
inline void cohort_scatter(const EmbeddingLayout& layout, const std::map<std::string, std::string>& groups,
                           const std::filesystem::path& out_path, const std::string& title = "") {
  if (layout.coordinates.empty()) throw Error("cohort_scatter: empty layout");

  std::vector<std::string> group_names;
  std::map<std::string, std::size_t> group_index;
  for (const auto& label : layout.labels) {
    const auto it = groups.find(label);
    if (it == groups.end()) throw Error("cohort_scatter: ungrouped point '" + label + "'");
    if (!group_index.count(it->second)) {
      group_index[it->second] = group_names.size();
      group_names.push_back(it->second);
    }
  }

  double min_x = layout.coordinates[0][0], max_x = min_x;
  double min_y = layout.coordinates[0][1], max_y = min_y;
  for (const auto& c : layout.coordinates) {
    min_x = std::min(min_x, c[0]);
    max_x = std::max(max_x, c[0]);
    min_y = std::min(min_y, c[1]);
    max_y = std::max(max_y, c[1]);
  }
  const double span_x = max_x - min_x > 0 ? max_x - min_x : 1.0;
  const double span_y = max_y - min_y > 0 ? max_y - min_y : 1.0;

  const double plot = 360.0, margin = 40.0;
  const double legend_w = 150.0;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                  svg_detail::num(margin * 2 + plot + legend_w) + "\" height=\"" +
                  svg_detail::num(margin * 2 + plot) + "\">\n";
  if (!title.empty())
    s += "<text x=\"" + svg_detail::num(margin) + "\" y=\"20\" font-size=\"12\" font-family=\"sans-serif\">" +
         svg_detail::escape(title) + "</text>\n";
  s += "<rect x=\"" + svg_detail::num(margin) + "\" y=\"" + svg_detail::num(margin) + "\" width=\"" +
       svg_detail::num(plot) + "\" height=\"" + svg_detail::num(plot) +
       "\" fill=\"none\" stroke=\"#999\"/>\n";

  const auto& colors = svg_detail::palette();
  for (std::size_t i = 0; i < layout.coordinates.size(); ++i) {
    const double x = margin + plot * (layout.coordinates[i][0] - min_x) / span_x;
    const double y = margin + plot * (1.0 - (layout.coordinates[i][1] - min_y) / span_y);
    const auto& color = colors[group_index.at(groups.at(layout.labels[i])) % colors.size()];
    s += "<circle class=\"pt\" cx=\"" + svg_detail::num(x) + "\" cy=\"" + svg_detail::num(y) +
         "\" r=\"4\" fill=\"" + color + "\" fill-opacity=\"0.8\"><title>" +
         svg_detail::escape(layout.labels[i]) + "</title></circle>\n";
  }

  for (std::size_t g = 0; g < group_names.size(); ++g) {
    const double y = margin + 14.0 * static_cast<double>(g);
    s += "<circle class=\"legend\" cx=\"" + svg_detail::num(margin + plot + 18.0) + "\" cy=\"" +
         svg_detail::num(y) + "\" r=\"4\" fill=\"" + colors[g % colors.size()] + "\"/>\n";
    s += "<text x=\"" + svg_detail::num(margin + plot + 28.0) + "\" y=\"" + svg_detail::num(y + 3.5) +
         "\" font-size=\"10\" font-family=\"sans-serif\">" + svg_detail::escape(group_names[g]) +
         "</text>\n";
  }
  s += "</svg>\n";
  svg_detail::write_file(out_path, s);
}

/// Layout CSV: label, group, x, y.
inline void write_layout_csv(const EmbeddingLayout& layout, const std::map<std::string, std::string>& groups,
                             const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "label,group,x,y\n";
  char buf[64];
  for (std::size_t i = 0; i < layout.labels.size(); ++i) {
    const auto it = groups.find(layout.labels[i]);
    std::snprintf(buf, sizeof(buf), "%.10g,%.10g", layout.coordinates[i][0], layout.coordinates[i][1]);
    out << layout.labels[i] << ',' << (it == groups.end() ? "" : it->second) << ',' << buf << '\n';
  }
}

}  // namespace simrsa
