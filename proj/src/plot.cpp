#include "atmc/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "atmc/error.hpp"

namespace atmc {

namespace {

constexpr double kPanelW = 420, kPanelH = 300, kMargin = 60, kTop = 50;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                   "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

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
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_plot_svg(const std::vector<MetricsRow>& rows, const std::string& title) {
  if (rows.empty()) throw ConfigError("nothing to plot: no metrics rows");
  double lo = 1e300, hi = 0.0;
  for (const MetricsRow& r : rows) {
    if (r.compression_ratio > 0.0) {
      lo = std::min(lo, r.compression_ratio);
      hi = std::max(hi, r.compression_ratio);
    }
  }
  if (hi == 0.0) lo = hi = 1.0;
  double xmin = std::floor(std::log10(lo)), xmax = std::ceil(std::log10(hi));
  if (xmax <= xmin) xmax = xmin + 1;

  std::vector<std::string> order;
  std::map<std::string, std::vector<const MetricsRow*>> series;
  for (const MetricsRow& r : rows) {
    const std::string key = r.pipeline + " " + std::to_string(r.bits) + "b";
    if (!series.count(key)) order.push_back(key);
    series[key].push_back(&r);
  }

  const double width = 2 * (kPanelW + kMargin) + kMargin + 140;
  const double height = kTop + kPanelH + kMargin + 20;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\""
     << num(height) << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << num(width / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
     << escape(title) << "</text>\n";

  for (int panel = 0; panel < 2; ++panel) {
    const double x0 = kMargin + panel * (kPanelW + kMargin), y0 = kTop;
    const auto px = [&](double ratio) {
      const double l = ratio > 0.0 ? std::log10(ratio) : xmin;
      return x0 + (l - xmin) / (xmax - xmin) * kPanelW;
    };
    const auto py = [&](double acc) { return y0 + (1.0 - acc) * kPanelH; };
    os << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(kPanelW)
       << "\" height=\"" << num(kPanelH) << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(x0 + kPanelW / 2) << "\" y=\"" << num(y0 - 8)
       << "\" text-anchor=\"middle\">" << (panel == 0 ? "TA" : "ATA") << "</text>\n";
    for (int t = 0; t <= 5; ++t) {
      const double acc = t / 5.0;
      os << "<text x=\"" << num(x0 - 6) << "\" y=\"" << num(py(acc) + 4)
         << "\" text-anchor=\"end\">" << num(acc) << "</text>\n";
    }
    for (double e = xmin; e <= xmax + 1e-9; e += 1.0) {
      const double x = px(std::pow(10.0, e));
      os << "<line x1=\"" << num(x) << "\" y1=\"" << num(y0 + kPanelH) << "\" x2=\"" << num(x)
         << "\" y2=\"" << num(y0 + kPanelH + 5) << "\" stroke=\"black\"/>\n"
         << "<text x=\"" << num(x) << "\" y=\"" << num(y0 + kPanelH + 18)
         << "\" text-anchor=\"middle\">1e" << static_cast<int>(e) << "</text>\n";
    }
    os << "<text x=\"" << num(x0 + kPanelW / 2) << "\" y=\"" << num(y0 + kPanelH + 36)
       << "\" text-anchor=\"middle\">compression ratio</text>\n";
    for (std::size_t s = 0; s < order.size(); ++s) {
      auto pts = series[order[s]];
      std::stable_sort(pts.begin(), pts.end(), [](const MetricsRow* a, const MetricsRow* b) {
        return a->compression_ratio < b->compression_ratio;
      });
      const char* color = kColors[s % std::size(kColors)];
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (const MetricsRow* r : pts) {
        os << num(px(r->compression_ratio)) << ',' << num(py(panel == 0 ? r->ta : r->ata)) << ' ';
      }
      os << "\"/>\n";
      for (const MetricsRow* r : pts) {
        os << "<circle cx=\"" << num(px(r->compression_ratio)) << "\" cy=\""
           << num(py(panel == 0 ? r->ta : r->ata)) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
    }
  }
  const double lx = 2 * (kPanelW + kMargin) + kMargin - 30;
  for (std::size_t s = 0; s < order.size(); ++s) {
    const double y = kTop + 10 + 18.0 * static_cast<double>(s);
    os << "<rect x=\"" << num(lx) << "\" y=\"" << num(y - 9) << "\" width=\"12\" height=\"12\" fill=\""
       << kColors[s % std::size(kColors)] << "\"/>\n"
       << "<text x=\"" << num(lx + 18) << "\" y=\"" << num(y + 1) << "\">" << escape(order[s])
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_plot_svg(const std::vector<MetricsRow>& rows, const std::string& title,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << render_plot_svg(rows, title);
}

}  // namespace atmc
