#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "caviar/svg.hpp"

namespace caviar::svg {
namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 55.0;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string px(double v) {
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

/// Comments may not contain "--".
std::string comment_safe(std::string s) {
  for (std::size_t p = s.find("--"); p != std::string::npos; p = s.find("--")) {
    s.replace(p, 2, "- -");
  }
  return s;
}

struct Frame {
  double x0, x1, y0, y1;
  bool log_x = false, log_y = false;

  double sx(double v) const {
    const double t = log_x ? (std::log10(v) - std::log10(x0)) / (std::log10(x1) - std::log10(x0)) : (v - x0) / (x1 - x0);
    return kLeft + t * (kWidth - kLeft - kRight);
  }
  double sy(double v) const {
    const double t = log_y ? (std::log10(v) - std::log10(y0)) / (std::log10(y1) - std::log10(y0)) : (v - y0) / (y1 - y0);
    return kHeight - kBottom - t * (kHeight - kTop - kBottom);
  }
};

void pad(double& lo, double& hi) {
  if (!(hi > lo)) {
    const double d = std::max(1.0, std::abs(lo)) * 0.5;
    lo -= d;
    hi += d;
  }
}

std::vector<double> ticks(double lo, double hi, bool log) {
  std::vector<double> out;
  if (log) {
    for (double p = std::floor(std::log10(lo)); p <= std::ceil(std::log10(hi)); p += 1.0) {
      const double v = std::pow(10.0, p);
      if (v >= lo * (1 - 1e-12) && v <= hi * (1 + 1e-12)) {
        out.push_back(v);
      }
    }
    return out;
  }
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double step = raw / mag < 2 ? 2 * mag : raw / mag < 5 ? 5 * mag : 10 * mag;
  for (double v = std::ceil(lo / step) * step; v <= hi + step * 1e-9; v += step) {
    out.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  }
  return out;
}

void open(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << px(kWidth / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";
}

void axes(std::ostringstream& os, const Frame& f, const std::string& x_label, const std::string& y_label) {
  const double bx = kHeight - kBottom;
  os << "<line x1=\"" << px(kLeft) << "\" y1=\"" << px(bx) << "\" x2=\"" << px(kWidth - kRight) << "\" y2=\""
     << px(bx) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << px(kLeft) << "\" y1=\"" << px(kTop) << "\" x2=\"" << px(kLeft) << "\" y2=\"" << px(bx)
     << "\" stroke=\"black\"/>\n";
  for (double t : ticks(f.x0, f.x1, f.log_x)) {
    const double x = f.sx(t);
    os << "<line x1=\"" << px(x) << "\" y1=\"" << px(bx) << "\" x2=\"" << px(x) << "\" y2=\"" << px(bx + 5)
       << "\" stroke=\"black\"/><text x=\"" << px(x) << "\" y=\"" << px(bx + 18) << "\" text-anchor=\"middle\">"
       << num(t) << "</text>\n";
  }
  for (double t : ticks(f.y0, f.y1, f.log_y)) {
    const double y = f.sy(t);
    os << "<line x1=\"" << px(kLeft - 5) << "\" y1=\"" << px(y) << "\" x2=\"" << px(kLeft) << "\" y2=\"" << px(y)
       << "\" stroke=\"black\"/><text x=\"" << px(kLeft - 8) << "\" y=\"" << px(y + 4) << "\" text-anchor=\"end\">"
       << num(t) << "</text>\n";
  }
  os << "<text x=\"" << px((kLeft + kWidth - kRight) / 2) << "\" y=\"" << px(kHeight - 12)
     << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << px((kTop + bx) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << px((kTop + bx) / 2) << ")\">" << escape(y_label) << "</text>\n";
}

}  // namespace

std::string histogram(const Histogram& h, const std::string& title, const std::string& x_label) {
  std::ostringstream os;
  open(os, title);
  os << "<!-- data: bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    os << num(h.edges[b]) << ',' << num(h.edges[b + 1]) << ',' << h.counts[b] << '\n';
  }
  os << "underflow," << h.underflow << "\noverflow," << h.overflow << "\n-->\n";
  const std::size_t peak = h.counts.empty() ? 1 : std::max<std::size_t>(1, *std::max_element(h.counts.begin(), h.counts.end()));
  Frame f{h.edges.front(), h.edges.back(), 0.0, static_cast<double>(peak) * 1.05};
  axes(os, f, x_label, "levels");
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    const double x0 = f.sx(h.edges[b]);
    const double x1 = f.sx(h.edges[b + 1]);
    const double y = f.sy(static_cast<double>(h.counts[b]));
    os << "<rect x=\"" << px(x0) << "\" y=\"" << px(y) << "\" width=\"" << px(std::max(0.0, x1 - x0 - 0.5))
       << "\" height=\"" << px(f.sy(0.0) - y) << "\" fill=\"" << kPalette[0] << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string ecdf(const std::vector<std::pair<std::string, Ecdf>>& series, const std::string& title,
                 const std::string& x_label) {
  std::ostringstream os;
  open(os, title);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  os << "<!-- data: series,value,cumulative\n";
  for (const auto& [name, e] : series) {
    lo = std::min(lo, e.support().front());
    hi = std::max(hi, e.support().back());
    for (std::size_t i = 0; i < e.support().size(); ++i) {
      os << comment_safe(name) << ',' << num(e.support()[i]) << ',' << num(e.cumulative()[i]) << '\n';
    }
  }
  os << "-->\n";
  if (series.empty()) {
    lo = 0.0;
    hi = 1.0;
  }
  pad(lo, hi);
  Frame f{lo, hi, 0.0, 1.0};
  axes(os, f, x_label, "cumulative fraction");
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& e = series[s].second;
    const char* color = kPalette[s % std::size(kPalette)];
    os << "<path fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" d=\"M" << px(f.sx(lo)) << ' '
       << px(f.sy(0.0));
    double prev = 0.0;
    for (std::size_t i = 0; i < e.support().size(); ++i) {
      const double x = f.sx(e.support()[i]);
      os << " H" << px(x) << " V" << px(f.sy(e.cumulative()[i]));
      prev = e.cumulative()[i];
    }
    os << " H" << px(f.sx(hi)) << " V" << px(f.sy(prev)) << "\"/>\n";
    os << "<text x=\"" << px(kWidth - kRight - 5) << "\" y=\"" << px(kTop + 16 + 16 * static_cast<double>(s))
       << "\" text-anchor=\"end\" fill=\"" << color << "\">" << escape(series[s].first) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string scatter(const std::vector<double>& x, const std::vector<double>& y, const std::string& title,
                    const std::string& x_label, const std::string& y_label) {
  if (x.size() != y.size()) {
    throw ValidationError("scatter needs equal-length series");
  }
  std::ostringstream os;
  open(os, title);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  os << "<!-- data: x,y\n";
  for (std::size_t i = 0; i < x.size(); ++i) {
    os << num(x[i]) << ',' << num(y[i]) << '\n';
    lo = std::min({lo, x[i], y[i]});
    hi = std::max({hi, x[i], y[i]});
  }
  os << "-->\n";
  if (x.empty()) {
    lo = 0.0;
    hi = 1.0;
  }
  pad(lo, hi);
  Frame f{lo, hi, lo, hi};
  axes(os, f, x_label, y_label);
  os << "<line x1=\"" << px(f.sx(lo)) << "\" y1=\"" << px(f.sy(lo)) << "\" x2=\"" << px(f.sx(hi)) << "\" y2=\""
     << px(f.sy(hi)) << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
  os << "<g fill=\"" << kPalette[0] << "\" fill-opacity=\"0.35\">\n";
  for (std::size_t i = 0; i < x.size(); ++i) {
    os << "<circle cx=\"" << px(f.sx(x[i])) << "\" cy=\"" << px(f.sy(y[i])) << "\" r=\"1.5\"/>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

std::string frequency(const FrequencyTable& table, const std::string& title) {
  std::ostringstream os;
  open(os, title);
  os << "<!-- data: frequency,levels\n";
  double max_f = 1.0;
  double max_c = 1.0;
  for (const auto& [freq, count] : table) {
    os << freq << ',' << count << '\n';
    max_f = std::max(max_f, static_cast<double>(freq));
    max_c = std::max(max_c, static_cast<double>(count));
  }
  os << "-->\n";
  Frame f{0.8, max_f * 1.25, 0.8, max_c * 1.25, true, true};
  axes(os, f, "observations per level", "levels");
  os << "<g fill=\"" << kPalette[0] << "\">\n";
  for (const auto& [freq, count] : table) {
    if (freq == 0 || count == 0) {
      continue;
    }
    os << "<circle cx=\"" << px(f.sx(static_cast<double>(freq))) << "\" cy=\"" << px(f.sy(static_cast<double>(count)))
       << "\" r=\"3\"/>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

}  // namespace caviar::svg
