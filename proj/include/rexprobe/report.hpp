#ifndef REXPROBE_REPORT_HPP
#define REXPROBE_REPORT_HPP

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rexprobe/attribution.hpp"
#include "rexprobe/metrics.hpp"

namespace rexprobe {

/// RFC 4180 quoting, applied only when needed.
inline std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n\r") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline void write_profile_csv(std::ostream& out, const std::vector<PositionStat>& profile) {
  out << "position,mean,variance,count\n";
  for (std::size_t p = 0; p < profile.size(); ++p) {
    out << p << ',' << format_real(profile[p].mean) << ',' << format_real(profile[p].variance) << ','
        << profile[p].count << '\n';
  }
}

inline void write_topk_csv(std::ostream& out, const std::vector<TopKRow>& rows) {
  out << "word,count,is_entity\n";
  for (const auto& r : rows) out << csv_field(r.word) << ',' << r.count << ',' << (r.is_entity ? "true" : "false") << '\n';
}

/// Minimal standalone SVG line chart of a MAP curve.
inline void write_map_svg(std::ostream& out, const MapCurve& curve, const std::string& title = "MAP curve") {
  constexpr double kWidth = 640, kHeight = 400, kMargin = 50;
  const double plot_w = kWidth - 2 * kMargin;
  const double plot_h = kHeight - 2 * kMargin;
  const std::size_t n = curve.values.size();
  auto x_of = [&](std::size_t i) { return kMargin + (n <= 1 ? 0.0 : plot_w * static_cast<double>(i) / static_cast<double>(n - 1)); };
  auto y_of = [&](double v) { return kHeight - kMargin - plot_h * std::clamp(v, 0.0, 1.0); };
  char buf[128];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\">" << title
      << "</text>\n";
  out << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\"" << kWidth - kMargin << "\" y2=\""
      << kHeight - kMargin << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\"" << kHeight - kMargin
      << "\" stroke=\"black\"/>\n";
  for (double tick : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    std::snprintf(buf, sizeof buf, "%.2f", tick);
    out << "<text x=\"" << kMargin - 6 << "\" y=\"" << y_of(tick) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << buf << "</text>\n";
  }
  out << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">K (1.." << n << ")</text>\n";
  out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%.2f,%.2f ", x_of(i), y_of(curve.values[i]));
    out << buf;
  }
  out << "\"/>\n";
  std::snprintf(buf, sizeof buf, "AUC = %.4f", curve.auc);
  out << "<text x=\"" << kWidth - kMargin << "\" y=\"" << kMargin << "\" text-anchor=\"end\" font-family=\"sans-serif\""
      << " font-size=\"12\">" << buf << "</text>\n";
  out << "</svg>\n";
}

}  // namespace rexprobe

#endif  // REXPROBE_REPORT_HPP
