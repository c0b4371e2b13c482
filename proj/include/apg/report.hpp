#pragma once

// Per-dataset score tables with top-3 markers and grouped bar charts (SVG).

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "apg/exchange_io.hpp"
#include "apg/metrics.hpp"

namespace apg {

struct ReportRow {
  std::string dataset;
  std::string modality;
  std::string method;
  std::size_t images = 0;
  double mean_msa = 0.0;
  /// Midrank within the dataset, 1 = best.
  double rank = 0.0;
  /// 1 + number of methods scoring strictly higher on the dataset.
  int place = 0;
};

inline std::string_view place_marker(int place) {
  switch (place) {
    case 1: return "best";
    case 2: return "second";
    case 3: return "third";
    default: return "";
  }
}

/// Sorted by dataset, then by mean mSA descending, then method name.
inline std::vector<ReportRow> build_report(const ScoreTable& table,
                                          const std::map<std::string, std::string>& modality = {}) {
  table.validate();
  std::map<std::string, std::vector<AggregateRow>> by_dataset;
  for (const auto& r : aggregate(table)) by_dataset[r.dataset].push_back(r);

  std::vector<ReportRow> out;
  for (auto& [dataset, rows] : by_dataset) {
    std::vector<double> scores;
    for (const auto& r : rows) scores.push_back(r.mean_msa);
    const auto ranks = midranks_descending(scores);
    auto mod = modality.find(dataset);
    std::vector<ReportRow> block;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const int higher = static_cast<int>(
          std::count_if(scores.begin(), scores.end(), [&](double s) { return s > scores[i]; }));
      block.push_back({dataset, mod == modality.end() ? std::string{} : mod->second, rows[i].method, rows[i].images,
                       rows[i].mean_msa, ranks[i], higher + 1});
    }
    std::sort(block.begin(), block.end(), [](const ReportRow& a, const ReportRow& b) {
      return a.mean_msa != b.mean_msa ? a.mean_msa > b.mean_msa : a.method < b.method;
    });
    out.insert(out.end(), block.begin(), block.end());
  }
  return out;
}

inline std::string format_rank(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", r);
  return buf;
}

inline std::string report_to_csv(const std::vector<ReportRow>& rows) {
  std::string out = "dataset,modality,method,images,mean_msa,rank,marker\n";
  for (const auto& r : rows) {
    out += io_detail::csv_field(r.dataset) + "," + io_detail::csv_field(r.modality) + "," +
           io_detail::csv_field(r.method) + "," + std::to_string(r.images) + "," + format_msa(r.mean_msa) + "," +
           format_rank(r.rank) + "," + std::string(place_marker(r.place)) + "\n";
  }
  return out;
}

inline nlohmann::json report_to_json(const std::vector<ReportRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"dataset", r.dataset},
                 {"modality", r.modality},
                 {"method", r.method},
                 {"images", r.images},
                 {"mean_msa", r.mean_msa},
                 {"rank", r.rank},
                 {"marker", std::string(place_marker(r.place))}});
  }
  return j;
}

namespace report_detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                           "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};

}  // namespace report_detail

/// Grouped bar chart: one group per dataset, one bar per method, y = mean mSA.
inline std::string report_svg(const std::vector<ReportRow>& rows, const std::string& title) {
  using report_detail::num;
  std::vector<std::string> datasets, methods;
  std::map<std::pair<std::string, std::string>, double> value;
  for (const auto& r : rows) {
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    value[{r.dataset, r.method}] = r.mean_msa;
  }
  std::sort(methods.begin(), methods.end());

  const double bar = 18.0, gap = 24.0, left = 60.0, top = 40.0, plot_h = 240.0;
  const double group_w = bar * static_cast<double>(std::max<std::size_t>(methods.size(), 1)) + gap;
  const double width = left + group_w * static_cast<double>(datasets.size()) + 160.0;
  const double height = top + plot_h + 60.0;

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
       "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<text x=\"" + num(left) + "\" y=\"20\" font-size=\"14\">" + report_detail::xml_escape(title) + "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = k / 4.0;
    const double y = top + plot_h * (1.0 - v);
    s += "<line x1=\"" + num(left) + "\" y1=\"" + num(y) + "\" x2=\"" + num(left + group_w * datasets.size()) +
         "\" y2=\"" + num(y) + "\" stroke=\"#dddddd\"/>\n";
    s += "<text x=\"" + num(left - 6) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + num(v) + "</text>\n";
  }
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    const double x0 = left + gap / 2 + group_w * static_cast<double>(d);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      auto it = value.find({datasets[d], methods[m]});
      if (it == value.end()) continue;
      const double h = plot_h * std::clamp(it->second, 0.0, 1.0);
      s += "<rect class=\"bar\" data-dataset=\"" + report_detail::xml_escape(datasets[d]) + "\" data-method=\"" +
           report_detail::xml_escape(methods[m]) + "\" x=\"" + num(x0 + bar * m) + "\" y=\"" +
           num(top + plot_h - h) + "\" width=\"" + num(bar - 2) + "\" height=\"" + num(h) + "\" fill=\"" +
           report_detail::kPalette[m % std::size(report_detail::kPalette)] + "\"/>\n";
    }
    s += "<text x=\"" + num(x0 + (group_w - gap) / 2) + "\" y=\"" + num(top + plot_h + 16) +
         "\" text-anchor=\"middle\">" + report_detail::xml_escape(datasets[d]) + "</text>\n";
  }
  const double lx = left + group_w * static_cast<double>(datasets.size()) + 20.0;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const double y = top + 16.0 * static_cast<double>(m);
    s += "<rect x=\"" + num(lx) + "\" y=\"" + num(y) + "\" width=\"10\" height=\"10\" fill=\"" +
         report_detail::kPalette[m % std::size(report_detail::kPalette)] + "\"/>\n";
    s += "<text x=\"" + num(lx + 14) + "\" y=\"" + num(y + 9) + "\">" + report_detail::xml_escape(methods[m]) +
         "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

/// Rows grouped by modality (empty modality → "all").
inline std::map<std::string, std::vector<ReportRow>> group_by_modality(const std::vector<ReportRow>& rows) {
  std::map<std::string, std::vector<ReportRow>> g;
  for (const auto& r : rows) g[r.modality.empty() ? "all" : r.modality].push_back(r);
  return g;
}

}  // namespace apg
