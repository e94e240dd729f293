#pragma once

// Static training-curve report: one CSV row per log record and an SVG with
// four stacked panels (accuracy, mean response length, truncation ratio,
// average stopped length against iteration), one polyline per split.

#include <algorithm>
#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "zerorl/errors.hpp"
#include "zerorl/metrics.hpp"

namespace zerorl {

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  if (ec != std::errc()) throw NumericError("cannot format number");
  return std::string(buf.data(), ptr);
}

struct ReportFiles {
  std::string csv_path;
  std::string svg_path;
};

inline std::vector<std::string> csv_columns(const std::vector<MetricsRecord>& records) {
  std::set<std::size_t> ks;
  std::set<std::string> labels;
  for (const auto& r : records) {
    for (const auto& [k, v] : r.pass_at) ks.insert(k);
    for (const auto& [l, v] : r.behavior_ratio) labels.insert(l);
  }
  std::vector<std::string> cols{"iter", "split", "accuracy", "mean_resp_len", "truncation_ratio",
                                "avg_stopped_len"};
  for (std::size_t k : ks) cols.push_back("pass_at_" + std::to_string(k));
  cols.push_back("avg_at_k");
  for (const auto& l : labels) cols.push_back("behavior_ratio_" + l);
  for (const char* c : {"mean_reward", "kl_mean", "clip_active_frac", "schema_version"})
    cols.emplace_back(c);
  return cols;
}

inline std::string render_csv(const std::vector<MetricsRecord>& records) {
  const auto cols = csv_columns(records);
  std::ostringstream os;
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& r : records) {
    std::vector<std::string> cells;
    for (const auto& c : cols) {
      if (c == "iter") cells.push_back(std::to_string(r.iter));
      else if (c == "split") cells.emplace_back(r.split == Split::train ? "train" : "eval");
      else if (c == "accuracy") cells.push_back(format_double(r.accuracy));
      else if (c == "mean_resp_len") cells.push_back(format_double(r.mean_resp_len));
      else if (c == "truncation_ratio") cells.push_back(format_double(r.truncation_ratio));
      else if (c == "avg_stopped_len") cells.push_back(format_double(r.avg_stopped_len));
      else if (c == "avg_at_k") cells.push_back(format_double(r.avg_at_k));
      else if (c == "mean_reward") cells.push_back(format_double(r.mean_reward));
      else if (c == "kl_mean") cells.push_back(format_double(r.kl_mean));
      else if (c == "clip_active_frac") cells.push_back(format_double(r.clip_active_frac));
      else if (c == "schema_version") cells.push_back(std::to_string(kLogSchemaVersion));
      else if (c.rfind("pass_at_", 0) == 0) {
        auto it = r.pass_at.find(std::stoul(c.substr(8)));
        cells.push_back(it == r.pass_at.end() ? "" : format_double(it->second));
      } else {
        auto it = r.behavior_ratio.find(c.substr(15));
        cells.push_back(it == r.behavior_ratio.end() ? "" : format_double(it->second));
      }
    }
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  }
  return os.str();
}

namespace detail {

struct Panel {
  const char* title;
  const char* y_label;
  double (*value)(const MetricsRecord&);
};

inline std::string svg_num(double x) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << x;
  return os.str();
}

}  // namespace detail

inline std::string render_svg(const std::vector<MetricsRecord>& records) {
  static const std::array<detail::Panel, 4> kPanels{{
      {"Accuracy", "accuracy", [](const MetricsRecord& r) { return r.accuracy; }},
      {"Mean response length", "tokens", [](const MetricsRecord& r) { return r.mean_resp_len; }},
      {"Truncation ratio", "ratio", [](const MetricsRecord& r) { return r.truncation_ratio; }},
      {"Average stopped length", "tokens",
       [](const MetricsRecord& r) { return r.avg_stopped_len; }},
  }};
  constexpr double kWidth = 640, kPanelH = 200, kLeft = 70, kRight = 20, kTop = 30, kBottom = 40;
  const double height = kPanelH * kPanels.size();

  std::int64_t it_min = records.front().iter, it_max = records.front().iter;
  for (const auto& r : records) {
    it_min = std::min(it_min, r.iter);
    it_max = std::max(it_max, r.iter);
  }
  const double it_span = it_max > it_min ? static_cast<double>(it_max - it_min) : 1.0;

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << kWidth << " " << height << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (std::size_t p = 0; p < kPanels.size(); ++p) {
    const auto& panel = kPanels[p];
    const double y0 = kPanelH * static_cast<double>(p);
    const double plot_w = kWidth - kLeft - kRight, plot_h = kPanelH - kTop - kBottom;
    double v_max = 0.0;
    for (const auto& r : records) v_max = std::max(v_max, panel.value(r));
    if (v_max <= 0.0) v_max = 1.0;

    os << "<g id=\"panel-" << p << "\">\n"
       << "<text x=\"" << kWidth / 2 << "\" y=\"" << y0 + 18
       << "\" text-anchor=\"middle\" font-size=\"14\">" << panel.title << "</text>\n"
       << "<line x1=\"" << kLeft << "\" y1=\"" << y0 + kTop + plot_h << "\" x2=\""
       << kLeft + plot_w << "\" y2=\"" << y0 + kTop + plot_h << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << kLeft << "\" y1=\"" << y0 + kTop << "\" x2=\"" << kLeft << "\" y2=\""
       << y0 + kTop + plot_h << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << y0 + kPanelH - 8
       << "\" text-anchor=\"middle\" font-size=\"12\">iteration</text>\n"
       << "<text x=\"14\" y=\"" << y0 + kTop + plot_h / 2 << "\" font-size=\"12\" "
       << "transform=\"rotate(-90 14 " << y0 + kTop + plot_h / 2 << ")\" text-anchor=\"middle\">"
       << panel.y_label << "</text>\n"
       << "<text x=\"" << kLeft - 4 << "\" y=\"" << y0 + kTop + 4
       << "\" text-anchor=\"end\" font-size=\"10\">" << detail::svg_num(v_max) << "</text>\n"
       << "<text x=\"" << kLeft - 4 << "\" y=\"" << y0 + kTop + plot_h
       << "\" text-anchor=\"end\" font-size=\"10\">0</text>\n";

    for (Split split : {Split::train, Split::eval}) {
      std::ostringstream pts;
      std::size_t n = 0;
      for (const auto& r : records) {
        if (r.split != split) continue;
        const double x = kLeft + plot_w * static_cast<double>(r.iter - it_min) / it_span;
        const double y = y0 + kTop + plot_h * (1.0 - panel.value(r) / v_max);
        pts << (n++ ? " " : "") << detail::svg_num(x) << "," << detail::svg_num(y);
      }
      if (n == 0) continue;
      os << "<polyline class=\"" << (split == Split::train ? "train" : "eval")
         << "\" fill=\"none\" stroke=\"" << (split == Split::train ? "#1f77b4" : "#d62728")
         << "\" stroke-width=\"1.5\" points=\"" << pts.str() << "\"/>\n";
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline ReportFiles emit_report(const std::string& log_path, const std::string& out_dir) {
  const std::vector<MetricsRecord> records = read_log(log_path);
  if (records.empty()) throw InputError("no records");
  std::filesystem::create_directories(out_dir);
  ReportFiles files{out_dir + "/report.csv", out_dir + "/report.svg"};
  auto write = [](const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("short write to '" + path + "'");
  };
  write(files.csv_path, render_csv(records));
  write(files.svg_path, render_svg(records));
  return files;
}

}  // namespace zerorl
