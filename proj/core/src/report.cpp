#include "ghr/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ghr/errors.hpp"

namespace ghr {

namespace {

constexpr const char* kMetrics[4] = {"rmse", "acc", "bias", "activity"};
constexpr const char* kColors[8] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

double metric_value(const ScoreRow& row, const std::string& metric) {
  if (metric == "rmse") return row.rmse;
  if (metric == "acc") return row.acc;
  if (metric == "bias") return row.bias;
  return row.activity;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// One chart per metric: a horizontal strip of panels, one per variable,
// lead time on the x axis, one polyline per series.
void write_metric_svg(const std::vector<SeriesReport>& reports, const std::string& metric,
                      const std::string& path) {
  std::vector<std::string> variables;
  std::set<std::string> seen;
  for (const SeriesReport& sr : reports) {
    for (const ScoreRow& row : sr.report.rows) {
      if (seen.insert(row.variable).second) variables.push_back(row.variable);
    }
  }

  const int panel_w = 280, panel_h = 200, margin = 46, top = 34;
  const int width = margin + static_cast<int>(variables.size()) * (panel_w + 24);
  const int height = top + panel_h + 60;

  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<text x=\"8\" y=\"16\" font-size=\"14\">" << metric << " vs lead time (hours)</text>\n";

  for (std::size_t vi = 0; vi < variables.size(); ++vi) {
    const std::string& variable = variables[vi];
    const int x0 = margin + static_cast<int>(vi) * (panel_w + 24);
    const int y0 = top;

    double lead_min = 1e300, lead_max = -1e300, val_min = 1e300, val_max = -1e300;
    for (const SeriesReport& sr : reports) {
      for (const ScoreRow& row : sr.report.rows) {
        if (row.variable != variable || !std::isfinite(metric_value(row, metric))) continue;
        lead_min = std::min(lead_min, static_cast<double>(row.lead_hours));
        lead_max = std::max(lead_max, static_cast<double>(row.lead_hours));
        val_min = std::min(val_min, metric_value(row, metric));
        val_max = std::max(val_max, metric_value(row, metric));
      }
    }
    if (lead_max <= lead_min) lead_max = lead_min + 1.0;
    if (val_max <= val_min) {
      val_max = val_min + 1.0;
      val_min -= 1.0;
    }
    const double pad = 0.06 * (val_max - val_min);
    val_min -= pad;
    val_max += pad;

    auto sx = [&](double lead) {
      return x0 + (lead - lead_min) / (lead_max - lead_min) * panel_w;
    };
    auto sy = [&](double v) { return y0 + panel_h - (v - val_min) / (val_max - val_min) * panel_h; };

    out << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << panel_w << "\" height=\""
        << panel_h << "\" fill=\"none\" stroke=\"#444\"/>\n";
    out << "<text x=\"" << x0 + 4 << "\" y=\"" << y0 - 6 << "\">" << variable << "</text>\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", val_max - pad);
    out << "<text x=\"" << x0 - 42 << "\" y=\"" << y0 + 10 << "\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof(buf), "%.4g", val_min + pad);
    out << "<text x=\"" << x0 - 42 << "\" y=\"" << y0 + panel_h << "\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof(buf), "%g", lead_min);
    out << "<text x=\"" << x0 << "\" y=\"" << y0 + panel_h + 14 << "\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof(buf), "%g", lead_max);
    out << "<text x=\"" << x0 + panel_w - 20 << "\" y=\"" << y0 + panel_h + 14 << "\">" << buf
        << "</text>\n";

    for (std::size_t si = 0; si < reports.size(); ++si) {
      std::vector<std::pair<int, double>> pts;
      for (const ScoreRow& row : reports[si].report.rows) {
        if (row.variable != variable) continue;
        const double v = metric_value(row, metric);
        if (std::isfinite(v)) pts.emplace_back(row.lead_hours, v);
      }
      std::sort(pts.begin(), pts.end());
      if (pts.empty()) continue;
      out << "<polyline fill=\"none\" stroke=\"" << kColors[si % 8] << "\" stroke-width=\"1.5\" points=\"";
      for (const auto& [lead, v] : pts) {
        std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", sx(lead), sy(v));
        out << buf;
      }
      out << "\"/>\n";
    }
  }

  // Legend.
  for (std::size_t si = 0; si < reports.size(); ++si) {
    const int lx = margin + static_cast<int>(si) * 150;
    const int ly = height - 18;
    out << "<line x1=\"" << lx << "\" y1=\"" << ly << "\" x2=\"" << lx + 22 << "\" y2=\"" << ly
        << "\" stroke=\"" << kColors[si % 8] << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << lx + 28 << "\" y=\"" << ly + 4 << "\">" << reports[si].series
        << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw ConfigError("write failed: " + path);
}

}  // namespace

void emit_report(const std::vector<SeriesReport>& reports, const std::string& out_dir) {
  if (reports.empty()) throw ConfigError("emit_report: no report series");
  for (const SeriesReport& sr : reports) {
    if (sr.report.rows.empty()) {
      throw ConfigError("emit_report: series '" + sr.series + "' has no metric rows");
    }
  }
  std::filesystem::create_directories(out_dir);

  for (const SeriesReport& sr : reports) {
    const std::string path = out_dir + "/scores_" + sr.series + ".csv";
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << "variable,lead_hours,metric,value,count\n";
    for (const ScoreRow& row : sr.report.rows) {
      for (const char* metric : kMetrics) {
        out << row.variable << ',' << row.lead_hours << ',' << metric << ','
            << fmt_double(metric_value(row, metric)) << ',' << row.count << '\n';
      }
    }
    if (!out) throw ConfigError("write failed: " + path);
  }
  for (const char* metric : kMetrics) {
    write_metric_svg(reports, metric, out_dir + "/" + metric + ".svg");
  }
}

ScoreReport read_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisite("scores CSV not found: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "variable,lead_hours,metric,value,count") {
    throw ConfigError(path + ": unexpected header");
  }
  std::map<std::pair<std::string, int>, ScoreRow> rows;
  std::vector<std::pair<std::string, int>> order;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string variable, lead_s, metric, value_s, count_s;
    if (!std::getline(ss, variable, ',') || !std::getline(ss, lead_s, ',') ||
        !std::getline(ss, metric, ',') || !std::getline(ss, value_s, ',') ||
        !std::getline(ss, count_s)) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed row");
    }
    const int lead = std::stoi(lead_s);
    const double value = std::strtod(value_s.c_str(), nullptr);
    auto key = std::make_pair(variable, lead);
    if (!rows.count(key)) {
      order.push_back(key);
      ScoreRow row;
      row.variable = variable;
      row.lead_hours = lead;
      rows[key] = row;
    }
    ScoreRow& row = rows[key];
    row.count = static_cast<std::size_t>(std::stoull(count_s));
    if (metric == "rmse") row.rmse = value;
    else if (metric == "acc") row.acc = value;
    else if (metric == "bias") row.bias = value;
    else if (metric == "activity") row.activity = value;
    else throw ConfigError(path + ": unknown metric '" + metric + "'");
  }
  ScoreReport report;
  for (const auto& key : order) report.rows.push_back(rows[key]);
  return report;
}

void write_station_csv(const std::vector<StationTableRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << "variable,month,lead_days,rmse,n_stations\n";
  for (const StationTableRow& row : rows) {
    out << row.variable << ',' << row.month << ',' << row.lead_days << ',' << fmt_double(row.rmse)
        << ',' << row.n_stations << '\n';
  }
  if (!out) throw ConfigError("write failed: " + path);
}

std::vector<StationTableRow> read_station_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisite("station CSV not found: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "variable,month,lead_days,rmse,n_stations") {
    throw ConfigError(path + ": unexpected header");
  }
  std::vector<StationTableRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string variable, month_s, lead_s, rmse_s, n_s;
    if (!std::getline(ss, variable, ',') || !std::getline(ss, month_s, ',') ||
        !std::getline(ss, lead_s, ',') || !std::getline(ss, rmse_s, ',') || !std::getline(ss, n_s)) {
      throw ConfigError(path + ": malformed row");
    }
    StationTableRow row;
    row.variable = variable;
    row.month = std::stoi(month_s);
    row.lead_days = std::stoi(lead_s);
    row.rmse = std::strtod(rmse_s.c_str(), nullptr);
    row.n_stations = static_cast<std::size_t>(std::stoull(n_s));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ghr
