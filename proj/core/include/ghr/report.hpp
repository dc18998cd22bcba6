#pragma once

#include <string>
#include <vector>

#include "ghr/verify.hpp"

namespace ghr {

struct SeriesReport {
  std::string series;  // "model" | "persistence" | "climatology" | ...
  ScoreReport report;
};

// Writes scores_<series>.csv per series (schema:
// variable,lead_hours,metric,value,count) and one SVG line chart per
// metric with a panel per variable and one polyline per series. Refuses
// to write anything when the report set is empty.
void emit_report(const std::vector<SeriesReport>& reports, const std::string& out_dir);

// Parses a scores CSV back into a ScoreReport (inverse of emit_report's
// CSV writer; values round-trip exactly).
ScoreReport read_scores_csv(const std::string& path);

// Station tables: variable,month,lead_days,rmse,n_stations.
void write_station_csv(const std::vector<StationTableRow>& rows, const std::string& path);
std::vector<StationTableRow> read_station_csv(const std::string& path);

}  // namespace ghr
