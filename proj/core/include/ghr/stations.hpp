#pragma once

#include <string>
#include <vector>

#include "ghr/grid.hpp"

namespace ghr {

struct StationIngest {
  std::vector<StationRecord> records;
  std::size_t dropped = 0;  // malformed or non-finite rows (lenient mode)
};

// CSV with header "station_id,lat,lon,time_iso8601,variable,value".
// Longitudes are normalized to [0, 360); rows with lat outside [-90, 90]
// or non-finite values are dropped and counted. In strict mode any bad
// row raises ConfigError instead.
StationIngest ingest_stations(const std::string& csv_path, bool strict = false);

void write_stations_csv(const std::vector<StationRecord>& records, const std::string& path);

}  // namespace ghr
