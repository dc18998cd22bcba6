#include "ghr/stations.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ghr/errors.hpp"

namespace ghr {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

StationIngest ingest_stations(const std::string& csv_path, bool strict) {
  std::ifstream in(csv_path);
  if (!in) throw MissingPrerequisite("station CSV not found: " + csv_path);

  std::string line;
  if (!std::getline(in, line)) throw ConfigError(csv_path + ": empty file");
  if (line != "station_id,lat,lon,time_iso8601,variable,value") {
    throw ConfigError(csv_path + ": unexpected header '" + line + "'");
  }

  StationIngest out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto reject = [&](const std::string& why) {
      if (strict) {
        throw ConfigError(csv_path + ":" + std::to_string(lineno) + ": " + why);
      }
      ++out.dropped;
    };
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 6) {
      reject("expected 6 fields, got " + std::to_string(f.size()));
      continue;
    }
    StationRecord r;
    r.station_id = f[0];
    try {
      r.lat_deg = std::stod(f[1]);
      r.lon_deg = std::stod(f[2]);
      r.valid_time = parse_iso8601(f[3]);
      r.variable = f[4];
      r.value = std::stod(f[5]);
    } catch (const std::exception& e) {
      reject(std::string("unparseable row: ") + e.what());
      continue;
    }
    if (!(r.lat_deg >= -90.0 && r.lat_deg <= 90.0)) {
      reject("latitude out of range: " + f[1]);
      continue;
    }
    if (!std::isfinite(r.value) || !std::isfinite(r.lon_deg)) {
      reject("non-finite value");
      continue;
    }
    r.lon_deg = std::fmod(r.lon_deg, 360.0);
    if (r.lon_deg < 0.0) r.lon_deg += 360.0;
    out.records.push_back(std::move(r));
  }
  return out;
}

void write_stations_csv(const std::vector<StationRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << "station_id,lat,lon,time_iso8601,variable,value\n";
  char buf[160];
  for (const StationRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%s,%s,%.6f\n", r.station_id.c_str(), r.lat_deg,
                  r.lon_deg, format_iso8601(r.valid_time).c_str(), r.variable.c_str(), r.value);
    out << buf;
  }
  if (!out) throw ConfigError("write failed: " + path);
}

}  // namespace ghr
