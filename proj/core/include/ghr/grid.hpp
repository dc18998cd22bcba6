#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ghr/tensor.hpp"
#include "ghr/timeutil.hpp"

namespace ghr {

// Regular global latitude/longitude grid of cell centers. Latitudes run
// north to south from +90-spacing/2 to -90+spacing/2; longitudes run east
// from spacing/2 in [0, 360). One spacing serves both axes, which pins
// n_lon == 2 * n_lat.
struct GridSpec {
  int n_lat = 0;
  int n_lon = 0;
  std::vector<double> lat_deg;
  std::vector<double> lon_deg;
  double spacing_deg = 0.0;

  static GridSpec regular(int n_lat, int n_lon);

  // Center subsample: every k-th cell starting at offset (k-1)/2. Requires
  // odd k dividing both dimensions; the result is again a regular grid.
  GridSpec coarsen(int k) const;

  void validate() const;
  bool same_as(const GridSpec& other, double tol = 1e-9) const;
};

enum class VarKind : std::uint8_t { Pressure = 0, Surface = 1 };

struct ChannelDesc {
  std::string name;  // unique label, e.g. "t850", "t2m"
  VarKind kind = VarKind::Surface;
  float level_hpa = 0.0f;  // 0 for surface channels
};

struct VariableSet {
  std::vector<ChannelDesc> channels;

  int count() const { return static_cast<int>(channels.size()); }
  int find(const std::string& name) const;  // -1 when absent
  void validate() const;
  bool same_as(const VariableSet& other) const;

  // 1 pressure variable on 5 levels plus t2m/u10/v10: 8 channels.
  static VariableSet toy();
  // 5 pressure variables x 13 levels plus 4 surface: 69 channels.
  static VariableSet canonical();
};

struct ChannelStats;  // normalize.hpp

// One atmospheric snapshot: values[C,H,W] on `grid` at `valid_time`.
struct WeatherState {
  GridSpec grid;
  VariableSet vars;
  Tensor values;
  std::int64_t valid_time = 0;
  // Set when values are in normalized units; carries the stats used.
  std::shared_ptr<const ChannelStats> normalization;

  void validate() const;
};

// Day-of-year mean fields (index 0 = Jan 1 ... 365 = Dec 31 of a leap
// calendar). Feb 29 is averaged from its neighbors when the source years
// contain no leap day.
struct Climatology {
  GridSpec grid;
  VariableSet vars;
  std::vector<Tensor> by_doy;  // 366 tensors [C,H,W]
  std::string source_period;

  const Tensor& at_time(std::int64_t unix_seconds) const;
  void validate() const;
};

struct StationRecord {
  std::string station_id;
  double lat_deg = 0.0;
  double lon_deg = 0.0;  // normalized to [0, 360)
  std::int64_t valid_time = 0;
  std::string variable;  // "t2m" | "ws10"
  double value = 0.0;
};

struct ManifestEntry {
  std::int64_t valid_time = 0;
  std::string path;
};

// Ordered list of state files of one split. Entries are strictly
// increasing; a gap larger than one 6-hour step starts a new trajectory.
struct DatasetManifest {
  std::string split;
  std::vector<ManifestEntry> entries;
  GridSpec grid;
  VariableSet vars;

  void validate() const;
  // Half-open [begin, end) index ranges of 6-hour-contiguous runs.
  std::vector<std::pair<std::size_t, std::size_t>> trajectories() const;
};

// Nearest-neighbor upsample of a [C,h,w] stack by factor k on both axes.
Tensor upsample_nearest(const Tensor& values, int k);

// Center subsample of an HR state onto its k-coarsened grid (odd k).
WeatherState subsample_centers(const WeatherState& hr, int k);

}  // namespace ghr
