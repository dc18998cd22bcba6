#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ghr/grid.hpp"

namespace ghr {

// alpha(w) = n_lat * cos(theta_w) / sum_j cos(theta_j). Computed and kept
// in float64; sums to n_lat.
struct LatitudeWeights {
  std::vector<double> alpha;
};

LatitudeWeights latitude_weights(const GridSpec& grid);

// --------------------------------------------------------------------------
// Scalar verification metrics for one channel over T aligned init times.
// `forecasts[t]` and `targets[t]` are [C,H,W] stacks valid at the same
// time; climatology fields are aligned per t as well. All reductions run
// in float64 with a fixed (w outer, h inner) order.

// Mean over init times of the latitude-weighted spatial RMS error (the
// root sits inside the time average).
double weighted_rmse(const std::vector<Tensor>& forecasts, const std::vector<Tensor>& targets,
                     const LatitudeWeights& weights, int channel);

// Anomaly correlation against per-time climatology. Init times where
// either anomaly has zero variance are skipped and counted; the average
// runs over the surviving times (NaN when none survive).
double weighted_acc(const std::vector<Tensor>& forecasts, const std::vector<Tensor>& targets,
                    const std::vector<Tensor>& climatology, const LatitudeWeights& weights,
                    int channel, std::size_t* skipped = nullptr);

// Signed mean error target-minus-forecast (no square root: positive and
// negative biases cancel by design).
double weighted_bias(const std::vector<Tensor>& forecasts, const std::vector<Tensor>& targets,
                     const LatitudeWeights& weights, int channel);

// ForecastAnomaly: weighted stddev of forecast-minus-climatology (the
// prose definition). ErrorField: stddev of target-minus-forecast, the
// literal printed form with the missing square restored.
enum class ActivityMode { ForecastAnomaly, ErrorField };

double weighted_activity(const std::vector<Tensor>& forecasts, const std::vector<Tensor>& targets,
                         const std::vector<Tensor>& climatology, const LatitudeWeights& weights,
                         int channel, ActivityMode mode = ActivityMode::ForecastAnomaly);

// --------------------------------------------------------------------------
// Aggregated scores

struct ScoreRow {
  std::string variable;
  int lead_hours = 0;
  double rmse = 0.0;
  double acc = 0.0;
  double bias = 0.0;
  double activity = 0.0;
  std::size_t count = 0;  // init times entering the averages
};

struct ScoreReport {
  std::vector<ScoreRow> rows;
  std::string period;
  int n_lat = 0;
  int n_lon = 0;
};

// --------------------------------------------------------------------------
// Station evaluation

struct StationMatch {
  StationRecord record;
  int lat_idx = -1;
  int lon_idx = -1;
  double forecast = 0.0;
  double error = 0.0;  // forecast - observation
};

// Nearest cell center by great-circle distance; ties resolve to the lower
// flattened (lat_idx * n_lon + lon_idx) index.
void nearest_cell(const GridSpec& grid, double lat_deg, double lon_deg, int& lat_idx,
                  int& lon_idx);

struct ForecastSeries {
  std::int64_t init_time = 0;
  std::vector<std::pair<int, WeatherState>> leads;  // (lead hours, physical units)
};

struct StationTableRow {
  std::string variable;  // "t2m" | "ws10"
  int month = 0;         // init month 1..12
  int lead_days = 0;
  double rmse = 0.0;
  std::size_t n_stations = 0;  // distinct stations in this row
};

struct StationEvalResult {
  std::vector<StationTableRow> rows;
  std::vector<StationMatch> matches;  // every (station, time) sample used
  std::vector<std::int64_t> consumed_inits;
  std::size_t skipped_off_grid = 0;
  std::size_t skipped_init_times = 0;  // inits not at 00Z or 12Z
};

// Compares nearest-cell forecasts against observations at whole-day leads.
// Only 00Z/12Z init times are consumed. Wind speed observations ("ws10")
// are matched against sqrt(u10^2 + v10^2) of the forecast cell.
StationEvalResult station_eval(const std::vector<ForecastSeries>& forecasts,
                               const std::vector<StationRecord>& observations);

}  // namespace ghr
