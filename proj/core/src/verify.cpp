#include "ghr/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "ghr/errors.hpp"

namespace ghr {

namespace {

constexpr double kDegToRad = 0.017453292519943295;

void check_series(const std::vector<Tensor>& forecasts, const std::vector<Tensor>& targets,
                  const LatitudeWeights& weights, int channel) {
  if (forecasts.empty() || forecasts.size() != targets.size()) {
    throw ShapeError("metric series: forecast/target counts disagree (" +
                     std::to_string(forecasts.size()) + " vs " + std::to_string(targets.size()) +
                     ")");
  }
  for (std::size_t t = 0; t < forecasts.size(); ++t) {
    if (forecasts[t].shape() != targets[t].shape()) {
      throw ShapeError("metric series: field shapes disagree at t=" + std::to_string(t));
    }
    if (forecasts[t].ndim() != 3 || channel < 0 || channel >= forecasts[t].dim(0)) {
      throw ShapeError("metric series: bad channel " + std::to_string(channel));
    }
    if (forecasts[t].dim(1) != static_cast<Index>(weights.alpha.size())) {
      throw ShapeError("metric series: weights do not match latitude count");
    }
  }
}

}  // namespace

LatitudeWeights latitude_weights(const GridSpec& grid) {
  grid.validate();
  LatitudeWeights w;
  w.alpha.resize(static_cast<std::size_t>(grid.n_lat));
  double denom = 0.0;
  for (int i = 0; i < grid.n_lat; ++i) {
    denom += std::cos(grid.lat_deg[static_cast<std::size_t>(i)] * kDegToRad);
  }
  for (int i = 0; i < grid.n_lat; ++i) {
    w.alpha[static_cast<std::size_t>(i)] =
        static_cast<double>(grid.n_lat) * std::cos(grid.lat_deg[static_cast<std::size_t>(i)] * kDegToRad) / denom;
  }
  return w;
}

double weighted_rmse(const std::vector<Tensor>& forecasts, const std::vector<Tensor>& targets,
                     const LatitudeWeights& weights, int channel) {
  check_series(forecasts, targets, weights, channel);
  const Index H = forecasts[0].dim(1), W = forecasts[0].dim(2);
  double acc_time = 0.0;
  for (std::size_t t = 0; t < forecasts.size(); ++t) {
    const float* f = forecasts[t].data().data() + channel * H * W;
    const float* g = targets[t].data().data() + channel * H * W;
    double acc = 0.0;
    for (Index w = 0; w < H; ++w) {
      const double alpha = weights.alpha[static_cast<std::size_t>(w)];
      for (Index h = 0; h < W; ++h) {
        const double d = static_cast<double>(g[w * W + h]) - static_cast<double>(f[w * W + h]);
        acc += alpha * d * d;
      }
    }
    acc_time += std::sqrt(acc / static_cast<double>(H * W));
  }
  return acc_time / static_cast<double>(forecasts.size());
}

double weighted_acc(const std::vector<Tensor>& forecasts, const std::vector<Tensor>& targets,
                    const std::vector<Tensor>& climatology, const LatitudeWeights& weights,
                    int channel, std::size_t* skipped) {
  check_series(forecasts, targets, weights, channel);
  if (climatology.size() != forecasts.size()) {
    throw ShapeError("weighted_acc: climatology series length mismatch");
  }
  const Index H = forecasts[0].dim(1), W = forecasts[0].dim(2);
  double acc_time = 0.0;
  std::size_t used = 0, skip = 0;
  for (std::size_t t = 0; t < forecasts.size(); ++t) {
    const float* f = forecasts[t].data().data() + channel * H * W;
    const float* g = targets[t].data().data() + channel * H * W;
    const float* c = climatology[t].data().data() + channel * H * W;
    double cross = 0.0, va = 0.0, vb = 0.0;
    for (Index w = 0; w < H; ++w) {
      const double alpha = weights.alpha[static_cast<std::size_t>(w)];
      for (Index h = 0; h < W; ++h) {
        const double a = static_cast<double>(g[w * W + h]) - static_cast<double>(c[w * W + h]);
        const double b = static_cast<double>(f[w * W + h]) - static_cast<double>(c[w * W + h]);
        cross += alpha * a * b;
        va += alpha * a * a;
        vb += alpha * b * b;
      }
    }
    if (va <= 0.0 || vb <= 0.0) {
      ++skip;
      continue;
    }
    acc_time += cross / std::sqrt(va * vb);
    ++used;
  }
  if (skipped) *skipped = skip;
  if (used == 0) return std::numeric_limits<double>::quiet_NaN();
  return acc_time / static_cast<double>(used);
}

double weighted_bias(const std::vector<Tensor>& forecasts, const std::vector<Tensor>& targets,
                     const LatitudeWeights& weights, int channel) {
  check_series(forecasts, targets, weights, channel);
  const Index H = forecasts[0].dim(1), W = forecasts[0].dim(2);
  double acc_time = 0.0;
  for (std::size_t t = 0; t < forecasts.size(); ++t) {
    const float* f = forecasts[t].data().data() + channel * H * W;
    const float* g = targets[t].data().data() + channel * H * W;
    double acc = 0.0;
    for (Index w = 0; w < H; ++w) {
      const double alpha = weights.alpha[static_cast<std::size_t>(w)];
      for (Index h = 0; h < W; ++h) {
        acc += alpha * (static_cast<double>(g[w * W + h]) - static_cast<double>(f[w * W + h]));
      }
    }
    acc_time += acc / static_cast<double>(H * W);
  }
  return acc_time / static_cast<double>(forecasts.size());
}

double weighted_activity(const std::vector<Tensor>& forecasts, const std::vector<Tensor>& targets,
                         const std::vector<Tensor>& climatology, const LatitudeWeights& weights,
                         int channel, ActivityMode mode) {
  check_series(forecasts, targets, weights, channel);
  if (mode == ActivityMode::ForecastAnomaly && climatology.size() != forecasts.size()) {
    throw ShapeError("weighted_activity: climatology series length mismatch");
  }
  const Index H = forecasts[0].dim(1), W = forecasts[0].dim(2);
  double acc_time = 0.0;
  for (std::size_t t = 0; t < forecasts.size(); ++t) {
    const float* f = forecasts[t].data().data() + channel * H * W;
    const float* ref = mode == ActivityMode::ForecastAnomaly
                           ? climatology[t].data().data() + channel * H * W
                           : targets[t].data().data() + channel * H * W;
    // g = forecast anomaly (default) or error field (literal mode).
    double mean = 0.0;
    for (Index w = 0; w < H; ++w) {
      const double alpha = weights.alpha[static_cast<std::size_t>(w)];
      for (Index h = 0; h < W; ++h) {
        const double g = mode == ActivityMode::ForecastAnomaly
                             ? static_cast<double>(f[w * W + h]) - static_cast<double>(ref[w * W + h])
                             : static_cast<double>(ref[w * W + h]) - static_cast<double>(f[w * W + h]);
        mean += alpha * g;
      }
    }
    mean /= static_cast<double>(H * W);
    double var = 0.0;
    for (Index w = 0; w < H; ++w) {
      const double alpha = weights.alpha[static_cast<std::size_t>(w)];
      for (Index h = 0; h < W; ++h) {
        const double g = mode == ActivityMode::ForecastAnomaly
                             ? static_cast<double>(f[w * W + h]) - static_cast<double>(ref[w * W + h])
                             : static_cast<double>(ref[w * W + h]) - static_cast<double>(f[w * W + h]);
        const double d = g - mean;
        var += alpha * d * d;
      }
    }
    acc_time += std::sqrt(var / static_cast<double>(H * W));
  }
  return acc_time / static_cast<double>(forecasts.size());
}

void nearest_cell(const GridSpec& grid, double lat_deg, double lon_deg, int& lat_idx,
                  int& lon_idx) {
  const double lat_r = lat_deg * kDegToRad;
  const double lon_r = lon_deg * kDegToRad;
  double best = std::numeric_limits<double>::infinity();
  lat_idx = -1;
  lon_idx = -1;
  for (int i = 0; i < grid.n_lat; ++i) {
    const double cell_lat = grid.lat_deg[static_cast<std::size_t>(i)] * kDegToRad;
    for (int j = 0; j < grid.n_lon; ++j) {
      const double cell_lon = grid.lon_deg[static_cast<std::size_t>(j)] * kDegToRad;
      // Haversine central angle.
      const double sdlat = std::sin(0.5 * (cell_lat - lat_r));
      const double sdlon = std::sin(0.5 * (cell_lon - lon_r));
      const double h = sdlat * sdlat + std::cos(lat_r) * std::cos(cell_lat) * sdlon * sdlon;
      const double d = 2.0 * std::asin(std::min(1.0, std::sqrt(h)));
      if (d < best) {  // strict: ties keep the lower flattened index
        best = d;
        lat_idx = i;
        lon_idx = j;
      }
    }
  }
}

StationEvalResult station_eval(const std::vector<ForecastSeries>& forecasts,
                               const std::vector<StationRecord>& observations) {
  StationEvalResult result;
  if (forecasts.empty()) throw ShapeError("station_eval: no forecasts");

  // Observations keyed by (valid_time, variable) for direct lookup.
  std::map<std::pair<std::int64_t, std::string>, std::vector<const StationRecord*>> obs_index;
  for (const StationRecord& r : observations) {
    obs_index[{r.valid_time, r.variable}].push_back(&r);
  }

  struct Bucket {
    double sq_sum = 0.0;
    std::size_t n = 0;
    std::set<std::string> stations;
  };
  std::map<std::tuple<std::string, int, int>, Bucket> buckets;

  // Nearest-cell lookup cache per station position.
  std::map<std::pair<double, double>, std::pair<int, int>> cell_cache;

  for (const ForecastSeries& run : forecasts) {
    const CivilTime init = to_civil(run.init_time);
    if (!(init.hour == 0 || init.hour == 12) || init.minute != 0 || init.second != 0) {
      ++result.skipped_init_times;
      continue;
    }
    result.consumed_inits.push_back(run.init_time);
    for (const auto& [lead_hours, state] : run.leads) {
      if (lead_hours % 24 != 0) continue;  // station tables are per whole-day lead
      const int lead_days = lead_hours / 24;
      const std::int64_t valid = run.init_time + static_cast<std::int64_t>(lead_hours) * kSecondsPerHour;
      const int t2m_ch = state.vars.find("t2m");
      const int u10_ch = state.vars.find("u10");
      const int v10_ch = state.vars.find("v10");
      const Index H = state.values.dim(1), W = state.values.dim(2);
      const float* vals = state.values.data().data();

      for (const char* variable : {"t2m", "ws10"}) {
        auto it = obs_index.find({valid, variable});
        if (it == obs_index.end()) continue;
        for (const StationRecord* obs : it->second) {
          if (obs->lat_deg < -90.0 || obs->lat_deg > 90.0) {
            ++result.skipped_off_grid;
            continue;
          }
          auto cached = cell_cache.find({obs->lat_deg, obs->lon_deg});
          if (cached == cell_cache.end()) {
            int li = -1, lj = -1;
            nearest_cell(state.grid, obs->lat_deg, obs->lon_deg, li, lj);
            cached = cell_cache.emplace(std::pair{obs->lat_deg, obs->lon_deg}, std::pair{li, lj}).first;
          }
          const auto [li, lj] = cached->second;
          double fc = 0.0;
          if (std::string(variable) == "t2m") {
            if (t2m_ch < 0) throw ConfigError("station_eval: forecast lacks a t2m channel");
            fc = static_cast<double>(vals[(static_cast<Index>(t2m_ch) * H + li) * W + lj]);
          } else {
            if (u10_ch < 0 || v10_ch < 0) {
              throw ConfigError("station_eval: forecast lacks u10/v10 channels for wind speed");
            }
            const double u = static_cast<double>(vals[(static_cast<Index>(u10_ch) * H + li) * W + lj]);
            const double v = static_cast<double>(vals[(static_cast<Index>(v10_ch) * H + li) * W + lj]);
            fc = std::sqrt(u * u + v * v);
          }
          StationMatch match;
          match.record = *obs;
          match.lat_idx = li;
          match.lon_idx = lj;
          match.forecast = fc;
          match.error = fc - obs->value;
          result.matches.push_back(match);

          Bucket& b = buckets[{variable, init.month, lead_days}];
          b.sq_sum += match.error * match.error;
          b.n += 1;
          b.stations.insert(obs->station_id);
        }
      }
    }
  }

  for (const auto& [key, bucket] : buckets) {
    StationTableRow row;
    row.variable = std::get<0>(key);
    row.month = std::get<1>(key);
    row.lead_days = std::get<2>(key);
    row.rmse = std::sqrt(bucket.sq_sum / static_cast<double>(bucket.n));
    row.n_stations = bucket.stations.size();
    result.rows.push_back(std::move(row));
  }
  return result;
}

}  // namespace ghr
