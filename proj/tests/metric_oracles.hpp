#pragma once

// Independent float64 scalar-loop transcriptions of the latitude-weighted
// verification formulas. These recompute everything from grid latitudes
// directly and never touch the library's LatitudeWeights, so they can sit
// on the other side of an equivalence check.

#include <cmath>
#include <vector>

#include "ghr/grid.hpp"

namespace oracle {

inline std::vector<double> weights(const ghr::GridSpec& grid) {
  const double deg = 0.017453292519943295;
  double denom = 0.0;
  for (double lat : grid.lat_deg) denom += std::cos(lat * deg);
  std::vector<double> alpha;
  for (double lat : grid.lat_deg) {
    alpha.push_back(static_cast<double>(grid.n_lat) * std::cos(lat * deg) / denom);
  }
  return alpha;
}

inline double rmse(const std::vector<ghr::Tensor>& fc, const std::vector<ghr::Tensor>& tg,
                   const ghr::GridSpec& grid, int c) {
  const std::vector<double> alpha = weights(grid);
  const ghr::Index H = grid.n_lat, W = grid.n_lon;
  double total = 0.0;
  for (std::size_t t = 0; t < fc.size(); ++t) {
    double inner = 0.0;
    for (ghr::Index w = 0; w < H; ++w) {
      for (ghr::Index h = 0; h < W; ++h) {
        const double x = tg[t].at({c, w, h});
        const double xh = fc[t].at({c, w, h});
        inner += alpha[static_cast<std::size_t>(w)] * (x - xh) * (x - xh);
      }
    }
    total += std::sqrt(inner / static_cast<double>(H * W));
  }
  return total / static_cast<double>(fc.size());
}

inline double acc(const std::vector<ghr::Tensor>& fc, const std::vector<ghr::Tensor>& tg,
                  const std::vector<ghr::Tensor>& clim, const ghr::GridSpec& grid, int c) {
  const std::vector<double> alpha = weights(grid);
  const ghr::Index H = grid.n_lat, W = grid.n_lon;
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t t = 0; t < fc.size(); ++t) {
    double num = 0.0, da = 0.0, db = 0.0;
    for (ghr::Index w = 0; w < H; ++w) {
      for (ghr::Index h = 0; h < W; ++h) {
        const double a = static_cast<double>(tg[t].at({c, w, h})) - clim[t].at({c, w, h});
        const double b = static_cast<double>(fc[t].at({c, w, h})) - clim[t].at({c, w, h});
        num += alpha[static_cast<std::size_t>(w)] * a * b;
        da += alpha[static_cast<std::size_t>(w)] * a * a;
        db += alpha[static_cast<std::size_t>(w)] * b * b;
      }
    }
    if (da <= 0.0 || db <= 0.0) continue;
    total += num / std::sqrt(da * db);
    ++used;
  }
  return used ? total / static_cast<double>(used) : std::nan("");
}

inline double bias(const std::vector<ghr::Tensor>& fc, const std::vector<ghr::Tensor>& tg,
                   const ghr::GridSpec& grid, int c) {
  const std::vector<double> alpha = weights(grid);
  const ghr::Index H = grid.n_lat, W = grid.n_lon;
  double total = 0.0;
  for (std::size_t t = 0; t < fc.size(); ++t) {
    double inner = 0.0;
    for (ghr::Index w = 0; w < H; ++w) {
      for (ghr::Index h = 0; h < W; ++h) {
        inner += alpha[static_cast<std::size_t>(w)] *
                 (static_cast<double>(tg[t].at({c, w, h})) - fc[t].at({c, w, h}));
      }
    }
    total += inner / static_cast<double>(H * W);
  }
  return total / static_cast<double>(fc.size());
}

// Weighted stddev of the forecast anomaly (forecast - climatology).
inline double activity(const std::vector<ghr::Tensor>& fc, const std::vector<ghr::Tensor>& clim,
                       const ghr::GridSpec& grid, int c) {
  const std::vector<double> alpha = weights(grid);
  const ghr::Index H = grid.n_lat, W = grid.n_lon;
  double total = 0.0;
  for (std::size_t t = 0; t < fc.size(); ++t) {
    double mean = 0.0;
    for (ghr::Index w = 0; w < H; ++w) {
      for (ghr::Index h = 0; h < W; ++h) {
        mean += alpha[static_cast<std::size_t>(w)] *
                (static_cast<double>(fc[t].at({c, w, h})) - clim[t].at({c, w, h}));
      }
    }
    mean /= static_cast<double>(H * W);
    double var = 0.0;
    for (ghr::Index w = 0; w < H; ++w) {
      for (ghr::Index h = 0; h < W; ++h) {
        const double g = static_cast<double>(fc[t].at({c, w, h})) - clim[t].at({c, w, h});
        var += alpha[static_cast<std::size_t>(w)] * (g - mean) * (g - mean);
      }
    }
    total += std::sqrt(var / static_cast<double>(H * W));
  }
  return total / static_cast<double>(fc.size());
}

}  // namespace oracle
