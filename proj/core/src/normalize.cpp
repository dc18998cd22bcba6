#include "ghr/normalize.hpp"

#include <cmath>

#include "ghr/errors.hpp"
#include "ghr/io.hpp"

namespace ghr {

void ChannelStats::validate() const {
  vars.validate();
  const std::size_t c = static_cast<std::size_t>(vars.count());
  if (mean.size() != c || stddev.size() != c) {
    throw ShapeError("ChannelStats: per-channel arrays do not match variable count");
  }
  for (double sd : stddev) {
    if (!(sd >= 0.0) || !std::isfinite(sd)) throw NumericalError("ChannelStats: invalid stddev");
  }
}

ChannelStats compute_stats(const DatasetManifest& manifest) {
  if (manifest.entries.empty()) throw ConfigError("compute_stats: empty manifest");
  const std::size_t C = static_cast<std::size_t>(manifest.vars.count());
  std::vector<double> sum(C, 0.0);
  std::vector<double> count(C, 0.0);
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const WeatherState s = load_manifest_state(manifest, i);
    const Index HW = s.values.dim(1) * s.values.dim(2);
    const float* p = s.values.data().data();
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (Index e = 0; e < HW; ++e) acc += static_cast<double>(p[static_cast<Index>(c) * HW + e]);
      sum[c] += acc;
      count[c] += static_cast<double>(HW);
    }
  }
  ChannelStats stats;
  stats.vars = manifest.vars;
  stats.mean.resize(C);
  stats.stddev.resize(C);
  for (std::size_t c = 0; c < C; ++c) stats.mean[c] = sum[c] / count[c];

  std::vector<double> sq(C, 0.0);
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const WeatherState s = load_manifest_state(manifest, i);
    const Index HW = s.values.dim(1) * s.values.dim(2);
    const float* p = s.values.data().data();
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (Index e = 0; e < HW; ++e) {
        const double d = static_cast<double>(p[static_cast<Index>(c) * HW + e]) - stats.mean[c];
        acc += d * d;
      }
      sq[c] += acc;
    }
  }
  for (std::size_t c = 0; c < C; ++c) stats.stddev[c] = std::sqrt(sq[c] / count[c]);
  stats.validate();
  return stats;
}

namespace {

WeatherState affine_per_channel(const WeatherState& state, const ChannelStats& stats, bool forward) {
  if (!stats.vars.same_as(state.vars)) {
    throw ShapeError("normalization stats were computed for a different variable set");
  }
  const Index C = state.values.dim(0);
  const Index HW = state.values.dim(1) * state.values.dim(2);
  for (Index c = 0; c < C; ++c) {
    if (stats.stddev[static_cast<std::size_t>(c)] < 1e-12) {
      throw NumericalError("normalize: stddev of channel " +
                           state.vars.channels[static_cast<std::size_t>(c)].name +
                           " is below 1e-12");
    }
  }
  WeatherState out = state;
  out.values = Tensor::zeros(state.values.shape());
  const float* src = state.values.data().data();
  float* dst = out.values.raw_data().data();
  for (Index c = 0; c < C; ++c) {
    const double m = stats.mean[static_cast<std::size_t>(c)];
    const double sd = stats.stddev[static_cast<std::size_t>(c)];
    for (Index e = 0; e < HW; ++e) {
      const double v = static_cast<double>(src[c * HW + e]);
      dst[c * HW + e] = static_cast<float>(forward ? (v - m) / sd : v * sd + m);
    }
  }
  return out;
}

}  // namespace

WeatherState normalize(const WeatherState& state, std::shared_ptr<const ChannelStats> stats) {
  if (!stats) throw ConfigError("normalize: no stats provided");
  if (state.normalization) throw ConfigError("normalize: state is already normalized");
  WeatherState out = affine_per_channel(state, *stats, true);
  out.normalization = std::move(stats);
  return out;
}

WeatherState denormalize(const WeatherState& state) {
  if (!state.normalization) throw ConfigError("denormalize: state carries no normalization");
  WeatherState out = affine_per_channel(state, *state.normalization, false);
  out.normalization = nullptr;
  return out;
}

WeatherState denormalize(const WeatherState& state, const ChannelStats& stats) {
  WeatherState out = affine_per_channel(state, stats, false);
  out.normalization = nullptr;
  return out;
}

}  // namespace ghr
