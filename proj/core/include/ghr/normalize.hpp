#pragma once

#include <memory>
#include <vector>

#include "ghr/grid.hpp"

namespace ghr {

// Per-channel normalization statistics, computed once from the LR training
// split and reused verbatim for HR data. The LR/HR statistics gap is a
// deliberate property of the setup, not an accident.
struct ChannelStats {
  VariableSet vars;
  std::vector<double> mean;
  std::vector<double> stddev;

  void validate() const;
};

class DatasetManifest;

// Two-pass mean/stddev over every cell of every state in the manifest,
// accumulated in float64.
ChannelStats compute_stats(const DatasetManifest& manifest);

// (x - mean) / stddev per channel. Throws NumericalError when any stddev
// is below 1e-12.
WeatherState normalize(const WeatherState& state, std::shared_ptr<const ChannelStats> stats);
// Exact inverse up to float32 rounding; clears the normalization tag.
WeatherState denormalize(const WeatherState& state);
WeatherState denormalize(const WeatherState& state, const ChannelStats& stats);

}  // namespace ghr
