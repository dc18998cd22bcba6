#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ghr/grid.hpp"
#include "ghr/normalize.hpp"

namespace ghr {

// --------------------------------------------------------------------------
// Weather-state container, magic "GHR1", version 1. Little-endian layout:
//   "GHR1"                      4 bytes
//   version                     u32 (= 1)
//   C, H, W                     u32 each
//   valid_time                  i64 (unix seconds, UTC)
//   grid spacing                f64 (degrees)
//   per channel: name_len u32, name bytes, kind u8 (0 pressure, 1 surface),
//                level f32 (hPa; 0 for surface)
//   values                      C*H*W f32, row-major [C,H,W]
// The grid is reconstructed from (H, W, spacing) as a regular global grid.

void write_state(const WeatherState& state, const std::string& path);
WeatherState read_state(const std::string& path);

// --------------------------------------------------------------------------
// Named-tensor container for parameter checkpoints, magic "GHRP", version 1:
//   "GHRP"                      4 bytes
//   version                     u32 (= 1)
//   tensor count                u32
//   per tensor: name_len u32, name bytes, ndim u32, dims u32[ndim],
//               offset u64 (absolute file offset of the f32 block)
//   data blocks                 f32, row-major, in manifest order

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_params(const NamedTensors& params, const std::string& path);
NamedTensors read_params(const std::string& path);

// Positional lookup helper; throws MissingPrerequisite when absent.
const Tensor& find_param(const NamedTensors& params, const std::string& name);

// --------------------------------------------------------------------------
// Manifests: one "ISO8601<TAB>path" line per state, ordered by time.

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);
// Loads the entry list and opens the first state for grid/variable metadata.
DatasetManifest load_manifest(const std::string& path, const std::string& split);
WeatherState load_manifest_state(const DatasetManifest& manifest, std::size_t index);

// --------------------------------------------------------------------------
// Normalization statistics: "name<TAB>mean<TAB>stddev" per channel, with
// full float64 round-trip precision.

void write_stats(const ChannelStats& stats, const std::string& path);
ChannelStats read_stats(const std::string& path, const VariableSet& vars);

bool file_exists(const std::string& path);

}  // namespace ghr
