#include "ghr/climatology.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "ghr/errors.hpp"
#include "ghr/io.hpp"

namespace ghr {

Climatology build_climatology(const DatasetManifest& manifest) {
  if (manifest.entries.empty()) throw ConfigError("build_climatology: empty manifest");

  // Bucket manifest indices by day-of-year, then average one day at a time
  // so only a single float64 accumulator lives at once.
  std::map<int, std::vector<std::size_t>> by_doy;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const CivilTime c = to_civil(manifest.entries[i].valid_time);
    by_doy[day_of_year_366(c.month, c.day)].push_back(i);
  }

  std::string missing;
  for (int d = 1; d <= 366; ++d) {
    if (d == 60) continue;  // Feb 29 may be filled from neighbors
    if (!by_doy.count(d)) missing += (missing.empty() ? "" : ", ") + std::to_string(d);
  }
  if (!missing.empty()) {
    throw ConfigError("build_climatology: manifest does not cover day(s) of year: " + missing);
  }

  Climatology clim;
  clim.grid = manifest.grid;
  clim.vars = manifest.vars;
  clim.by_doy.resize(366);
  clim.source_period = format_iso8601(manifest.entries.front().valid_time) + ".." +
                       format_iso8601(manifest.entries.back().valid_time);

  const Index C = manifest.vars.count();
  const Index H = manifest.grid.n_lat, W = manifest.grid.n_lon;
  const Index n = C * H * W;
  std::vector<double> acc(static_cast<std::size_t>(n));

  for (const auto& [doy, indices] : by_doy) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t idx : indices) {
      const WeatherState s = load_manifest_state(manifest, idx);
      const float* p = s.values.data().data();
      for (Index e = 0; e < n; ++e) acc[static_cast<std::size_t>(e)] += static_cast<double>(p[e]);
    }
    Tensor field = Tensor::zeros({C, H, W});
    float* out = field.raw_data().data();
    const double inv = 1.0 / static_cast<double>(indices.size());
    for (Index e = 0; e < n; ++e) out[e] = static_cast<float>(acc[static_cast<std::size_t>(e)] * inv);
    clim.by_doy[static_cast<std::size_t>(doy - 1)] = std::move(field);
  }

  if (!by_doy.count(60)) {
    // No leap day in the source period: fill Feb 29 with the mean of
    // Feb 28 and Mar 1.
    const Tensor& a = clim.by_doy[58];
    const Tensor& b = clim.by_doy[60];
    Tensor field = Tensor::zeros({C, H, W});
    float* out = field.raw_data().data();
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    for (Index e = 0; e < n; ++e) {
      out[e] = static_cast<float>(0.5 * (static_cast<double>(pa[e]) + static_cast<double>(pb[e])));
    }
    clim.by_doy[59] = std::move(field);
  }

  clim.validate();
  return clim;
}

void write_climatology(const Climatology& clim, const std::string& path) {
  clim.validate();
  NamedTensors entries;
  char buf[64];
  for (int c = 0; c < clim.vars.count(); ++c) {
    const ChannelDesc& d = clim.vars.channels[static_cast<std::size_t>(c)];
    std::snprintf(buf, sizeof(buf), "channel/%03d/", c);
    entries.emplace_back(std::string(buf) + d.name,
                         Tensor::from({2}, {static_cast<float>(d.kind), d.level_hpa}));
  }
  entries.emplace_back("period/" + clim.source_period, Tensor::zeros({1}));
  for (int d = 1; d <= 366; ++d) {
    std::snprintf(buf, sizeof(buf), "doy/%03d", d);
    entries.emplace_back(buf, clim.by_doy[static_cast<std::size_t>(d - 1)]);
  }
  write_params(entries, path);
}

Climatology read_climatology(const std::string& path) {
  const NamedTensors entries = read_params(path);
  Climatology clim;
  clim.by_doy.resize(366);
  std::map<int, ChannelDesc> channels;
  for (const auto& [name, tensor] : entries) {
    if (name.rfind("channel/", 0) == 0) {
      const std::size_t slash = name.find('/', 8);
      if (slash == std::string::npos || tensor.numel() != 2) {
        throw ParseError(path + ": malformed channel entry '" + name + "'", 0);
      }
      ChannelDesc d;
      d.name = name.substr(slash + 1);
      d.kind = tensor.data()[0] == 0.0f ? VarKind::Pressure : VarKind::Surface;
      d.level_hpa = tensor.data()[1];
      channels[std::stoi(name.substr(8, slash - 8))] = std::move(d);
    } else if (name.rfind("period/", 0) == 0) {
      clim.source_period = name.substr(7);
    } else if (name.rfind("doy/", 0) == 0) {
      const int d = std::stoi(name.substr(4));
      if (d < 1 || d > 366) throw ParseError(path + ": day-of-year out of range in '" + name + "'", 0);
      clim.by_doy[static_cast<std::size_t>(d - 1)] = tensor;
    }
  }
  for (const auto& [idx, desc] : channels) {
    if (idx != static_cast<int>(clim.vars.channels.size())) {
      throw ParseError(path + ": non-contiguous channel indices", 0);
    }
    clim.vars.channels.push_back(desc);
  }
  for (const Tensor& t : clim.by_doy) {
    if (!t.defined()) throw ParseError(path + ": incomplete day-of-year coverage", 0);
  }
  clim.grid = GridSpec::regular(static_cast<int>(clim.by_doy[0].dim(1)),
                                static_cast<int>(clim.by_doy[0].dim(2)));
  clim.validate();
  return clim;
}

}  // namespace ghr
