#include "ghr/grid.hpp"

#include <cmath>
#include <set>

#include "ghr/errors.hpp"

namespace ghr {

GridSpec GridSpec::regular(int n_lat, int n_lon) {
  if (n_lat <= 0 || n_lon <= 0) throw ShapeError("GridSpec::regular: non-positive grid size");
  if (n_lon != 2 * n_lat) {
    throw ShapeError("GridSpec::regular: need n_lon == 2*n_lat for one shared spacing, got " +
                     std::to_string(n_lat) + "x" + std::to_string(n_lon));
  }
  GridSpec g;
  g.n_lat = n_lat;
  g.n_lon = n_lon;
  g.spacing_deg = 360.0 / n_lon;
  g.lat_deg.resize(static_cast<std::size_t>(n_lat));
  g.lon_deg.resize(static_cast<std::size_t>(n_lon));
  for (int i = 0; i < n_lat; ++i) {
    g.lat_deg[static_cast<std::size_t>(i)] = 90.0 - g.spacing_deg * (i + 0.5);
  }
  for (int j = 0; j < n_lon; ++j) {
    g.lon_deg[static_cast<std::size_t>(j)] = g.spacing_deg * (j + 0.5);
  }
  return g;
}

GridSpec GridSpec::coarsen(int k) const {
  if (k <= 0 || k % 2 == 0) {
    throw ShapeError("GridSpec::coarsen: factor must be odd and positive, got " +
                     std::to_string(k));
  }
  if (n_lat % k != 0 || n_lon % k != 0) {
    throw ShapeError("GridSpec::coarsen: " + std::to_string(n_lat) + "x" + std::to_string(n_lon) +
                     " not divisible by " + std::to_string(k));
  }
  // The center subsample of a regular grid is the regular grid at k times
  // the spacing: 90 - s*(k*i + (k-1)/2 + 0.5) == 90 - (k*s)*(i + 0.5).
  return regular(n_lat / k, n_lon / k);
}

void GridSpec::validate() const {
  if (n_lat <= 0 || n_lon <= 0) throw ShapeError("GridSpec: empty grid");
  if (static_cast<int>(lat_deg.size()) != n_lat || static_cast<int>(lon_deg.size()) != n_lon) {
    throw ShapeError("GridSpec: coordinate array sizes disagree with n_lat/n_lon");
  }
  if (std::fabs(n_lon * spacing_deg - 360.0) > 1e-6) {
    throw ShapeError("GridSpec: n_lon * spacing != 360 degrees");
  }
  for (int i = 1; i < n_lat; ++i) {
    const double d = lat_deg[static_cast<std::size_t>(i - 1)] - lat_deg[static_cast<std::size_t>(i)];
    if (std::fabs(d - spacing_deg) > 1e-9) throw ShapeError("GridSpec: non-uniform latitude spacing");
  }
  for (int j = 1; j < n_lon; ++j) {
    const double d = lon_deg[static_cast<std::size_t>(j)] - lon_deg[static_cast<std::size_t>(j - 1)];
    if (std::fabs(d - spacing_deg) > 1e-9) throw ShapeError("GridSpec: non-uniform longitude spacing");
  }
}

bool GridSpec::same_as(const GridSpec& other, double tol) const {
  if (n_lat != other.n_lat || n_lon != other.n_lon) return false;
  if (std::fabs(spacing_deg - other.spacing_deg) > tol) return false;
  for (int i = 0; i < n_lat; ++i) {
    if (std::fabs(lat_deg[static_cast<std::size_t>(i)] - other.lat_deg[static_cast<std::size_t>(i)]) > tol) return false;
  }
  return true;
}

int VariableSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

void VariableSet::validate() const {
  if (channels.empty()) throw ShapeError("VariableSet: no channels");
  std::set<std::string> seen;
  for (const ChannelDesc& c : channels) {
    if (c.name.empty()) throw ShapeError("VariableSet: empty channel name");
    if (!seen.insert(c.name).second) throw ShapeError("VariableSet: duplicate channel " + c.name);
  }
}

bool VariableSet::same_as(const VariableSet& other) const {
  if (channels.size() != other.channels.size()) return false;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i].name != other.channels[i].name || channels[i].kind != other.channels[i].kind ||
        channels[i].level_hpa != other.channels[i].level_hpa) {
      return false;
    }
  }
  return true;
}

VariableSet VariableSet::toy() {
  VariableSet v;
  for (int level : {1000, 850, 700, 500, 300}) {
    v.channels.push_back({"t" + std::to_string(level), VarKind::Pressure, static_cast<float>(level)});
  }
  v.channels.push_back({"t2m", VarKind::Surface, 0.0f});
  v.channels.push_back({"u10", VarKind::Surface, 0.0f});
  v.channels.push_back({"v10", VarKind::Surface, 0.0f});
  return v;
}

VariableSet VariableSet::canonical() {
  VariableSet v;
  const int levels[13] = {50, 100, 150, 200, 250, 300, 400, 500, 600, 700, 850, 925, 1000};
  for (const char* var : {"z", "q", "u", "v", "t"}) {
    for (int level : levels) {
      v.channels.push_back({std::string(var) + std::to_string(level), VarKind::Pressure,
                            static_cast<float>(level)});
    }
  }
  for (const char* var : {"t2m", "u10", "v10", "msl"}) {
    v.channels.push_back({var, VarKind::Surface, 0.0f});
  }
  return v;
}

void WeatherState::validate() const {
  grid.validate();
  vars.validate();
  if (!values.defined() || values.ndim() != 3) throw ShapeError("WeatherState: values must be [C,H,W]");
  if (values.dim(0) != vars.count() || values.dim(1) != grid.n_lat || values.dim(2) != grid.n_lon) {
    throw ShapeError("WeatherState: values " + shape_str(values.shape()) + " do not match C=" +
                     std::to_string(vars.count()) + ", grid " + std::to_string(grid.n_lat) + "x" +
                     std::to_string(grid.n_lon));
  }
  if (valid_time % kStepSeconds != 0) {
    throw ShapeError("WeatherState: valid_time " + format_iso8601(valid_time) +
                     " is not on a 6-hour boundary");
  }
}

const Tensor& Climatology::at_time(std::int64_t t) const {
  const CivilTime c = to_civil(t);
  const int doy = day_of_year_366(c.month, c.day);
  return by_doy[static_cast<std::size_t>(doy - 1)];
}

void Climatology::validate() const {
  grid.validate();
  vars.validate();
  if (by_doy.size() != 366) {
    throw ShapeError("Climatology: expected 366 day-of-year fields, got " +
                     std::to_string(by_doy.size()));
  }
  for (const Tensor& t : by_doy) {
    if (!t.defined() || t.ndim() != 3 || t.dim(0) != vars.count() || t.dim(1) != grid.n_lat ||
        t.dim(2) != grid.n_lon) {
      throw ShapeError("Climatology: field shape mismatch");
    }
  }
}

void DatasetManifest::validate() const {
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].valid_time <= entries[i - 1].valid_time) {
      throw ShapeError("manifest '" + split + "': timestamps not strictly increasing near " +
                       format_iso8601(entries[i].valid_time));
    }
  }
}

std::vector<std::pair<std::size_t, std::size_t>> DatasetManifest::trajectories() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= entries.size(); ++i) {
    const bool boundary =
        i == entries.size() || entries[i].valid_time - entries[i - 1].valid_time != kStepSeconds;
    if (boundary) {
      out.emplace_back(begin, i);
      begin = i;
    }
  }
  return out;
}

Tensor upsample_nearest(const Tensor& values, int k) {
  if (values.ndim() != 3) throw ShapeError("upsample_nearest: expected [C,h,w]");
  if (k <= 0) throw ShapeError("upsample_nearest: factor must be positive");
  const Index C = values.dim(0), h = values.dim(1), w = values.dim(2);
  Tensor out = Tensor::zeros({C, h * k, w * k});
  const float* src = values.data().data();
  float* dst = out.raw_data().data();
  for (Index c = 0; c < C; ++c) {
    for (Index i = 0; i < h * k; ++i) {
      const float* srow = src + (c * h + i / k) * w;
      float* drow = dst + (c * h * k + i) * (w * k);
      for (Index j = 0; j < w * k; ++j) drow[j] = srow[j / k];
    }
  }
  return out;
}

WeatherState subsample_centers(const WeatherState& hr, int k) {
  if (k % 2 == 0) throw ShapeError("subsample_centers: factor must be odd, got " + std::to_string(k));
  GridSpec coarse = hr.grid.coarsen(k);
  const Index C = hr.values.dim(0);
  const Index H = hr.values.dim(1), W = hr.values.dim(2);
  const Index h = H / k, w = W / k;
  const Index off = (k - 1) / 2;
  Tensor out = Tensor::zeros({C, h, w});
  const float* src = hr.values.data().data();
  float* dst = out.raw_data().data();
  for (Index c = 0; c < C; ++c) {
    for (Index i = 0; i < h; ++i) {
      const float* srow = src + (c * H + (i * k + off)) * W;
      float* drow = dst + (c * h + i) * w;
      for (Index j = 0; j < w; ++j) drow[j] = srow[j * k + off];
    }
  }
  WeatherState lr;
  lr.grid = std::move(coarse);
  lr.vars = hr.vars;
  lr.values = std::move(out);
  lr.valid_time = hr.valid_time;
  lr.normalization = hr.normalization;
  return lr;
}

}  // namespace ghr
