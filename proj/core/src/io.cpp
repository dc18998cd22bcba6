#include "ghr/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ghr/errors.hpp"

namespace ghr {

namespace {

// Little-endian byte IO. The project targets little-endian hosts but the
// explicit packing keeps the on-disk format pinned regardless.

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw ConfigError("cannot open for writing: " + path);
  }
  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) {
    std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                         static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    u32(static_cast<std::uint32_t>(v >> 32));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f32(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u32(u);
  }
  void f64(double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    u64(u);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f32_block(std::span<const float> vals) {
    // Bulk write: safe on little-endian hosts, which this project targets.
    bytes(vals.data(), vals.size() * 4);
  }
  void close(const std::string& what) {
    out_.close();
    if (!out_) throw ConfigError("write failed for " + what + ": " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw ParseError("cannot open: " + path, 0);
  }
  std::uint64_t offset() const { return offset_; }
  void bytes(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw ParseError(path_ + ": truncated while reading " + what, offset_);
    }
    offset_ += n;
  }
  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    bytes(&v, 1, what);
    return v;
  }
  std::uint32_t u32(const char* what) {
    std::uint8_t b[4];
    bytes(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::uint64_t u64(const char* what) {
    const std::uint64_t lo = u32(what);
    const std::uint64_t hi = u32(what);
    return lo | (hi << 32);
  }
  std::int64_t i64(const char* what) { return static_cast<std::int64_t>(u64(what)); }
  float f32(const char* what) {
    const std::uint32_t u = u32(what);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  double f64(const char* what) {
    const std::uint64_t u = u64(what);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    if (n > (1u << 20)) throw ParseError(path_ + ": implausible string length", offset_ - 4);
    std::string s(n, '\0');
    if (n) bytes(s.data(), n, what);
    return s;
  }
  void f32_block(std::span<float> vals, const char* what) {
    bytes(vals.data(), vals.size() * 4, what);
  }
  void seek(std::uint64_t off) {
    in_.seekg(static_cast<std::streamoff>(off));
    if (!in_) throw ParseError(path_ + ": seek failed", off);
    offset_ = off;
  }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
  std::uint64_t offset_ = 0;
};

constexpr char kStateMagic[4] = {'G', 'H', 'R', '1'};
constexpr char kParamMagic[4] = {'G', 'H', 'R', 'P'};

}  // namespace

void write_state(const WeatherState& state, const std::string& path) {
  state.validate();
  Writer w(path);
  w.bytes(kStateMagic, 4);
  w.u32(1);
  const auto C = static_cast<std::uint32_t>(state.vars.count());
  const auto H = static_cast<std::uint32_t>(state.grid.n_lat);
  const auto W = static_cast<std::uint32_t>(state.grid.n_lon);
  w.u32(C);
  w.u32(H);
  w.u32(W);
  w.i64(state.valid_time);
  w.f64(state.grid.spacing_deg);
  for (const ChannelDesc& c : state.vars.channels) {
    w.str(c.name);
    w.u8(static_cast<std::uint8_t>(c.kind));
    w.f32(c.level_hpa);
  }
  w.f32_block(state.values.data());
  w.close("state " + format_iso8601(state.valid_time));
}

WeatherState read_state(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kStateMagic, 4) != 0) {
    throw ParseError(path + ": bad magic, not a GHR1 state file", 0);
  }
  const std::uint32_t version = r.u32("version");
  if (version != 1) throw ParseError(path + ": unsupported state version " + std::to_string(version), 4);
  const std::uint32_t C = r.u32("C");
  const std::uint32_t H = r.u32("H");
  const std::uint32_t W = r.u32("W");
  if (C == 0 || H == 0 || W == 0 || C > 4096 || H > 65536 || W > 65536) {
    throw ParseError(path + ": implausible dimensions", 8);
  }
  WeatherState s;
  s.valid_time = r.i64("valid_time");
  const double spacing = r.f64("spacing");
  if (!(spacing > 0.0) || std::fabs(W * spacing - 360.0) > 1e-6 ||
      std::fabs(H * spacing - 180.0) > 1e-6) {
    throw ParseError(path + ": spacing inconsistent with grid dimensions", 24);
  }
  s.grid = GridSpec::regular(static_cast<int>(H), static_cast<int>(W));
  for (std::uint32_t c = 0; c < C; ++c) {
    ChannelDesc d;
    d.name = r.str("channel name");
    const std::uint8_t kind = r.u8("channel kind");
    if (kind > 1) throw ParseError(path + ": invalid channel kind", r.offset() - 1);
    d.kind = static_cast<VarKind>(kind);
    d.level_hpa = r.f32("channel level");
    s.vars.channels.push_back(std::move(d));
  }
  s.values = Tensor::zeros({static_cast<Index>(C), static_cast<Index>(H), static_cast<Index>(W)});
  r.f32_block(s.values.raw_data(), "values");
  s.validate();
  return s;
}

void write_params(const NamedTensors& params, const std::string& path) {
  Writer w(path);
  w.bytes(kParamMagic, 4);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(params.size()));
  // Manifest size must be known to place data offsets.
  std::uint64_t offset = 4 + 4 + 4;
  for (const auto& [name, tensor] : params) {
    offset += 4 + name.size() + 4 + 4 * static_cast<std::uint64_t>(tensor.ndim()) + 8;
  }
  for (const auto& [name, tensor] : params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(tensor.ndim()));
    for (int i = 0; i < tensor.ndim(); ++i) w.u32(static_cast<std::uint32_t>(tensor.dim(i)));
    w.u64(offset);
    offset += 4 * static_cast<std::uint64_t>(tensor.numel());
  }
  for (const auto& [name, tensor] : params) w.f32_block(tensor.data());
  w.close("parameter container");
}

NamedTensors read_params(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kParamMagic, 4) != 0) {
    throw ParseError(path + ": bad magic, not a GHRP parameter file", 0);
  }
  const std::uint32_t version = r.u32("version");
  if (version != 1) throw ParseError(path + ": unsupported parameter version", 4);
  const std::uint32_t count = r.u32("tensor count");
  if (count > (1u << 20)) throw ParseError(path + ": implausible tensor count", 8);
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> manifest;
  manifest.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.str("tensor name");
    const std::uint32_t ndim = r.u32("tensor rank");
    if (ndim > 8) throw ParseError(path + ": implausible tensor rank", r.offset() - 4);
    for (std::uint32_t d = 0; d < ndim; ++d) e.shape.push_back(static_cast<Index>(r.u32("tensor dim")));
    e.offset = r.u64("tensor offset");
    manifest.push_back(std::move(e));
  }
  NamedTensors out;
  out.reserve(count);
  for (const Entry& e : manifest) {
    r.seek(e.offset);
    Tensor t = Tensor::zeros(e.shape);
    r.f32_block(t.raw_data(), e.name.c_str());
    out.emplace_back(e.name, std::move(t));
  }
  return out;
}

const Tensor& find_param(const NamedTensors& params, const std::string& name) {
  for (const auto& [n, t] : params) {
    if (n == name) return t;
  }
  throw MissingPrerequisite("parameter '" + name + "' not found in checkpoint");
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  for (const ManifestEntry& e : entries) {
    out << format_iso8601(e.valid_time) << '\t' << e.path << '\n';
  }
  if (!out) throw ConfigError("write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path, const std::string& split) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisite("manifest not found: " + path);
  DatasetManifest m;
  m.split = split;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'time<TAB>path'");
    }
    ManifestEntry e;
    e.valid_time = parse_iso8601(line.substr(0, tab));
    e.path = line.substr(tab + 1);
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw ConfigError("manifest is empty: " + path);
  m.validate();
  const WeatherState first = read_state(m.entries.front().path);
  m.grid = first.grid;
  m.vars = first.vars;
  return m;
}

WeatherState load_manifest_state(const DatasetManifest& manifest, std::size_t index) {
  if (index >= manifest.entries.size()) {
    throw ShapeError("manifest index out of range");
  }
  WeatherState s = read_state(manifest.entries[index].path);
  if (!s.grid.same_as(manifest.grid)) {
    throw ShapeError("state " + manifest.entries[index].path + " grid differs from manifest '" +
                     manifest.split + "'");
  }
  if (!s.vars.same_as(manifest.vars)) {
    throw ShapeError("state " + manifest.entries[index].path + " variables differ from manifest '" +
                     manifest.split + "'");
  }
  if (s.valid_time != manifest.entries[index].valid_time) {
    throw ShapeError("state " + manifest.entries[index].path + " valid_time differs from manifest");
  }
  return s;
}

void write_stats(const ChannelStats& stats, const std::string& path) {
  stats.validate();
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  char buf[128];
  for (std::size_t i = 0; i < stats.mean.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%s\t%.17g\t%.17g\n", stats.vars.channels[i].name.c_str(),
                  stats.mean[i], stats.stddev[i]);
    out << buf;
  }
  if (!out) throw ConfigError("write failed: " + path);
}

ChannelStats read_stats(const std::string& path, const VariableSet& vars) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisite("normalization stats not found: " + path);
  ChannelStats stats;
  stats.vars = vars;
  stats.mean.assign(static_cast<std::size_t>(vars.count()), 0.0);
  stats.stddev.assign(static_cast<std::size_t>(vars.count()), 0.0);
  std::vector<bool> seen(static_cast<std::size_t>(vars.count()), false);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string name;
    double mean = 0.0, sd = 0.0;
    if (!(ss >> name >> mean >> sd)) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'name mean stddev'");
    }
    const int idx = vars.find(name);
    if (idx < 0) throw ConfigError(path + ": unknown channel '" + name + "'");
    stats.mean[static_cast<std::size_t>(idx)] = mean;
    stats.stddev[static_cast<std::size_t>(idx)] = sd;
    seen[static_cast<std::size_t>(idx)] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw ConfigError(path + ": missing stats for channel " + vars.channels[i].name);
  }
  stats.validate();
  return stats;
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::exists(path, ec);
}

}  // namespace ghr
