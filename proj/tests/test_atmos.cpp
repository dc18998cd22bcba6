#include "doctest.h"

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "ghr/climatology.hpp"
#include "ghr/errors.hpp"
#include "ghr/grid.hpp"
#include "ghr/io.hpp"
#include "ghr/normalize.hpp"
#include "ghr/stations.hpp"
#include "ghr/synthetic.hpp"
#include "ghr/timeutil.hpp"

using namespace ghr;
namespace fs = std::filesystem;

namespace {

fs::path test_dir(const std::string& name) {
  fs::path p = fs::path("tmp_test") / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (Index i = 0; i < a.numel(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

WeatherState make_state(const GridSpec& grid, const VariableSet& vars, std::int64_t time,
                        float fill) {
  WeatherState s;
  s.grid = grid;
  s.vars = vars;
  s.values = Tensor::full({vars.count(), grid.n_lat, grid.n_lon}, fill);
  s.valid_time = time;
  return s;
}

// Separable 2-D DFT magnitude-squared spectrum, float64.
std::vector<std::vector<double>> dft_power(const Tensor& field, Index c) {
  const Index H = field.dim(1), W = field.dim(2);
  const float* p = field.data().data() + c * H * W;
  std::vector<std::vector<std::complex<double>>> rows(
      static_cast<std::size_t>(H), std::vector<std::complex<double>>(static_cast<std::size_t>(W)));
  for (Index i = 0; i < H; ++i) {
    for (Index kx = 0; kx < W; ++kx) {
      std::complex<double> acc = 0.0;
      for (Index j = 0; j < W; ++j) {
        const double ang = -2.0 * M_PI * static_cast<double>(kx * j) / static_cast<double>(W);
        acc += static_cast<double>(p[i * W + j]) * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(kx)] = acc;
    }
  }
  std::vector<std::vector<double>> power(static_cast<std::size_t>(H),
                                         std::vector<double>(static_cast<std::size_t>(W)));
  for (Index ky = 0; ky < H; ++ky) {
    for (Index kx = 0; kx < W; ++kx) {
      std::complex<double> acc = 0.0;
      for (Index i = 0; i < H; ++i) {
        const double ang = -2.0 * M_PI * static_cast<double>(ky * i) / static_cast<double>(H);
        acc += rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(kx)] *
               std::complex<double>(std::cos(ang), std::sin(ang));
      }
      power[static_cast<std::size_t>(ky)][static_cast<std::size_t>(kx)] = std::norm(acc);
    }
  }
  return power;
}

}  // namespace

TEST_CASE("calendar helpers") {
  CHECK(format_iso8601(parse_iso8601("2022-12-23T12:00:00Z")) == "2022-12-23T12:00:00Z");
  CHECK(day_of_year_366(1, 1) == 1);
  CHECK(day_of_year_366(2, 29) == 60);
  CHECK(day_of_year_366(3, 1) == 61);
  CHECK(day_of_year_366(12, 31) == 366);
  CHECK(is_leap_year(2020));
  CHECK(!is_leap_year(2100));
  CHECK(parse_iso8601("2020-01-01T00:00:00Z") == kSyntheticEpoch);
  CHECK_THROWS_AS(parse_iso8601("2022-13-01T00:00:00Z"), ConfigError);
}

TEST_CASE("regular grid and center coarsening") {
  GridSpec hr = GridSpec::regular(48, 96);
  hr.validate();
  CHECK(hr.spacing_deg == doctest::Approx(3.75));
  CHECK(hr.lat_deg.front() == doctest::Approx(90.0 - 3.75 / 2));
  CHECK(hr.lat_deg.back() == doctest::Approx(-90.0 + 3.75 / 2));
  CHECK(hr.lon_deg.front() == doctest::Approx(3.75 / 2));

  GridSpec lr = hr.coarsen(3);
  lr.validate();
  CHECK(lr.n_lat == 16);
  // Coarse centers coincide with the k-stride center subsample of HR.
  for (int i = 0; i < lr.n_lat; ++i) {
    CHECK(lr.lat_deg[static_cast<std::size_t>(i)] ==
          doctest::Approx(hr.lat_deg[static_cast<std::size_t>(3 * i + 1)]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(hr.coarsen(2), ShapeError);
  CHECK_THROWS_AS(hr.coarsen(5), ShapeError);  // 48 not divisible
}

TEST_CASE("variable sets") {
  VariableSet toy = VariableSet::toy();
  toy.validate();
  CHECK(toy.count() == 8);
  CHECK(toy.find("t2m") == 5);
  CHECK(toy.find("nope") == -1);

  VariableSet canon = VariableSet::canonical();
  canon.validate();
  CHECK(canon.count() == 69);
}

TEST_CASE("state file round-trip is bitwise") {
  const fs::path dir = test_dir("state_roundtrip");
  GridSpec grid = GridSpec::regular(8, 16);
  VariableSet vars = VariableSet::toy();
  Rng rng(99);
  WeatherState s = make_state(grid, vars, kSyntheticEpoch, 0.0f);
  s.values = Tensor::gaussian({vars.count(), 8, 16}, rng, 5.0);

  const std::string path = (dir / "s.ghr").string();
  write_state(s, path);
  WeatherState r = read_state(path);
  CHECK(bitwise_equal(r.values, s.values));
  CHECK(r.valid_time == s.valid_time);
  CHECK(r.grid.same_as(s.grid));
  CHECK(r.vars.same_as(s.vars));
}

TEST_CASE("state header matches a hand-assembled golden file") {
  const fs::path dir = test_dir("state_golden");
  GridSpec grid = GridSpec::regular(4, 8);
  VariableSet vars;
  vars.channels.push_back({"t850", VarKind::Pressure, 850.0f});
  vars.channels.push_back({"t2m", VarKind::Surface, 0.0f});
  WeatherState s = make_state(grid, vars, 1671796800 /* 2022-12-23T12Z */, 1.5f);
  const std::string path = (dir / "golden.ghr").string();
  write_state(s, path);

  // Hand-assembled expected bytes, little-endian.
  std::vector<std::uint8_t> want;
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) want.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto u64 = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) want.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto f32 = [&](float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u32(u);
  };
  want.insert(want.end(), {'G', 'H', 'R', '1'});
  u32(1);                               // version
  u32(2); u32(4); u32(8);               // C, H, W
  u64(1671796800ull);                   // valid_time
  double spacing = 45.0;
  std::uint64_t sp;
  std::memcpy(&sp, &spacing, 8);
  u64(sp);
  u32(4); want.insert(want.end(), {'t', '8', '5', '0'}); want.push_back(0); f32(850.0f);
  u32(3); want.insert(want.end(), {'t', '2', 'm'});      want.push_back(1); f32(0.0f);
  const std::size_t header_size = want.size();
  CHECK(header_size == 4 + 4 + 12 + 8 + 8 + (4 + 4 + 1 + 4) + (4 + 3 + 1 + 4));
  for (int i = 0; i < 2 * 4 * 8; ++i) f32(1.5f);

  std::ifstream in(path, std::ios::binary);
  std::vector<std::uint8_t> got((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  CHECK(got == want);

  // Truncation inside the value block reports the offset where the read
  // stopped being satisfiable (the block start).
  std::ofstream trunc((dir / "trunc.ghr").string(), std::ios::binary);
  trunc.write(reinterpret_cast<const char*>(want.data()), 100);
  trunc.close();
  try {
    read_state((dir / "trunc.ghr").string());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == header_size);
  }

  // Bad magic.
  std::ofstream bad((dir / "bad.ghr").string(), std::ios::binary);
  bad.write("NOPE", 4);
  bad.close();
  CHECK_THROWS_AS(read_state((dir / "bad.ghr").string()), ParseError);
}

TEST_CASE("parameter container round-trip") {
  const fs::path dir = test_dir("params");
  Rng rng(5);
  NamedTensors params;
  params.emplace_back("blocks.0.attn.wq", Tensor::gaussian({8, 8}, rng, 1.0));
  params.emplace_back("embed.bias", Tensor::gaussian({8}, rng, 1.0));
  params.emplace_back("lora/3/blocks.1.attn.wv/A", Tensor::gaussian({8, 2}, rng, 1.0));
  const std::string path = (dir / "p.ghrp").string();
  write_params(params, path);
  NamedTensors r = read_params(path);
  REQUIRE(r.size() == params.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    CHECK(r[i].first == params[i].first);
    CHECK(bitwise_equal(r[i].second, params[i].second));
  }
  CHECK(find_param(r, "embed.bias").numel() == 8);
  CHECK_THROWS_AS(find_param(r, "missing"), MissingPrerequisite);
}

TEST_CASE("manifest round-trip and trajectory segmentation") {
  const fs::path dir = test_dir("manifest");
  GridSpec grid = GridSpec::regular(4, 8);
  VariableSet vars = VariableSet::toy();
  std::vector<ManifestEntry> entries;
  // Two trajectories: 3 contiguous steps, a 12-hour gap, 2 more steps.
  const std::int64_t t0 = kSyntheticEpoch;
  const std::int64_t times[5] = {t0, t0 + kStepSeconds, t0 + 2 * kStepSeconds,
                                 t0 + 4 * kStepSeconds, t0 + 5 * kStepSeconds};
  for (int i = 0; i < 5; ++i) {
    const std::string p = (dir / ("s" + std::to_string(i) + ".ghr")).string();
    write_state(make_state(grid, vars, times[i], static_cast<float>(i)), p);
    entries.push_back({times[i], p});
  }
  const std::string mpath = (dir / "split.txt").string();
  write_manifest(entries, mpath);
  DatasetManifest m = load_manifest(mpath, "train");
  REQUIRE(m.entries.size() == 5);
  CHECK(m.grid.same_as(grid));
  auto traj = m.trajectories();
  REQUIRE(traj.size() == 2);
  CHECK(traj[0] == std::pair<std::size_t, std::size_t>{0, 3});
  CHECK(traj[1] == std::pair<std::size_t, std::size_t>{3, 5});

  WeatherState s3 = load_manifest_state(m, 3);
  CHECK(s3.values.data()[0] == 3.0f);

  // Non-increasing timestamps are rejected.
  std::swap(entries[0], entries[1]);
  write_manifest(entries, mpath);
  CHECK_THROWS_AS(load_manifest(mpath, "train"), ShapeError);
}

TEST_CASE("climatology from a single year reproduces that year") {
  const fs::path dir = test_dir("clim_single");
  GridSpec grid = GridSpec::regular(4, 8);
  VariableSet vars;
  vars.channels.push_back({"t2m", VarKind::Surface, 0.0f});
  std::vector<ManifestEntry> entries;
  // Daily states through leap year 2020 (366 days).
  std::int64_t t = kSyntheticEpoch;
  for (int d = 0; d < 366; ++d) {
    const std::string p = (dir / ("d" + std::to_string(d) + ".ghr")).string();
    write_state(make_state(grid, vars, t, static_cast<float>(d) * 0.25f), p);
    entries.push_back({t, p});
    t += 4 * kStepSeconds;  // one state per day
  }
  write_manifest(entries, (dir / "m.txt").string());
  DatasetManifest m = load_manifest((dir / "m.txt").string(), "clim");
  Climatology clim = build_climatology(m);
  for (int d = 0; d < 366; ++d) {
    CHECK(clim.by_doy[static_cast<std::size_t>(d)].data()[0] == static_cast<float>(d) * 0.25f);
  }
  // Round-trip through the on-disk form.
  write_climatology(clim, (dir / "clim.ghrp").string());
  Climatology r = read_climatology((dir / "clim.ghrp").string());
  for (int d = 0; d < 366; ++d) {
    CHECK(bitwise_equal(r.by_doy[static_cast<std::size_t>(d)], clim.by_doy[static_cast<std::size_t>(d)]));
  }
  CHECK(r.vars.same_as(clim.vars));
}

TEST_CASE("climatology of opposite years is zero and mean matches brute force") {
  const fs::path dir = test_dir("clim_multi");
  GridSpec grid = GridSpec::regular(4, 8);
  VariableSet vars;
  vars.channels.push_back({"t2m", VarKind::Surface, 0.0f});
  Rng rng(31);

  // Three non-leap years of daily data with per-day random fields.
  std::vector<ManifestEntry> entries;
  std::vector<std::vector<float>> per_year_day_value;
  const int years[3] = {2021, 2022, 2023};
  std::vector<Tensor> fields;
  for (int y : years) {
    std::int64_t t = from_civil({y, 1, 1, 0, 0, 0});
    for (int d = 0; d < 365; ++d) {
      WeatherState s = make_state(grid, vars, t, 0.0f);
      s.values = Tensor::gaussian({1, 4, 8}, rng, 2.0);
      const std::string p =
          (dir / ("y" + std::to_string(y) + "_d" + std::to_string(d) + ".ghr")).string();
      write_state(s, p);
      entries.push_back({t, p});
      fields.push_back(s.values);
      t += 4 * kStepSeconds;
    }
  }
  write_manifest(entries, (dir / "m.txt").string());
  DatasetManifest m = load_manifest((dir / "m.txt").string(), "clim");
  Climatology clim = build_climatology(m);

  // Brute-force oracle: group by (month, day) directly, average in float64.
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const CivilTime c = to_civil(entries[i].valid_time);
    const int doy = day_of_year_366(c.month, c.day);
    (void)doy;
  }
  for (int d = 1; d <= 366; ++d) {
    if (d == 60) continue;
    std::vector<double> acc(4 * 8, 0.0);
    int count = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const CivilTime c = to_civil(entries[i].valid_time);
      if (day_of_year_366(c.month, c.day) != d) continue;
      for (Index e = 0; e < 32; ++e) acc[static_cast<std::size_t>(e)] += fields[i].data()[e];
      ++count;
    }
    REQUIRE(count == 3);
    for (Index e = 0; e < 32; ++e) {
      CHECK(clim.by_doy[static_cast<std::size_t>(d - 1)].data()[e] ==
            static_cast<float>(acc[static_cast<std::size_t>(e)] / count));
    }
  }

  // Feb 29 was filled from neighbors.
  for (Index e = 0; e < 32; ++e) {
    const double want = 0.5 * (static_cast<double>(clim.by_doy[58].data()[e]) +
                               static_cast<double>(clim.by_doy[60].data()[e]));
    CHECK(clim.by_doy[59].data()[e] == static_cast<float>(want));
  }

  // Opposite fields average to zero: rebuild with v and -v for one date.
  const fs::path dir2 = test_dir("clim_opposite");
  std::vector<ManifestEntry> e2;
  Tensor v = Tensor::gaussian({1, 4, 8}, rng, 3.0);
  Tensor neg = scale(v, -1.0);
  for (int d = 0; d < 366; ++d) {
    std::int64_t ta = kSyntheticEpoch + static_cast<std::int64_t>(d) * 4 * kStepSeconds;
    WeatherState sa = make_state(grid, vars, ta, 0.0f);
    sa.values = v;
    const std::string pa = (dir2 / ("a" + std::to_string(d) + ".ghr")).string();
    write_state(sa, pa);
    e2.push_back({ta, pa});
  }
  for (int d = 0; d < 365; ++d) {
    std::int64_t tb = from_civil({2021, 1, 1, 0, 0, 0}) + static_cast<std::int64_t>(d) * 4 * kStepSeconds;
    WeatherState sb = make_state(grid, vars, tb, 0.0f);
    sb.values = neg;
    const std::string pb = (dir2 / ("b" + std::to_string(d) + ".ghr")).string();
    write_state(sb, pb);
    e2.push_back({tb, pb});
  }
  write_manifest(e2, (dir2 / "m.txt").string());
  Climatology zero = build_climatology(load_manifest((dir2 / "m.txt").string(), "clim"));
  // Every non-leap day saw v and -v.
  for (Index e = 0; e < 32; ++e) CHECK(zero.by_doy[0].data()[e] == 0.0f);
}

TEST_CASE("climatology of a climatology is itself") {
  const fs::path dir = test_dir("clim_fixpoint");
  GridSpec grid = GridSpec::regular(4, 8);
  VariableSet vars;
  vars.channels.push_back({"x", VarKind::Surface, 0.0f});
  Rng rng(77);
  std::vector<ManifestEntry> entries;
  std::int64_t t = kSyntheticEpoch;  // leap year covers all 366 days
  std::vector<Tensor> day_fields;
  for (int d = 0; d < 366; ++d) {
    WeatherState s = make_state(grid, vars, t, 0.0f);
    s.values = Tensor::gaussian({1, 4, 8}, rng, 1.0);
    day_fields.push_back(s.values);
    const std::string p = (dir / ("d" + std::to_string(d) + ".ghr")).string();
    write_state(s, p);
    entries.push_back({t, p});
    t += 4 * kStepSeconds;
  }
  write_manifest(entries, (dir / "m.txt").string());
  Climatology c1 = build_climatology(load_manifest((dir / "m.txt").string(), "clim"));

  // Feed c1's fields back as one year of data.
  const fs::path dir2 = test_dir("clim_fixpoint2");
  std::vector<ManifestEntry> e2;
  t = kSyntheticEpoch;
  for (int d = 0; d < 366; ++d) {
    WeatherState s = make_state(grid, vars, t, 0.0f);
    s.values = c1.by_doy[static_cast<std::size_t>(d)];
    const std::string p = (dir2 / ("d" + std::to_string(d) + ".ghr")).string();
    write_state(s, p);
    e2.push_back({t, p});
    t += 4 * kStepSeconds;
  }
  write_manifest(e2, (dir2 / "m.txt").string());
  Climatology c2 = build_climatology(load_manifest((dir2 / "m.txt").string(), "clim"));
  for (int d = 0; d < 366; ++d) {
    CHECK(bitwise_equal(c2.by_doy[static_cast<std::size_t>(d)], c1.by_doy[static_cast<std::size_t>(d)]));
  }
}

TEST_CASE("normalization stats, round-trip, and degenerate channels") {
  const fs::path dir = test_dir("norm");
  GridSpec grid = GridSpec::regular(8, 16);
  VariableSet vars = VariableSet::toy();
  SyntheticConfig cfg;
  cfg.seed = 1234;
  cfg.grid_hr = grid;
  cfg.k = 1;
  cfg.n_steps = 12;
  cfg.vars = vars;
  SyntheticTrajectory traj = generate_synthetic(cfg);

  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < traj.lr.size(); ++i) {
    const std::string p = (dir / ("s" + std::to_string(i) + ".ghr")).string();
    write_state(traj.lr[i], p);
    entries.push_back({traj.lr[i].valid_time, p});
  }
  write_manifest(entries, (dir / "m.txt").string());
  DatasetManifest m = load_manifest((dir / "m.txt").string(), "train-lr");
  ChannelStats stats = compute_stats(m);

  // Brute-force two-pass oracle in float64.
  const Index HW = 8 * 16;
  for (int c = 0; c < vars.count(); ++c) {
    double s1 = 0.0;
    for (const WeatherState& st : traj.lr) {
      for (Index e = 0; e < HW; ++e) s1 += static_cast<double>(st.values.data()[c * HW + e]);
    }
    const double mean = s1 / (HW * static_cast<double>(traj.lr.size()));
    double s2 = 0.0;
    for (const WeatherState& st : traj.lr) {
      for (Index e = 0; e < HW; ++e) {
        const double d = static_cast<double>(st.values.data()[c * HW + e]) - mean;
        s2 += d * d;
      }
    }
    const double sd = std::sqrt(s2 / (HW * static_cast<double>(traj.lr.size())));
    CHECK(std::fabs(stats.mean[static_cast<std::size_t>(c)] - mean) < 1e-10);
    CHECK(std::fabs(stats.stddev[static_cast<std::size_t>(c)] - sd) < 1e-10);
  }

  // Stats file round-trip keeps full precision.
  write_stats(stats, (dir / "stats.tsv").string());
  ChannelStats rs = read_stats((dir / "stats.tsv").string(), vars);
  for (int c = 0; c < vars.count(); ++c) {
    CHECK(rs.mean[static_cast<std::size_t>(c)] == stats.mean[static_cast<std::size_t>(c)]);
    CHECK(rs.stddev[static_cast<std::size_t>(c)] == stats.stddev[static_cast<std::size_t>(c)]);
  }

  auto shared = std::make_shared<ChannelStats>(stats);
  WeatherState n = normalize(traj.lr[3], shared);
  WeatherState back = denormalize(n);
  for (Index i = 0; i < back.values.numel(); ++i) {
    CHECK(std::fabs(back.values.data()[i] - traj.lr[3].values.data()[i]) < 1e-4f);
  }

  // Constant channel with matching mean maps to zeros.
  WeatherState konst = make_state(grid, vars, kSyntheticEpoch, 0.0f);
  auto cstats = std::make_shared<ChannelStats>();
  cstats->vars = vars;
  cstats->mean.assign(static_cast<std::size_t>(vars.count()), 0.0);
  cstats->stddev.assign(static_cast<std::size_t>(vars.count()), 1.0);
  WeatherState zn = normalize(konst, cstats);
  for (Index i = 0; i < zn.values.numel(); ++i) CHECK(zn.values.data()[i] == 0.0f);

  // Degenerate stddev is an error.
  auto degenerate = std::make_shared<ChannelStats>(*cstats);
  degenerate->stddev[0] = 1e-14;
  CHECK_THROWS_AS(normalize(konst, degenerate), NumericalError);
}

TEST_CASE("station CSV ingestion") {
  const fs::path dir = test_dir("stations");
  const std::string path = (dir / "st.csv").string();
  {
    std::ofstream out(path);
    out << "station_id,lat,lon,time_iso8601,variable,value\n";
    out << "S1,40.7,286.0,2022-12-23T12:00:00Z,t2m,250.1\n";
    out << "S2,95.0,10.0,2022-12-23T12:00:00Z,t2m,250.1\n";   // lat out of range
    out << "S3,-10.0,-20.0,2022-12-23T12:00:00Z,t2m,260.0\n"; // lon normalized
    out << "S4,0.0,0.0,2022-12-23T12:00:00Z,t2m,nan\n";       // non-finite
  }
  StationIngest got = ingest_stations(path);
  REQUIRE(got.records.size() == 2);
  CHECK(got.dropped == 2);
  CHECK(got.records[0].station_id == "S1");
  CHECK(got.records[0].value == doctest::Approx(250.1));
  CHECK(got.records[1].lon_deg == doctest::Approx(340.0));
  CHECK_THROWS_AS(ingest_stations(path, /*strict=*/true), ConfigError);

  // 100 generated rows with 3 corrupted ones.
  const std::string big = (dir / "big.csv").string();
  {
    std::ofstream out(big);
    out << "station_id,lat,lon,time_iso8601,variable,value\n";
    for (int i = 0; i < 100; ++i) {
      if (i == 10 || i == 50 || i == 90) {
        out << "B" << i << ",200.0,0.0,2022-01-01T00:00:00Z,t2m,1.0\n";
      } else {
        out << "B" << i << "," << (i % 170 - 85) << ",12.5,2022-01-01T00:00:00Z,t2m,"
            << 200.0 + i << "\n";
      }
    }
  }
  StationIngest many = ingest_stations(big);
  CHECK(many.records.size() == 97);
  CHECK(many.dropped == 3);

  // Write/read round trip.
  const std::string rt = (dir / "rt.csv").string();
  write_stations_csv(many.records, rt);
  StationIngest again = ingest_stations(rt);
  CHECK(again.records.size() == 97);
  CHECK(again.dropped == 0);
}

TEST_CASE("synthetic generator determinism and k=1 identity") {
  GridSpec grid = GridSpec::regular(12, 24);
  SyntheticConfig cfg;
  cfg.seed = 42;
  cfg.grid_hr = grid;
  cfg.k = 1;
  cfg.n_steps = 4;
  cfg.vars = VariableSet::toy();

  SyntheticTrajectory a = generate_synthetic(cfg);
  SyntheticTrajectory b = generate_synthetic(cfg);
  REQUIRE(a.hr.size() == 4);
  for (std::size_t i = 0; i < a.hr.size(); ++i) {
    CHECK(bitwise_equal(a.hr[i].values, b.hr[i].values));
    // k=1: the LR trajectory is the HR trajectory.
    CHECK(bitwise_equal(a.lr[i].values, a.hr[i].values));
  }

  SyntheticConfig c2 = cfg;
  c2.seed = 43;
  SyntheticTrajectory c = generate_synthetic(c2);
  CHECK(!bitwise_equal(c.hr[0].values, a.hr[0].values));

  SyntheticConfig even = cfg;
  even.k = 2;
  CHECK_THROWS_AS(generate_synthetic(even), ShapeError);
}

TEST_CASE("HR minus upsampled-LR energy sits above the LR Nyquist") {
  GridSpec grid = GridSpec::regular(48, 96);
  SyntheticConfig cfg;
  cfg.seed = 7;
  cfg.grid_hr = grid;
  cfg.k = 3;
  cfg.n_steps = 1;
  cfg.vars = VariableSet::toy();
  SyntheticTrajectory traj = generate_synthetic(cfg);

  Tensor up = upsample_nearest(traj.lr[0].values, 3);
  Tensor diff = sub(traj.hr[0].values, up);

  auto power = dft_power(diff, 0);
  const int H = 48, W = 96;
  const int nyq_lat = H / 3 / 2, nyq_lon = W / 3 / 2;
  double total = 0.0, high = 0.0;
  for (int ky = 0; ky < H; ++ky) {
    for (int kx = 0; kx < W; ++kx) {
      const int fy = std::min(ky, H - ky);
      const int fx = std::min(kx, W - kx);
      total += power[static_cast<std::size_t>(ky)][static_cast<std::size_t>(kx)];
      if (fy > nyq_lat || fx > nyq_lon) {
        high += power[static_cast<std::size_t>(ky)][static_cast<std::size_t>(kx)];
      }
    }
  }
  REQUIRE(total > 0.0);
  CHECK(high / total > 0.9);
}

TEST_CASE("subsample-upsample-subsample is idempotent") {
  GridSpec grid = GridSpec::regular(12, 24);
  SyntheticConfig cfg;
  cfg.seed = 3;
  cfg.grid_hr = grid;
  cfg.k = 3;
  cfg.n_steps = 1;
  cfg.vars = VariableSet::toy();
  SyntheticTrajectory traj = generate_synthetic(cfg);

  WeatherState sub1 = subsample_centers(traj.hr[0], 3);
  WeatherState up = traj.hr[0];
  up.values = upsample_nearest(sub1.values, 3);
  WeatherState sub2 = subsample_centers(up, 3);
  CHECK(bitwise_equal(sub1.values, sub2.values));
}
