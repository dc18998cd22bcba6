#include "ghr/synthetic.hpp"

#include <cmath>

#include "ghr/errors.hpp"
#include "ghr/rng.hpp"

namespace ghr {

namespace {
constexpr double kTwoPi = 6.283185307179586477;
constexpr int kNumLarge = 6;
constexpr int kNumSmall = 8;
}  // namespace

SyntheticSystem SyntheticSystem::create(std::uint64_t seed, const VariableSet& vars,
                                        const GridSpec& grid_hr, int k) {
  vars.validate();
  grid_hr.validate();
  if (k <= 0 || k % 2 == 0) {
    throw ShapeError("SyntheticSystem: subsample factor must be odd, got " + std::to_string(k));
  }
  if (grid_hr.n_lat % k != 0 || grid_hr.n_lon % k != 0) {
    throw ShapeError("SyntheticSystem: grid not divisible by subsample factor");
  }

  SyntheticSystem s;
  s.grid_hr_ = grid_hr;
  s.vars_ = vars;
  s.k_ = k;

  Rng rng(seed, /*stream=*/0xA7);
  s.flow_u_ = rng.uniform(0.004, 0.010);
  s.flow_v_ = rng.uniform(0.001, 0.004);

  for (int m = 0; m < kNumLarge; ++m) {
    Mode mode;
    mode.p = 1.0 + rng.below(3);  // 1..3 cycles, far below any Nyquist
    mode.q = static_cast<double>(rng.below(3));
    mode.amp = rng.uniform(0.5, 1.0);
    mode.phase = rng.uniform(0.0, kTwoPi);
    mode.extra_speed = rng.uniform(-0.02, 0.02);
    s.large_.push_back(mode);
  }

  // Small-scale content is a slow, broad field multiplied by the carrier
  // sin(2*pi*(W/k)*u), which is zero at every k-stride center column. The
  // LR subsample therefore carries none of it (no aliases either), while
  // in HR it lives at longitude wavenumbers W/k +- (a few) -- all above
  // the LR Nyquist W/(2k). Modulation wavenumbers stay small enough that
  // the sidebands cannot fold below the Nyquist.
  for (int m = 0; m < kNumSmall; ++m) {
    Mode mode;
    mode.p = 1.0 + rng.below(4);  // modulation, carrier supplies the rest
    mode.q = static_cast<double>(rng.below(5));
    mode.amp = rng.uniform(0.15, 0.30);
    mode.phase = rng.uniform(0.0, kTwoPi);
    mode.extra_speed = rng.uniform(0.25, 0.70);
    s.small_.push_back(mode);
  }

  const int C = vars.count();
  s.channel_phase_large_.resize(static_cast<std::size_t>(C));
  s.channel_amp_large_.resize(static_cast<std::size_t>(C));
  s.channel_phase_small_.resize(static_cast<std::size_t>(C));
  double norm = 0.0;
  for (int c = 0; c < C; ++c) {
    for (int m = 0; m < kNumLarge; ++m) {
      s.channel_phase_large_[static_cast<std::size_t>(c)].push_back(rng.uniform(0.0, kTwoPi));
      s.channel_amp_large_[static_cast<std::size_t>(c)].push_back(rng.uniform(0.7, 1.3));
    }
    for (int m = 0; m < kNumSmall; ++m) {
      s.channel_phase_small_[static_cast<std::size_t>(c)].push_back(rng.uniform(0.0, kTwoPi));
    }
  }
  for (const Mode& m : s.large_) norm += m.amp * 1.3;
  s.large_norm_ = norm;

  for (int c = 0; c < C; ++c) {
    const ChannelDesc& d = vars.channels[static_cast<std::size_t>(c)];
    const bool wind = d.name == "u10" || d.name == "v10" ||
                      (d.kind == VarKind::Pressure && (d.name[0] == 'u' || d.name[0] == 'v'));
    if (wind) {
      s.offset_.push_back(rng.uniform(-3.0, 3.0));
      s.scale_.push_back(rng.uniform(4.0, 7.0));
    } else {
      s.offset_.push_back(rng.uniform(250.0, 290.0));
      s.scale_.push_back(rng.uniform(6.0, 14.0));
    }
  }
  return s;
}

WeatherState SyntheticSystem::state_at(std::int64_t valid_time) const {
  if (valid_time % kStepSeconds != 0) {
    throw ShapeError("SyntheticSystem: time not on a 6-hour boundary");
  }
  const double t = static_cast<double>(valid_time - kSyntheticEpoch) / static_cast<double>(kStepSeconds);
  const int C = vars_.count();
  const Index H = grid_hr_.n_lat, W = grid_hr_.n_lon;

  WeatherState state;
  state.grid = grid_hr_;
  state.vars = vars_;
  state.valid_time = valid_time;
  state.values = Tensor::zeros({C, H, W});
  float* out = state.values.raw_data().data();

#pragma omp parallel for schedule(static)
  for (Index ci = 0; ci < static_cast<Index>(C) * H; ++ci) {
    const Index c = ci / H;
    const Index i = ci % H;
    const double v = (static_cast<double>(i) + 0.5) / static_cast<double>(H);
    const auto cs = static_cast<std::size_t>(c);
    float* row = out + ci * W;
    for (Index j = 0; j < W; ++j) {
      const double u = (static_cast<double>(j) + 0.5) / static_cast<double>(W);
      const double ua = u - flow_u_ * t;
      const double va = v - flow_v_ * t;

      double large = 0.0;
      for (std::size_t m = 0; m < large_.size(); ++m) {
        const Mode& mo = large_[m];
        large += mo.amp * channel_amp_large_[cs][m] *
                 std::sin(kTwoPi * (mo.p * ua + mo.q * va) + mo.phase + mo.extra_speed * t +
                          channel_phase_large_[cs][m]);
      }
      const double lam = large / large_norm_;  // bounded, ~[-1, 1]

      double small = 0.0;
      for (std::size_t m = 0; m < small_.size(); ++m) {
        const Mode& mo = small_[m];
        small += mo.amp * (1.0 + amp_coupling_ * lam) *
                 std::sin(kTwoPi * (mo.p * ua + mo.q * va) + mo.phase + mo.extra_speed * t +
                          channel_phase_small_[cs][m] + phase_coupling_ * lam);
      }
      const double carrier = std::sin(kTwoPi * (static_cast<double>(grid_hr_.n_lon) / k_) * u);

      row[j] = static_cast<float>(offset_[cs] + scale_[cs] * (large + carrier * small));
    }
  }
  return state;
}

SyntheticTrajectory generate_synthetic(const SyntheticConfig& config) {
  if (config.n_steps <= 0) throw ShapeError("generate_synthetic: n_steps must be positive");
  const SyntheticSystem system =
      SyntheticSystem::create(config.seed, config.vars, config.grid_hr, config.k);
  SyntheticTrajectory traj;
  traj.hr.reserve(static_cast<std::size_t>(config.n_steps));
  traj.lr.reserve(static_cast<std::size_t>(config.n_steps));
  for (int s = 0; s < config.n_steps; ++s) {
    WeatherState hr = system.state_at(config.start_time + s * kStepSeconds);
    traj.lr.push_back(subsample_centers(hr, config.k));
    traj.hr.push_back(std::move(hr));
  }
  return traj;
}

}  // namespace ghr
