#pragma once

#include <cstdint>
#include <vector>

#include "ghr/grid.hpp"

namespace ghr {

// All synthetic fields are pure functions of absolute time measured in
// 6-hour steps from this epoch, so train and eval windows drawn from the
// same seed describe one continuous dynamical system.
// 2020-01-01T00:00:00Z.
constexpr std::int64_t kSyntheticEpoch = 1577836800;

// Deterministic multiscale "atmosphere": slowly advecting large-wavelength
// modes plus a small-scale term built as slow modulation times the carrier
// sin(2*pi*(W/k)*u). The carrier is zero at every k-stride center column,
// so the LR subsample holds none of the small-scale signal while in HR it
// occupies wavenumbers strictly above the LR Nyquist. Small-scale
// amplitude and phase ride on the large-scale field; channels share one
// advecting flow, with per-channel phases and affine ranges.
class SyntheticSystem {
 public:
  // Mode tables are drawn once from `seed`; evaluation afterwards is pure.
  static SyntheticSystem create(std::uint64_t seed, const VariableSet& vars,
                                const GridSpec& grid_hr, int k);

  // HR state at an absolute 6-hour-aligned time.
  WeatherState state_at(std::int64_t valid_time) const;

  const GridSpec& grid_hr() const { return grid_hr_; }
  const VariableSet& vars() const { return vars_; }
  int subsample_factor() const { return k_; }

 private:
  struct Mode {
    double p = 0.0;       // longitude wavenumber (cycles per domain)
    double q = 0.0;       // latitude wavenumber
    double amp = 0.0;
    double phase = 0.0;
    double extra_speed = 0.0;  // rad per step on top of flow advection
  };

  GridSpec grid_hr_;
  VariableSet vars_;
  int k_ = 1;
  double flow_u_ = 0.0;  // domain fractions per step, shared by all modes
  double flow_v_ = 0.0;
  std::vector<Mode> large_;
  std::vector<Mode> small_;
  std::vector<std::vector<double>> channel_phase_large_;  // [channel][mode]
  std::vector<std::vector<double>> channel_amp_large_;
  std::vector<std::vector<double>> channel_phase_small_;
  std::vector<double> offset_;  // per channel
  std::vector<double> scale_;
  double large_norm_ = 1.0;
  double amp_coupling_ = 0.6;
  double phase_coupling_ = 1.0;
};

struct SyntheticConfig {
  std::uint64_t seed = 0;
  GridSpec grid_hr;
  int k = 3;  // odd; LR grid is the k-stride center subsample
  int n_steps = 8;
  VariableSet vars;
  std::int64_t start_time = kSyntheticEpoch;
};

struct SyntheticTrajectory {
  std::vector<WeatherState> hr;
  std::vector<WeatherState> lr;
};

// In-memory trajectory pair (HR plus its center subsample). The CLI
// streams states to disk instead; this form serves tests and small runs.
SyntheticTrajectory generate_synthetic(const SyntheticConfig& config);

}  // namespace ghr
