#pragma once

#include <vector>

#include "ghr/grid.hpp"
#include "ghr/meta_model.hpp"

namespace ghr {

struct ResParams;

// Spatial decomposition bookkeeping: sub-field b holds the HR cells at
// offset (b div k, b mod k) with stride k, so sub-field coordinates map to
// HR coordinates as (k*i + b div k, k*j + b mod k).
struct SimeLayout {
  int k = 1;
  int hr_lat = 0;
  int hr_lon = 0;
  int lr_lat = 0;
  int lr_lon = 0;

  static SimeLayout create(const GridSpec& grid_hr, int k);
};

// [C,H,W] -> [k^2, C, H/k, W/k] and back; pure reshape/permute chains, so
// both directions are differentiable and the round trip is bitwise.
Tensor sime_decompose_values(const Tensor& values, int k);
Tensor sime_recompose_values(const Tensor& batch, int k);
// Batched forms for [S,C,H,W] -> [S*k^2, C, H/k, W/k] and back.
Tensor sime_decompose_batch(const Tensor& values, int k);
Tensor sime_recompose_batch(const Tensor& batch, int k);

struct SimeDecomposition {
  SimeLayout layout;
  std::vector<WeatherState> sub_fields;  // k^2 states on the coarsened grid
};

SimeDecomposition decompose(const WeatherState& hr, int k);
WeatherState recompose(const std::vector<WeatherState>& sub_fields, const SimeLayout& layout);

// Attention cost accounting for one forecast step. Score entries count
// attention-matrix cells per batch element; the naive column is what a
// single global-attention model over all k^2*N tokens would spend.
struct CostAccounting {
  int k = 1;
  Index tokens_lr = 0;  // N per sub-field
  Index global_blocks = 0;
  Index sime_global_entries = 0;   // global_blocks * k^2 * N^2
  Index naive_global_entries = 0;  // global_blocks * (k^2 * N)^2
  Index local_entries = 0;
  Index res_entries = 0;

  double naive_to_sime_ratio() const {
    return sime_global_entries == 0
               ? 0.0
               : static_cast<double>(naive_global_entries) / static_cast<double>(sime_global_entries);
  }
};

// Decompose -> batched meta-model forward over the k^2 sub-fields (with
// optional RES modules and LoRA weight overrides) -> exact recompose.
// Input [S,C,Hh,Wh] in normalized units. `chunk` > 0 enables a memory
// fallback that pushes at most that many sub-fields through the model at
// once; it applies only off-tape and without RES modules (which couple
// all k^2 sub-fields), and is value-identical to the batched path.
Tensor sime_forward_values(const Tensor& hr_batch, const MetaModelParams& params, int k,
                           const ResParams* res = nullptr,
                           const WeightOverrides* overrides = nullptr,
                           CostAccounting* cost = nullptr, int chunk = 0);

struct SimeForwardResult {
  WeatherState forecast;  // normalized HR state at +6h
  CostAccounting cost;
};

SimeForwardResult sime_forward(const WeatherState& hr_normalized, const MetaModelParams& params,
                               int k, const ResParams* res = nullptr,
                               const WeightOverrides* overrides = nullptr, int chunk = 0);

}  // namespace ghr
