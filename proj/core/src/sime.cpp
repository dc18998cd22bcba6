#include "ghr/sime.hpp"

#include "ghr/errors.hpp"
#include "ghr/res.hpp"

namespace ghr {

SimeLayout SimeLayout::create(const GridSpec& grid_hr, int k) {
  if (k <= 0 || k % 2 == 0) {
    throw ShapeError("SIME: factor must be odd and positive, got " + std::to_string(k) +
                     " (no center cell exists for even factors)");
  }
  if (grid_hr.n_lat % k != 0 || grid_hr.n_lon % k != 0) {
    throw ShapeError("SIME: grid " + std::to_string(grid_hr.n_lat) + "x" +
                     std::to_string(grid_hr.n_lon) + " not divisible by factor " +
                     std::to_string(k));
  }
  SimeLayout layout;
  layout.k = k;
  layout.hr_lat = grid_hr.n_lat;
  layout.hr_lon = grid_hr.n_lon;
  layout.lr_lat = grid_hr.n_lat / k;
  layout.lr_lon = grid_hr.n_lon / k;
  return layout;
}

Tensor sime_decompose_values(const Tensor& values, int k) {
  if (values.ndim() != 3) throw ShapeError("sime_decompose: expected [C,H,W]");
  const Index C = values.dim(0), H = values.dim(1), W = values.dim(2);
  Tensor batched = reshape(values, {1, C, H, W});
  Tensor out = sime_decompose_batch(batched, k);
  return out;  // [k^2, C, H/k, W/k]
}

Tensor sime_recompose_values(const Tensor& batch, int k) {
  if (batch.ndim() != 4) throw ShapeError("sime_recompose: expected [k^2,C,h,w]");
  Tensor hr = sime_recompose_batch(batch, k);  // [1,C,H,W]
  return reshape(hr, {hr.dim(1), hr.dim(2), hr.dim(3)});
}

Tensor sime_decompose_batch(const Tensor& values, int k) {
  if (values.ndim() != 4) throw ShapeError("sime_decompose: expected [S,C,H,W]");
  if (k <= 0 || k % 2 == 0) {
    throw ShapeError("sime_decompose: factor must be odd, got " + std::to_string(k));
  }
  const Index S = values.dim(0), C = values.dim(1), H = values.dim(2), W = values.dim(3);
  if (H % k != 0 || W % k != 0) {
    throw ShapeError("sime_decompose: " + shape_str(values.shape()) + " not divisible by " +
                     std::to_string(k));
  }
  const Index h = H / k, w = W / k;
  // (S,C,(i,br),(j,bc)) -> (S,(br,bc),C,i,j): sub-field b = br*k + bc.
  Tensor x = reshape(values, {S, C, h, k, w, k});
  x = permute(x, {0, 3, 5, 1, 2, 4});
  return reshape(x, {S * k * k, C, h, w});
}

Tensor sime_recompose_batch(const Tensor& batch, int k) {
  if (batch.ndim() != 4) throw ShapeError("sime_recompose: expected [S*k^2,C,h,w]");
  const Index B = batch.dim(0), C = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  if (B % (static_cast<Index>(k) * k) != 0) {
    throw ShapeError("sime_recompose: batch " + std::to_string(B) + " is not a multiple of k^2");
  }
  const Index S = B / (static_cast<Index>(k) * k);
  Tensor x = reshape(batch, {S, k, k, C, h, w});
  x = permute(x, {0, 3, 4, 1, 5, 2});  // (S,br,bc,C,i,j) -> (S,C,i,br,j,bc)
  return reshape(x, {S, C, h * k, w * k});
}

SimeDecomposition decompose(const WeatherState& hr, int k) {
  hr.validate();
  SimeDecomposition result;
  result.layout = SimeLayout::create(hr.grid, k);
  GridSpec lr_grid = hr.grid.coarsen(k);

  Tensor batch = sime_decompose_values(hr.values, k);
  const Index C = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const Index n = C * h * w;
  for (Index b = 0; b < batch.dim(0); ++b) {
    WeatherState sub;
    sub.grid = lr_grid;
    sub.vars = hr.vars;
    sub.valid_time = hr.valid_time;
    sub.normalization = hr.normalization;
    sub.values = Tensor::zeros({C, h, w});
    std::copy(batch.data().begin() + b * n, batch.data().begin() + (b + 1) * n,
              sub.values.raw_data().begin());
    result.sub_fields.push_back(std::move(sub));
  }
  return result;
}

WeatherState recompose(const std::vector<WeatherState>& sub_fields, const SimeLayout& layout) {
  const Index k2 = static_cast<Index>(layout.k) * layout.k;
  if (static_cast<Index>(sub_fields.size()) != k2) {
    throw ShapeError("recompose: expected " + std::to_string(k2) + " sub-fields, got " +
                     std::to_string(sub_fields.size()));
  }
  const WeatherState& first = sub_fields.front();
  const Index C = first.values.dim(0);
  if (first.values.dim(1) != layout.lr_lat || first.values.dim(2) != layout.lr_lon) {
    throw ShapeError("recompose: sub-field shape inconsistent with layout");
  }
  for (const WeatherState& s : sub_fields) {
    if (s.values.shape() != first.values.shape() || s.valid_time != first.valid_time) {
      throw ShapeError("recompose: sub-fields disagree in shape or valid time");
    }
  }

  Tensor batch = Tensor::zeros({k2, C, layout.lr_lat, layout.lr_lon});
  const Index n = C * layout.lr_lat * layout.lr_lon;
  for (Index b = 0; b < k2; ++b) {
    std::copy(sub_fields[static_cast<std::size_t>(b)].values.data().begin(),
              sub_fields[static_cast<std::size_t>(b)].values.data().end(),
              batch.raw_data().begin() + b * n);
  }

  WeatherState hr;
  hr.grid = GridSpec::regular(layout.hr_lat, layout.hr_lon);
  hr.vars = first.vars;
  hr.valid_time = first.valid_time;
  hr.normalization = first.normalization;
  hr.values = sime_recompose_values(batch, layout.k);
  return hr;
}

Tensor sime_forward_values(const Tensor& hr_batch, const MetaModelParams& params, int k,
                           const ResParams* res, const WeightOverrides* overrides,
                           CostAccounting* cost, int chunk) {
  if (hr_batch.ndim() != 4) throw ShapeError("sime_forward: expected [S,C,Hh,Wh]");
  const Index S = hr_batch.dim(0);
  Tensor lr_batch = sime_decompose_batch(hr_batch, k);

  AttentionStats stats;
  ForwardHooks hooks;
  hooks.res = res;
  hooks.overrides = overrides;
  hooks.stats = cost ? &stats : nullptr;

  Tensor out;
  if (chunk > 0 && !res && !active_tape()) {
    // Memory fallback: every op is row-independent without RES, so pushing
    // sub-fields through in slices is value-identical.
    const Index rows = lr_batch.dim(0);
    const Index C = lr_batch.dim(1), h = lr_batch.dim(2), w = lr_batch.dim(3);
    const Index per = C * h * w;
    out = Tensor::zeros(lr_batch.shape());
    for (Index start = 0; start < rows; start += chunk) {
      const Index n = std::min<Index>(chunk, rows - start);
      Tensor piece = Tensor::zeros({n, C, h, w});
      std::copy(lr_batch.data().begin() + start * per, lr_batch.data().begin() + (start + n) * per,
                piece.raw_data().begin());
      Tensor y = forward_values(piece, params, hooks, k, TokenSequence::Provenance::SimeDecomposed);
      std::copy(y.data().begin(), y.data().end(), out.raw_data().begin() + start * per);
    }
  } else {
    out = forward_values(lr_batch, params, hooks, k, TokenSequence::Provenance::SimeDecomposed);
  }
  Tensor hr_out = sime_recompose_batch(out, k);

  if (cost) {
    const Index N = params.config.tokens();
    const Index k2 = static_cast<Index>(k) * k;
    cost->k = k;
    cost->tokens_lr = N;
    cost->global_blocks = 0;
    cost->sime_global_entries = 0;
    cost->local_entries = 0;
    cost->res_entries = 0;
    for (const AttentionStats::Entry& e : stats.entries) {
      if (e.res) {
        cost->res_entries += e.score_entries / S;
      } else if (e.global) {
        ++cost->global_blocks;
        cost->sime_global_entries += e.score_entries / S;
      } else {
        cost->local_entries += e.score_entries / S;
      }
    }
    cost->naive_global_entries = cost->global_blocks * (k2 * N) * (k2 * N);
  }
  return hr_out;
}

SimeForwardResult sime_forward(const WeatherState& hr_normalized, const MetaModelParams& params,
                               int k, const ResParams* res, const WeightOverrides* overrides,
                               int chunk) {
  if (!hr_normalized.normalization) {
    throw ShapeError("sime_forward: state must be normalized");
  }
  SimeLayout layout = SimeLayout::create(hr_normalized.grid, k);
  if (layout.lr_lat != params.config.grid_lat || layout.lr_lon != params.config.grid_lon) {
    throw ShapeError("sime_forward: decomposed grid " + std::to_string(layout.lr_lat) + "x" +
                     std::to_string(layout.lr_lon) + " does not match the pretrained LR grid");
  }

  const Tensor& v = hr_normalized.values;
  Tensor batch = reshape(v, {1, v.dim(0), v.dim(1), v.dim(2)});
  SimeForwardResult result;
  Tensor out = sime_forward_values(batch, params, k, res, overrides, &result.cost, chunk);
  result.forecast = hr_normalized;
  result.forecast.values = reshape(out, v.shape());
  result.forecast.valid_time = hr_normalized.valid_time + kStepSeconds;
  return result;
}

}  // namespace ghr
