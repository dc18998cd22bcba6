#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ghr/grid.hpp"
#include "ghr/io.hpp"
#include "ghr/normalize.hpp"
#include "ghr/rng.hpp"
#include "ghr/tensor.hpp"

namespace ghr {

struct ResParams;  // res.hpp

enum class WindowKind { Square, Zonal, Meridional };

struct WindowShape {
  int rows = 0;
  int cols = 0;

  WindowKind kind() const {
    if (rows == cols) return WindowKind::Square;
    return cols > rows ? WindowKind::Zonal : WindowKind::Meridional;
  }
  bool tiles(int grid_rows, int grid_cols) const {
    return rows > 0 && cols > 0 && grid_rows % rows == 0 && grid_cols % cols == 0;
  }
};

struct ModelConfig {
  int patch = 4;
  int embed_dim = 64;
  int blocks = 6;  // M
  int period = 2;  // F: every F-th block runs global attention
  int heads = 4;
  // Local blocks cycle through this schedule in order.
  std::vector<WindowShape> window_schedule = {{2, 2}, {2, 4}, {4, 2}};
  int grid_lat = 16;  // LR training grid
  int grid_lon = 32;
  int channels = 8;

  int token_rows() const { return grid_lat / patch; }
  int token_cols() const { return grid_lon / patch; }
  Index tokens() const { return static_cast<Index>(token_rows()) * token_cols(); }
  bool is_global(int block_index) const { return (block_index + 1) % period == 0; }
  const WindowShape& local_shape(int local_ordinal) const {
    return window_schedule[static_cast<std::size_t>(local_ordinal) % window_schedule.size()];
  }
  void validate() const;
};

struct BlockParams {
  Tensor ln1_gain, ln1_offset;
  Tensor wq, wk, wv, wo;  // [D,D]; activations are row vectors: out = in @ W
  Tensor ln2_gain, ln2_offset;
  Tensor fc1, fc1_bias;  // [D,4D], [4D]
  Tensor fc2, fc2_bias;  // [4D,D], [D]
};

struct MetaModelParams {
  ModelConfig config;
  Tensor embed_kernel;  // [D,C,P,P]
  Tensor embed_bias;    // [D]
  Tensor pos;           // [N,D] learned absolute position embedding
  std::vector<BlockParams> blocks;
  Tensor head_kernel;  // [D,C,P,P]; zero init makes the model start at persistence

  static MetaModelParams init(const ModelConfig& config, Rng& rng);

  NamedTensors named() const;  // shared handles, stable order
  static MetaModelParams from_named(const ModelConfig& config, const NamedTensors& tensors);
  std::vector<Tensor> tensors() const;
  Index parameter_count() const;
  void set_requires_grad(bool rg);
  // FNV-1a over names and raw value bytes; frozen-parameter guard.
  std::uint64_t checksum() const;
};

struct TokenSequence {
  enum class Provenance { Plain, SimeDecomposed };
  Tensor values;  // [B,N,D]
  int rows = 0;   // token grid
  int cols = 0;
  Provenance provenance = Provenance::Plain;
  int factor = 1;  // sime factor k when decomposed
};

// Per-application attention instrumentation. Score entries count the
// attention matrix cells per batch element (heads excluded), which is the
// quantity the SIME cost law is stated in.
struct AttentionStats {
  struct Entry {
    bool global = false;
    bool res = false;
    Index groups = 0;       // batch x windows
    Index window_size = 0;  // tokens attending to each other
    Index score_entries = 0;
  };
  std::vector<Entry> entries;
  Index global_score_entries = 0;
};

// Regroups [B,N,D] tokens into [B*G, rows*cols, D] windows; exact inverse
// of window_reverse. Pure reshape/permute composition, so round-trips are
// bitwise.
Tensor window_partition(const Tensor& seq, int grid_rows, int grid_cols, const WindowShape& shape);
Tensor window_reverse(const Tensor& windows, int grid_rows, int grid_cols, const WindowShape& shape,
                      Index batch);

enum class AttentionMode { Local, Global };

// Plain multi-head self-attention over [G,T,D] groups (windows or whole
// grids); projections are [D,D] in row convention.
Tensor multihead_self_attention(const Tensor& x, const Tensor& wq, const Tensor& wk,
                                const Tensor& wv, const Tensor& wo, int heads);

// Optional per-name weight replacement (LoRA-merged projections) applied
// by name, e.g. "blocks.3.attn.wq".
using WeightOverrides = std::map<std::string, Tensor>;

// Pre-norm multi-head self-attention plus feed-forward, both residual.
// Local mode restricts attention to `shape` windows; global attends over
// all tokens.
Tensor attention_block(const Tensor& seq, const BlockParams& params, int heads, AttentionMode mode,
                       const WindowShape* shape, int grid_rows, int grid_cols,
                       AttentionStats* stats = nullptr, bool stats_res_tag = false);

struct ForwardHooks {
  const ResParams* res = nullptr;
  const WeightOverrides* overrides = nullptr;
  AttentionStats* stats = nullptr;
};

// Patch-embeds a [B,C,H,W] batch into tokens with position embedding.
Tensor embed_values(const Tensor& x, const MetaModelParams& params);
TokenSequence embed(const WeatherState& state, const MetaModelParams& params);

// Full one-step map on a [B,C,H,W] batch in normalized units. The result
// is input plus a predicted increment. `sime_factor` > 1 marks the batch
// as a SIME decomposition (B must be a multiple of factor^2) and enables
// RES modules.
Tensor forward_values(const Tensor& x, const MetaModelParams& params,
                      const ForwardHooks& hooks = {}, int sime_factor = 1,
                      TokenSequence::Provenance provenance = TokenSequence::Provenance::Plain);

// Single-state forward: +6 hours on the same grid.
WeatherState forward(const WeatherState& normalized_state, const MetaModelParams& params,
                     const ForwardHooks& hooks = {});

// --------------------------------------------------------------------------
// Pretraining

struct TrainHyper {
  int steps = 500;
  int batch = 8;
  double lr = 2e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;  // temporal tail of the pair list
  int val_every = 50;
};

struct PretrainResult {
  MetaModelParams params;
  std::vector<std::pair<int, double>> loss_curve;  // (step, train batch loss)
  std::vector<std::pair<int, double>> val_curve;   // (step, validation loss)
  double initial_val_loss = 0.0;
  double final_val_loss = 0.0;
};

// Latitude-weighted MSE between forward(X_t) and X_{t+6h} on normalized LR
// states, AdamW, deterministic under a fixed seed. Throws NumericalError
// on divergence.
PretrainResult pretrain(const DatasetManifest& manifest_lr, const ModelConfig& config,
                        const TrainHyper& hyper, const ChannelStats& stats);

// Latitude-weighted MSE of `pred` against `target` (normalized [B,C,H,W]),
// differentiable; shared by every training stage.
Tensor weighted_mse_loss(const Tensor& pred, const Tensor& target, const Tensor& lat_weights);
// Column vector [H,1] of float32 latitude weights for broadcasting.
Tensor lat_weight_tensor(const GridSpec& grid);

}  // namespace ghr
