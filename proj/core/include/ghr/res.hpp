#pragma once

#include <string>
#include <vector>

#include "ghr/meta_model.hpp"
#include "ghr/normalize.hpp"

namespace ghr {

// One Regional Enhanced Simulation module: local attention over tokens
// rearranged to their true HR positions. The output projection starts at
// zero, so a fresh module is exactly the identity map.
struct ResModuleParams {
  int position = 0;    // applied after this 1-based meta block
  WindowShape window;  // on the HR token grid (k*rows x k*cols)
  Tensor ln_gain, ln_offset;
  Tensor wq, wk, wv;
  Tensor wo;  // zero at init
};

struct ResParams {
  std::vector<ResModuleParams> modules;  // positions strictly increasing

  static ResParams init(const ModelConfig& config, const std::vector<int>& positions,
                        const WindowShape& hr_window, Rng& rng);

  NamedTensors named() const;
  static ResParams from_named(const ModelConfig& config, const NamedTensors& tensors);
  std::vector<Tensor> tensors() const;
  Index parameter_count() const;
  void set_requires_grad(bool rg);
  std::uint64_t checksum() const;
  void validate(const ModelConfig& config, int k) const;
};

// Token rearrangement between the SIME batch layout [S*k^2, N, D] and the
// true HR token grid [S, (k*rows)*(k*cols), D]: token (b, i, j) sits at HR
// coordinates (k*i + b div k, k*j + b mod k). Reshape/permute only, exact
// inverse, differentiable.
Tensor res_rearrange(const Tensor& seq, int k, int rows, int cols);
Tensor res_rearrange_inverse(const Tensor& hr_seq, int k, int rows, int cols);

// rearrange -> window partition -> pre-norm attention with residual ->
// window reverse -> inverse rearrange.
Tensor res_module_apply(const Tensor& seq, const ResModuleParams& module, int k, int rows, int cols,
                        int heads, AttentionStats* stats = nullptr);

// Applies every module registered for `position`; called by the meta-model
// forward loop.
Tensor res_apply_after_block(const Tensor& seq, int position, const ResParams& res, int k, int rows,
                             int cols, int heads, AttentionStats* stats = nullptr);

// --------------------------------------------------------------------------
// Decompositional and Combinational Transfer Learning: RES modules train on
// HR data while every meta parameter stays frozen.

struct DctlHyper {
  int steps = 300;
  int batch = 2;  // HR samples per step
  double lr = 1.5e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  double val_fraction = 0.15;
  int val_every = 50;
  // Optional final stage that unfreezes every parameter at a tiny learning
  // rate. Off by default; when on, the frozen-meta guarantee is waived for
  // that stage only.
  int unfreeze_steps = 0;
  double unfreeze_lr = 1e-5;
};

struct DctlResult {
  ResParams res;
  MetaModelParams meta;  // unchanged unless the unfreeze stage ran
  double baseline_val_loss = 0.0;  // frozen SIME forward, no RES
  double final_val_loss = 0.0;
  std::vector<std::pair<int, double>> loss_curve;
  std::vector<std::pair<int, double>> val_curve;
  Index trained_parameters = 0;
  Index total_parameters = 0;
};

// Throws std::logic_error if a gradient ever reaches a frozen meta
// parameter; verifies the meta checksum is unchanged.
DctlResult dctl_train(const DatasetManifest& manifest_hr, const MetaModelParams& meta,
                      ResParams res, int k, const DctlHyper& hyper, const ChannelStats& stats);

}  // namespace ghr
