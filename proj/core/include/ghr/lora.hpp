#pragma once

#include <map>
#include <string>
#include <vector>

#include "ghr/meta_model.hpp"
#include "ghr/res.hpp"
#include "ghr/sime.hpp"

namespace ghr {

// Low-rank adapter for one frozen matrix. Projections act on row vectors
// (out = in @ W), so the factors are stored transposed relative to the
// column-vector form delta_W = B*A: `a` is the input-side Gaussian factor
// [K,r], `b` the output-side zero factor [r,D], and the effective weight
// is W0 + (alpha/r) * (a @ b).
struct LoraMatrix {
  Tensor a;
  Tensor b;
};

struct LoraStep {
  std::map<std::string, LoraMatrix> matrices;  // key: full parameter name
};

struct LoraSet {
  int rank = 4;
  double alpha = 4.0;
  std::vector<std::string> adapted;  // parameter names, e.g. blocks.0.attn.wq
  std::vector<LoraStep> steps;       // index t-1 holds the step-t adapters

  double beta() const { return alpha / static_cast<double>(rank); }
  int t_max() const { return static_cast<int>(steps.size()); }

  // Default adapted set: W_Q and W_V of every block. Requires
  // rank <= min(D,K)/4. Every delta starts at zero (b = 0).
  static LoraSet init(const MetaModelParams& params, int t_max, int rank, double alpha, Rng& rng,
                      std::vector<std::string> adapted = {});

  // Effective weights W0 + beta * (a @ b) for rollout step `step` (1-based;
  // clamped to t_max). Records on the active tape when one is installed,
  // which is how fine-tuning reaches the factors.
  WeightOverrides merged(const MetaModelParams& params, int step) const;

  NamedTensors named() const;  // lora/<t>/<param>/A and /B
  static LoraSet from_named(const NamedTensors& tensors);
  std::vector<Tensor> step_tensors(int step) const;
  std::uint64_t checksum() const;
};

// Eq.-level primitive: y = x @ (W0 + (alpha/r) * (a @ b)), either by
// merging the weight first or by running the low-rank path on x.
Tensor apply_lora(const Tensor& w0, const LoraMatrix& m, double alpha, int rank, const Tensor& x,
                  bool merged);

// --------------------------------------------------------------------------
// Autoregressive rollout

struct RolloutPlan {
  WeatherState initial;  // normalized
  int steps = 40;        // T: lead of step t is 6t hours
  int output_every = 1;  // cadence in steps
  int sime_chunk = 0;    // memory fallback; see sime_forward_values
};

struct RolloutResult {
  std::vector<WeatherState> states;  // normalized, at the plan's cadence
  std::vector<int> lead_hours;
  CostAccounting cost;  // accounting of the first step
};

// X^{t+1} = model(X^t) with step-t adapters merged per step; SIME path
// when k > 1. Aborts with NumericalError naming the step if any state
// goes non-finite.
RolloutResult rollout(const RolloutPlan& plan, const MetaModelParams& params, int k,
                      const ResParams* res = nullptr, const LoraSet* lora = nullptr);

// --------------------------------------------------------------------------
// Per-step fine-tuning

struct LoraTuneHyper {
  int t_max = 8;
  int steps_per_stage = 40;
  int batch = 1;  // trajectory windows per optimizer step
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
};

struct LoraTuneResult {
  LoraSet lora;
  // Per stage: (step within stage, training loss).
  std::vector<std::vector<std::pair<int, double>>> loss_curves;
};

// Sequential per-step curriculum: stage t rolls steps 1..t-1 with their
// already-tuned adapters detached from the tape, then trains only
// (A^t, B^t) on the step-t target. Meta and RES checksums must survive
// unchanged; a gradient on either is a logic error.
LoraTuneResult lora_finetune(const MetaModelParams& meta, const ResParams* res, LoraSet lora,
                             const DatasetManifest& manifest_hr, int k,
                             const LoraTuneHyper& hyper, const ChannelStats& stats);

}  // namespace ghr
