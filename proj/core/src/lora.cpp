#include "ghr/lora.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ghr/errors.hpp"
#include "ghr/optimizer.hpp"

namespace ghr {

LoraSet LoraSet::init(const MetaModelParams& params, int t_max, int rank, double alpha, Rng& rng,
                      std::vector<std::string> adapted) {
  if (t_max < 1) throw ConfigError("LoraSet: t_max must be >= 1");
  if (rank < 1) throw ConfigError("LoraSet: rank must be >= 1");
  LoraSet set;
  set.rank = rank;
  set.alpha = alpha;
  if (adapted.empty()) {
    for (int b = 0; b < params.config.blocks; ++b) {
      adapted.push_back("blocks." + std::to_string(b) + ".attn.wq");
      adapted.push_back("blocks." + std::to_string(b) + ".attn.wv");
    }
  }
  set.adapted = std::move(adapted);

  const NamedTensors named = params.named();
  for (int t = 0; t < t_max; ++t) {
    LoraStep step;
    for (const std::string& name : set.adapted) {
      const Tensor& w0 = find_param(named, name);
      if (w0.ndim() != 2) throw ConfigError("LoraSet: adapted parameter " + name + " is not a matrix");
      const Index K = w0.dim(0), D = w0.dim(1);
      if (rank > std::min(K, D) / 4) {
        throw ConfigError("LoraSet: rank " + std::to_string(rank) + " too large for " + name +
                          " " + shape_str(w0.shape()) + " (need r <= min(D,K)/4)");
      }
      LoraMatrix m;
      m.a = Tensor::gaussian({K, rank}, rng, 0.02, true);
      m.b = Tensor::zeros({rank, D}, true);
      step.matrices.emplace(name, std::move(m));
    }
    set.steps.push_back(std::move(step));
  }
  return set;
}

WeightOverrides LoraSet::merged(const MetaModelParams& params, int step) const {
  if (steps.empty()) return {};
  const int idx = std::clamp(step, 1, t_max()) - 1;
  const NamedTensors named = params.named();
  WeightOverrides out;
  for (const auto& [name, m] : steps[static_cast<std::size_t>(idx)].matrices) {
    const Tensor& w0 = find_param(named, name);
    out.emplace(name, add(w0, scale(matmul(m.a, m.b), beta())));
  }
  return out;
}

NamedTensors LoraSet::named() const {
  NamedTensors out;
  out.emplace_back("lora/meta", Tensor::from({2}, {static_cast<float>(rank), static_cast<float>(alpha)}));
  for (int t = 1; t <= t_max(); ++t) {
    for (const auto& [name, m] : steps[static_cast<std::size_t>(t - 1)].matrices) {
      const std::string prefix = "lora/" + std::to_string(t) + "/" + name + "/";
      out.emplace_back(prefix + "A", m.a);
      out.emplace_back(prefix + "B", m.b);
    }
  }
  return out;
}

LoraSet LoraSet::from_named(const NamedTensors& tensors) {
  LoraSet set;
  const Tensor& meta = find_param(tensors, "lora/meta");
  if (meta.numel() != 2) throw ParseError("lora/meta entry malformed", 0);
  set.rank = static_cast<int>(meta.data()[0]);
  set.alpha = static_cast<double>(meta.data()[1]);

  std::map<int, LoraStep> by_step;
  std::vector<std::string> adapted;
  for (const auto& [name, tensor] : tensors) {
    if (name.rfind("lora/", 0) != 0 || name == "lora/meta") continue;
    const std::size_t p1 = name.find('/', 5);
    const std::size_t p2 = name.rfind('/');
    if (p1 == std::string::npos || p2 == std::string::npos || p2 <= p1) {
      throw ParseError("malformed LoRA entry name '" + name + "'", 0);
    }
    const int t = std::stoi(name.substr(5, p1 - 5));
    const std::string param = name.substr(p1 + 1, p2 - p1 - 1);
    const std::string factor = name.substr(p2 + 1);
    LoraMatrix& m = by_step[t].matrices[param];
    if (factor == "A") {
      m.a = tensor.clone(true);
    } else if (factor == "B") {
      m.b = tensor.clone(true);
    } else {
      throw ParseError("unknown LoRA factor '" + factor + "'", 0);
    }
    if (t == 1 && std::find(adapted.begin(), adapted.end(), param) == adapted.end()) {
      adapted.push_back(param);
    }
  }
  set.adapted = std::move(adapted);
  for (auto& [t, step] : by_step) {
    if (t != static_cast<int>(set.steps.size()) + 1) {
      throw ParseError("non-contiguous LoRA step indices", 0);
    }
    for (const auto& [param, m] : step.matrices) {
      if (!m.a.defined() || !m.b.defined()) {
        throw ParseError("LoRA entry " + param + " missing A or B", 0);
      }
    }
    set.steps.push_back(std::move(step));
  }
  if (set.steps.empty()) throw MissingPrerequisite("checkpoint contains no LoRA steps");
  return set;
}

std::vector<Tensor> LoraSet::step_tensors(int step) const {
  std::vector<Tensor> out;
  const LoraStep& s = steps[static_cast<std::size_t>(step - 1)];
  for (const auto& [name, m] : s.matrices) {
    out.push_back(m.a);
    out.push_back(m.b);
  }
  return out;
}

std::uint64_t LoraSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : named()) {
    mix(name.data(), name.size());
    mix(t.data().data(), t.data().size() * sizeof(float));
  }
  return h;
}

Tensor apply_lora(const Tensor& w0, const LoraMatrix& m, double alpha, int rank, const Tensor& x,
                  bool merged) {
  if (rank < 1) throw ShapeError("apply_lora: rank must be >= 1");
  if (w0.ndim() != 2 || m.a.ndim() != 2 || m.b.ndim() != 2 || m.a.dim(0) != w0.dim(0) ||
      m.a.dim(1) != rank || m.b.dim(0) != rank || m.b.dim(1) != w0.dim(1)) {
    throw ShapeError("apply_lora: factor shapes " + shape_str(m.a.shape()) + "/" +
                     shape_str(m.b.shape()) + " do not fit " + shape_str(w0.shape()));
  }
  const double beta = alpha / static_cast<double>(rank);
  if (merged) {
    return matmul(x, add(w0, scale(matmul(m.a, m.b), beta)));
  }
  return add(matmul(x, w0), scale(matmul(matmul(x, m.a), m.b), beta));
}

// --------------------------------------------------------------------------
// Rollout

RolloutResult rollout(const RolloutPlan& plan, const MetaModelParams& params, int k,
                      const ResParams* res, const LoraSet* lora) {
  if (plan.steps < 1) throw ConfigError("rollout: need at least one step");
  if (plan.output_every < 1) throw ConfigError("rollout: output cadence must be >= 1");
  if (!plan.initial.normalization) throw ShapeError("rollout: initial state must be normalized");

  RolloutResult result;
  WeatherState state = plan.initial;
  for (int t = 1; t <= plan.steps; ++t) {
    WeightOverrides overrides;
    const WeightOverrides* use = nullptr;
    if (lora && lora->t_max() > 0) {
      overrides = lora->merged(params, t);
      use = &overrides;
    }
    Tensor x = reshape(state.values, {1, state.values.dim(0), state.values.dim(1), state.values.dim(2)});
    CostAccounting cost;
    Tensor y = sime_forward_values(x, params, k, res, use, t == 1 ? &result.cost : &cost,
                                   res ? 0 : plan.sime_chunk);
    WeatherState next = state;
    next.values = reshape(y, state.values.shape());
    next.valid_time = state.valid_time + kStepSeconds;
    if (!next.values.all_finite()) {
      throw NumericalError("rollout produced a non-finite state at step " + std::to_string(t) +
                           " (lead " + std::to_string(6 * t) + "h)");
    }
    state = std::move(next);
    if (t % plan.output_every == 0) {
      result.states.push_back(state);
      result.lead_hours.push_back(6 * t);
    }
  }
  return result;
}

// --------------------------------------------------------------------------
// Per-step fine-tuning

namespace {

void assert_frozen(const std::vector<Tensor>& tensors, const char* who) {
  for (const Tensor& t : tensors) {
    if (t.has_grad()) {
      for (float g : t.grad()) {
        if (g != 0.0f) {
          throw std::logic_error(std::string("gradient reached a frozen ") + who + " parameter");
        }
      }
    }
  }
}

}  // namespace

LoraTuneResult lora_finetune(const MetaModelParams& meta_in, const ResParams* res, LoraSet lora,
                             const DatasetManifest& manifest_hr, int k,
                             const LoraTuneHyper& hyper, const ChannelStats& stats) {
  if (hyper.t_max < 1 || hyper.t_max > lora.t_max()) {
    throw ConfigError("lora_finetune: t_max out of range for the adapter set");
  }

  MetaModelParams meta = MetaModelParams::from_named(meta_in.config, meta_in.named());
  meta.set_requires_grad(false);
  ResParams res_copy;
  const ResParams* res_frozen = nullptr;
  if (res) {
    res_copy = ResParams::from_named(meta.config, res->named());
    res_copy.set_requires_grad(false);
    res_frozen = &res_copy;
  }
  const std::uint64_t meta_checksum = meta.checksum();
  const std::uint64_t res_checksum = res ? res_copy.checksum() : 0;

  auto shared_stats = std::make_shared<ChannelStats>(stats);
  std::vector<Tensor> fields;
  fields.reserve(manifest_hr.entries.size());
  for (std::size_t i = 0; i < manifest_hr.entries.size(); ++i) {
    fields.push_back(normalize(load_manifest_state(manifest_hr, i), shared_stats).values);
  }
  const auto trajectories = manifest_hr.trajectories();

  // Start indices with at least t_max future steps available.
  std::vector<std::size_t> starts;
  for (const auto& [begin, end] : trajectories) {
    for (std::size_t s = begin; s + static_cast<std::size_t>(hyper.t_max) < end; ++s) {
      starts.push_back(s);
    }
  }
  if (starts.empty()) {
    throw ConfigError("lora_finetune: HR trajectories shorter than t_max+1 steps");
  }

  Tensor lat_w = lat_weight_tensor(manifest_hr.grid);
  Rng rng(hyper.seed, /*stream=*/0x33);
  const std::vector<Tensor> meta_tensors = meta.tensors();
  const std::vector<Tensor> res_tensors = res ? res_copy.tensors() : std::vector<Tensor>{};

  LoraTuneResult result;

  for (int stage = 1; stage <= hyper.t_max; ++stage) {
    // Init contract: each stage starts from delta W = 0.
    for (const auto& [name, m] : lora.steps[static_cast<std::size_t>(stage - 1)].matrices) {
      for (float v : m.b.data()) {
        if (v != 0.0f) {
          throw std::logic_error("lora_finetune: stage " + std::to_string(stage) +
                                 " adapters were touched before their stage");
        }
      }
    }

    AdamW optimizer(lora.step_tensors(stage),
                    {hyper.lr, hyper.beta1, hyper.beta2, hyper.eps, hyper.weight_decay});
    std::vector<std::pair<int, double>> curve;

    for (int step = 1; step <= hyper.steps_per_stage; ++step) {
      optimizer.zero_grad();
      double loss_value = 0.0;
      {
        ComputationTape tape;
        for (int b = 0; b < hyper.batch; ++b) {
          const std::size_t s = starts[rng.below(static_cast<std::uint32_t>(starts.size()))];
          // Steps 1..stage-1 run with their tuned adapters, off-tape.
          Tensor x = reshape(fields[s], {1, fields[s].dim(0), fields[s].dim(1), fields[s].dim(2)});
          for (int t = 1; t < stage; ++t) {
            WeightOverrides ov = lora.merged(meta, t);
            x = sime_forward_values(x, meta, k, res_frozen, &ov).detach();
          }
          // Step `stage` on tape; only (A^stage, B^stage) can receive grads.
          TapeScope scope(tape);
          WeightOverrides ov = lora.merged(meta, stage);
          Tensor pred = sime_forward_values(x, meta, k, res_frozen, &ov);
          Tensor target = reshape(fields[s + static_cast<std::size_t>(stage)],
                                  {1, fields[s].dim(0), fields[s].dim(1), fields[s].dim(2)});
          Tensor loss = scale(weighted_mse_loss(pred, target, lat_w), 1.0 / hyper.batch);
          loss_value += static_cast<double>(loss.item()) ;
          tape.backward(loss);
        }
        if (!std::isfinite(loss_value)) {
          throw NumericalError("lora_finetune diverged in stage " + std::to_string(stage));
        }
      }
      assert_frozen(meta_tensors, "meta");
      assert_frozen(res_tensors, "RES");
      optimizer.step();
      curve.emplace_back(step, loss_value);
    }
    result.loss_curves.push_back(std::move(curve));
  }

  if (meta.checksum() != meta_checksum) {
    throw std::logic_error("lora_finetune: frozen meta parameters changed");
  }
  if (res && res_copy.checksum() != res_checksum) {
    throw std::logic_error("lora_finetune: frozen RES parameters changed");
  }
  result.lora = std::move(lora);
  return result;
}

}  // namespace ghr
