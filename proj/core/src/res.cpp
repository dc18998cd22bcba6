#include "ghr/res.hpp"

#include <cstring>

#include "ghr/errors.hpp"
#include "ghr/optimizer.hpp"
#include "ghr/sime.hpp"

namespace ghr {

ResParams ResParams::init(const ModelConfig& config, const std::vector<int>& positions,
                          const WindowShape& hr_window, Rng& rng) {
  config.validate();
  const Index D = config.embed_dim;
  constexpr double kInitStd = 0.02;
  ResParams res;
  int prev = 0;
  for (int pos : positions) {
    if (pos <= prev || pos > config.blocks) {
      throw ConfigError("RES positions must be strictly increasing within [1, M]");
    }
    prev = pos;
    ResModuleParams m;
    m.position = pos;
    m.window = hr_window;
    m.ln_gain = Tensor::full({D}, 1.0f, true);
    m.ln_offset = Tensor::zeros({D}, true);
    m.wq = Tensor::gaussian({D, D}, rng, kInitStd, true);
    m.wk = Tensor::gaussian({D, D}, rng, kInitStd, true);
    m.wv = Tensor::gaussian({D, D}, rng, kInitStd, true);
    m.wo = Tensor::zeros({D, D}, true);  // identity module at init
    res.modules.push_back(std::move(m));
  }
  return res;
}

NamedTensors ResParams::named() const {
  NamedTensors out;
  for (std::size_t i = 0; i < modules.size(); ++i) {
    const ResModuleParams& m = modules[i];
    const std::string prefix = "res." + std::to_string(i) + ".";
    out.emplace_back(prefix + "meta",
                     Tensor::from({3}, {static_cast<float>(m.position),
                                        static_cast<float>(m.window.rows),
                                        static_cast<float>(m.window.cols)}));
    out.emplace_back(prefix + "ln.gain", m.ln_gain);
    out.emplace_back(prefix + "ln.offset", m.ln_offset);
    out.emplace_back(prefix + "attn.wq", m.wq);
    out.emplace_back(prefix + "attn.wk", m.wk);
    out.emplace_back(prefix + "attn.wv", m.wv);
    out.emplace_back(prefix + "attn.wo", m.wo);
  }
  return out;
}

ResParams ResParams::from_named(const ModelConfig& config, const NamedTensors& tensors) {
  ResParams res;
  for (std::size_t i = 0;; ++i) {
    const std::string prefix = "res." + std::to_string(i) + ".";
    bool present = false;
    for (const auto& [name, t] : tensors) {
      if (name == prefix + "meta") {
        present = true;
        break;
      }
    }
    if (!present) break;
    const Tensor& meta = find_param(tensors, prefix + "meta");
    ResModuleParams m;
    m.position = static_cast<int>(meta.data()[0]);
    m.window.rows = static_cast<int>(meta.data()[1]);
    m.window.cols = static_cast<int>(meta.data()[2]);
    m.ln_gain = find_param(tensors, prefix + "ln.gain").clone(true);
    m.ln_offset = find_param(tensors, prefix + "ln.offset").clone(true);
    m.wq = find_param(tensors, prefix + "attn.wq").clone(true);
    m.wk = find_param(tensors, prefix + "attn.wk").clone(true);
    m.wv = find_param(tensors, prefix + "attn.wv").clone(true);
    m.wo = find_param(tensors, prefix + "attn.wo").clone(true);
    res.modules.push_back(std::move(m));
  }
  if (res.modules.empty()) {
    throw MissingPrerequisite("checkpoint contains no RES modules");
  }
  (void)config;
  return res;
}

std::vector<Tensor> ResParams::tensors() const {
  std::vector<Tensor> out;
  for (const ResModuleParams& m : modules) {
    out.push_back(m.ln_gain);
    out.push_back(m.ln_offset);
    out.push_back(m.wq);
    out.push_back(m.wk);
    out.push_back(m.wv);
    out.push_back(m.wo);
  }
  return out;
}

Index ResParams::parameter_count() const {
  Index n = 0;
  for (const Tensor& t : tensors()) n += t.numel();
  return n;
}

void ResParams::set_requires_grad(bool rg) {
  for (Tensor t : tensors()) t.set_requires_grad(rg);
}

std::uint64_t ResParams::checksum() const {
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

void ResParams::validate(const ModelConfig& config, int k) const {
  int prev = 0;
  for (const ResModuleParams& m : modules) {
    if (m.position <= prev || m.position > config.blocks) {
      throw ConfigError("RES positions must be strictly increasing within [1, M]");
    }
    prev = m.position;
    if (!m.window.tiles(k * config.token_rows(), k * config.token_cols())) {
      throw ConfigError("RES window " + std::to_string(m.window.rows) + "x" +
                        std::to_string(m.window.cols) + " does not tile the HR token grid " +
                        std::to_string(k * config.token_rows()) + "x" +
                        std::to_string(k * config.token_cols()));
    }
  }
}

Tensor res_rearrange(const Tensor& seq, int k, int rows, int cols) {
  if (seq.ndim() != 3) throw ShapeError("res_rearrange: expected [B,N,D]");
  const Index B = seq.dim(0), N = seq.dim(1), D = seq.dim(2);
  const Index k2 = static_cast<Index>(k) * k;
  if (B % k2 != 0) {
    throw ShapeError("res_rearrange: batch " + std::to_string(B) +
                     " is not a multiple of k^2 = " + std::to_string(k2));
  }
  if (N != static_cast<Index>(rows) * cols) {
    throw ShapeError("res_rearrange: token count does not match grid");
  }
  const Index S = B / k2;
  // (S,(br,bc),(i,j),D) -> (S,(i,br),(j,bc),D)
  Tensor x = reshape(seq, {S, k, k, rows, cols, D});
  x = permute(x, {0, 3, 1, 4, 2, 5});
  return reshape(x, {S, static_cast<Index>(rows) * k * cols * k, D});
}

Tensor res_rearrange_inverse(const Tensor& hr_seq, int k, int rows, int cols) {
  if (hr_seq.ndim() != 3) throw ShapeError("res_rearrange_inverse: expected [S,HN,D]");
  const Index S = hr_seq.dim(0), HN = hr_seq.dim(1), D = hr_seq.dim(2);
  if (HN != static_cast<Index>(rows) * k * cols * k) {
    throw ShapeError("res_rearrange_inverse: token count does not match HR grid");
  }
  Tensor x = reshape(hr_seq, {S, rows, k, cols, k, D});
  x = permute(x, {0, 2, 4, 1, 3, 5});  // (S,i,br,j,bc,D) -> (S,br,bc,i,j,D)
  return reshape(x, {S * k * k, static_cast<Index>(rows) * cols, D});
}

Tensor res_module_apply(const Tensor& seq, const ResModuleParams& module, int k, int rows, int cols,
                        int heads, AttentionStats* stats) {
  const Index S = seq.dim(0) / (static_cast<Index>(k) * k);
  Tensor hr = res_rearrange(seq, k, rows, cols);
  const int hr_rows = rows * k, hr_cols = cols * k;

  Tensor h = layernorm(hr, module.ln_gain, module.ln_offset);
  Tensor windows = window_partition(h, hr_rows, hr_cols, module.window);
  Tensor out = multihead_self_attention(windows, module.wq, module.wk, module.wv, module.wo, heads);
  if (stats) {
    const Index groups = windows.dim(0), T = windows.dim(1);
    stats->entries.push_back({false, true, groups, T, groups * T * T});
  }
  Tensor rev = window_reverse(out, hr_rows, hr_cols, module.window, S);
  Tensor res = add(hr, rev);
  return res_rearrange_inverse(res, k, rows, cols);
}

Tensor res_apply_after_block(const Tensor& seq, int position, const ResParams& res, int k, int rows,
                             int cols, int heads, AttentionStats* stats) {
  Tensor out = seq;
  for (const ResModuleParams& module : res.modules) {
    if (module.position == position) {
      out = res_module_apply(out, module, k, rows, cols, heads, stats);
    }
  }
  return out;
}

// --------------------------------------------------------------------------
// DCTL

namespace {

std::vector<std::pair<std::size_t, std::size_t>> consecutive_pairs(const DatasetManifest& m) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& [begin, end] : m.trajectories()) {
    for (std::size_t i = begin; i + 1 < end; ++i) pairs.emplace_back(i, i + 1);
  }
  return pairs;
}

Tensor stack_states(const std::vector<Tensor>& fields, const std::vector<std::size_t>& idx) {
  const Index C = fields[0].dim(0), H = fields[0].dim(1), W = fields[0].dim(2);
  Tensor out = Tensor::zeros({static_cast<Index>(idx.size()), C, H, W});
  const Index n = C * H * W;
  for (std::size_t b = 0; b < idx.size(); ++b) {
    std::memcpy(out.raw_data().data() + static_cast<Index>(b) * n, fields[idx[b]].data().data(),
                static_cast<std::size_t>(n) * sizeof(float));
  }
  return out;
}

void assert_no_grad(const std::vector<Tensor>& frozen, const char* who) {
  for (const Tensor& t : frozen) {
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

DctlResult dctl_train(const DatasetManifest& manifest_hr, const MetaModelParams& meta_in,
                      ResParams res, int k, const DctlHyper& hyper, const ChannelStats& stats) {
  SimeLayout layout = SimeLayout::create(manifest_hr.grid, k);
  if (layout.lr_lat != meta_in.config.grid_lat || layout.lr_lon != meta_in.config.grid_lon) {
    throw ConfigError("dctl_train: HR manifest does not decompose onto the pretrained LR grid");
  }
  res.validate(meta_in.config, k);

  // Frozen meta model, deep-copied so the caller's tensors are untouched.
  MetaModelParams meta = MetaModelParams::from_named(meta_in.config, meta_in.named());
  meta.set_requires_grad(false);
  const std::uint64_t meta_checksum = meta.checksum();
  res.set_requires_grad(true);
  for (Tensor t : res.tensors()) t.zero_grad();

  auto shared_stats = std::make_shared<ChannelStats>(stats);
  std::vector<Tensor> fields;
  fields.reserve(manifest_hr.entries.size());
  for (std::size_t i = 0; i < manifest_hr.entries.size(); ++i) {
    fields.push_back(normalize(load_manifest_state(manifest_hr, i), shared_stats).values);
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs = consecutive_pairs(manifest_hr);
  if (pairs.size() < 4) throw ConfigError("dctl_train: too few consecutive HR pairs");
  const std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(static_cast<double>(pairs.size()) * hyper.val_fraction));
  const std::size_t n_train = pairs.size() - n_val;

  Tensor lat_w = lat_weight_tensor(manifest_hr.grid);

  auto val_loss = [&](const ResParams* use_res) {
    double total = 0.0;
    for (std::size_t i = n_train; i < pairs.size(); ++i) {
      Tensor x = stack_states(fields, {pairs[i].first});
      Tensor y = stack_states(fields, {pairs[i].second});
      Tensor pred = sime_forward_values(x, meta, k, use_res);
      total += static_cast<double>(weighted_mse_loss(pred, y, lat_w).item());
    }
    return total / static_cast<double>(n_val);
  };

  DctlResult result;
  result.baseline_val_loss = val_loss(nullptr);
  result.trained_parameters = res.parameter_count();
  result.total_parameters = meta.parameter_count() + res.parameter_count();

  Rng rng(hyper.seed, /*stream=*/0x22);
  AdamW optimizer(res.tensors(), {hyper.lr, hyper.beta1, hyper.beta2, hyper.eps, hyper.weight_decay});
  const std::vector<Tensor> frozen = meta.tensors();

  for (int step = 1; step <= hyper.steps; ++step) {
    std::vector<std::size_t> xs, ys;
    for (int b = 0; b < hyper.batch; ++b) {
      const std::size_t p = rng.below(static_cast<std::uint32_t>(n_train));
      xs.push_back(pairs[p].first);
      ys.push_back(pairs[p].second);
    }
    Tensor x = stack_states(fields, xs);
    Tensor y = stack_states(fields, ys);

    optimizer.zero_grad();
    double loss_value = 0.0;
    {
      ComputationTape tape;
      TapeScope scope(tape);
      Tensor pred = sime_forward_values(x, meta, k, &res);
      Tensor loss = weighted_mse_loss(pred, y, lat_w);
      loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        throw NumericalError("dctl_train diverged at step " + std::to_string(step));
      }
      tape.backward(loss);
    }
    assert_no_grad(frozen, "meta");
    optimizer.step();
    result.loss_curve.emplace_back(step, loss_value);
    if (step % hyper.val_every == 0 || step == hyper.steps) {
      result.val_curve.emplace_back(step, val_loss(&res));
    }
  }

  if (meta.checksum() != meta_checksum) {
    throw std::logic_error("dctl_train: frozen meta parameters changed");
  }

  if (hyper.unfreeze_steps > 0) {
    // Flag-guarded final stage: everything trains at a tiny rate.
    meta.set_requires_grad(true);
    std::vector<Tensor> all = meta.tensors();
    for (Tensor t : res.tensors()) all.push_back(t);
    AdamW full(all, {hyper.unfreeze_lr, hyper.beta1, hyper.beta2, hyper.eps, 0.0});
    for (int step = 1; step <= hyper.unfreeze_steps; ++step) {
      std::vector<std::size_t> xs, ys;
      for (int b = 0; b < hyper.batch; ++b) {
        const std::size_t p = rng.below(static_cast<std::uint32_t>(n_train));
        xs.push_back(pairs[p].first);
        ys.push_back(pairs[p].second);
      }
      Tensor x = stack_states(fields, xs);
      Tensor y = stack_states(fields, ys);
      full.zero_grad();
      {
        ComputationTape tape;
        TapeScope scope(tape);
        Tensor loss = weighted_mse_loss(sime_forward_values(x, meta, k, &res), y, lat_w);
        if (!std::isfinite(loss.item())) {
          throw NumericalError("dctl unfreeze stage diverged at step " + std::to_string(step));
        }
        tape.backward(loss);
      }
      full.step();
    }
    result.val_curve.emplace_back(hyper.steps + hyper.unfreeze_steps, val_loss(&res));
  }

  result.final_val_loss = result.val_curve.empty() ? result.baseline_val_loss
                                                   : result.val_curve.back().second;
  result.res = std::move(res);
  result.meta = std::move(meta);
  return result;
}

}  // namespace ghr
