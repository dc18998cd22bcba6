#include "ghr/meta_model.hpp"

#include <cmath>
#include <cstring>

#include "ghr/errors.hpp"
#include "ghr/optimizer.hpp"
#include "ghr/res.hpp"
#include "ghr/verify.hpp"

namespace ghr {

void ModelConfig::validate() const {
  if (patch <= 0 || embed_dim <= 0 || blocks <= 0 || period <= 0 || heads <= 0 ||
      grid_lat <= 0 || grid_lon <= 0 || channels <= 0) {
    throw ConfigError("ModelConfig: all sizes must be positive");
  }
  if (grid_lat % patch != 0 || grid_lon % patch != 0) {
    throw ConfigError("ModelConfig: grid " + std::to_string(grid_lat) + "x" +
                      std::to_string(grid_lon) + " not divisible by patch " + std::to_string(patch));
  }
  if (blocks % period != 0) {
    throw ConfigError("ModelConfig: blocks (" + std::to_string(blocks) +
                      ") must be divisible by period (" + std::to_string(period) + ")");
  }
  if (embed_dim % heads != 0) {
    throw ConfigError("ModelConfig: embed_dim must be divisible by heads");
  }
  if (window_schedule.empty()) throw ConfigError("ModelConfig: empty window schedule");
  for (const WindowShape& s : window_schedule) {
    if (!s.tiles(token_rows(), token_cols())) {
      throw ConfigError("ModelConfig: window " + std::to_string(s.rows) + "x" +
                        std::to_string(s.cols) + " does not tile the " +
                        std::to_string(token_rows()) + "x" + std::to_string(token_cols()) +
                        " token grid");
    }
  }
}

MetaModelParams MetaModelParams::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  const Index D = config.embed_dim;
  const Index C = config.channels;
  const Index P = config.patch;
  constexpr double kInitStd = 0.02;

  MetaModelParams p;
  p.config = config;
  p.embed_kernel = Tensor::gaussian({D, C, P, P}, rng, kInitStd, true);
  p.embed_bias = Tensor::zeros({D}, true);
  p.pos = Tensor::gaussian({config.tokens(), D}, rng, kInitStd, true);
  for (int b = 0; b < config.blocks; ++b) {
    BlockParams blk;
    blk.ln1_gain = Tensor::full({D}, 1.0f, true);
    blk.ln1_offset = Tensor::zeros({D}, true);
    blk.wq = Tensor::gaussian({D, D}, rng, kInitStd, true);
    blk.wk = Tensor::gaussian({D, D}, rng, kInitStd, true);
    blk.wv = Tensor::gaussian({D, D}, rng, kInitStd, true);
    blk.wo = Tensor::gaussian({D, D}, rng, kInitStd, true);
    blk.ln2_gain = Tensor::full({D}, 1.0f, true);
    blk.ln2_offset = Tensor::zeros({D}, true);
    blk.fc1 = Tensor::gaussian({D, 4 * D}, rng, kInitStd, true);
    blk.fc1_bias = Tensor::zeros({4 * D}, true);
    blk.fc2 = Tensor::gaussian({4 * D, D}, rng, kInitStd, true);
    blk.fc2_bias = Tensor::zeros({D}, true);
    p.blocks.push_back(std::move(blk));
  }
  // Zero head: the untrained model predicts a zero increment, i.e. the
  // persistence forecast.
  p.head_kernel = Tensor::zeros({D, C, P, P}, true);
  return p;
}

NamedTensors MetaModelParams::named() const {
  NamedTensors out;
  out.emplace_back("embed.kernel", embed_kernel);
  out.emplace_back("embed.bias", embed_bias);
  out.emplace_back("pos", pos);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    const BlockParams& blk = blocks[b];
    out.emplace_back(prefix + "ln1.gain", blk.ln1_gain);
    out.emplace_back(prefix + "ln1.offset", blk.ln1_offset);
    out.emplace_back(prefix + "attn.wq", blk.wq);
    out.emplace_back(prefix + "attn.wk", blk.wk);
    out.emplace_back(prefix + "attn.wv", blk.wv);
    out.emplace_back(prefix + "attn.wo", blk.wo);
    out.emplace_back(prefix + "ln2.gain", blk.ln2_gain);
    out.emplace_back(prefix + "ln2.offset", blk.ln2_offset);
    out.emplace_back(prefix + "ffn.fc1", blk.fc1);
    out.emplace_back(prefix + "ffn.fc1_bias", blk.fc1_bias);
    out.emplace_back(prefix + "ffn.fc2", blk.fc2);
    out.emplace_back(prefix + "ffn.fc2_bias", blk.fc2_bias);
  }
  out.emplace_back("head.kernel", head_kernel);
  return out;
}

MetaModelParams MetaModelParams::from_named(const ModelConfig& config, const NamedTensors& tensors) {
  config.validate();
  MetaModelParams p;
  p.config = config;
  p.embed_kernel = find_param(tensors, "embed.kernel").clone(true);
  p.embed_bias = find_param(tensors, "embed.bias").clone(true);
  p.pos = find_param(tensors, "pos").clone(true);
  for (int b = 0; b < config.blocks; ++b) {
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    BlockParams blk;
    blk.ln1_gain = find_param(tensors, prefix + "ln1.gain").clone(true);
    blk.ln1_offset = find_param(tensors, prefix + "ln1.offset").clone(true);
    blk.wq = find_param(tensors, prefix + "attn.wq").clone(true);
    blk.wk = find_param(tensors, prefix + "attn.wk").clone(true);
    blk.wv = find_param(tensors, prefix + "attn.wv").clone(true);
    blk.wo = find_param(tensors, prefix + "attn.wo").clone(true);
    blk.ln2_gain = find_param(tensors, prefix + "ln2.gain").clone(true);
    blk.ln2_offset = find_param(tensors, prefix + "ln2.offset").clone(true);
    blk.fc1 = find_param(tensors, prefix + "ffn.fc1").clone(true);
    blk.fc1_bias = find_param(tensors, prefix + "ffn.fc1_bias").clone(true);
    blk.fc2 = find_param(tensors, prefix + "ffn.fc2").clone(true);
    blk.fc2_bias = find_param(tensors, prefix + "ffn.fc2_bias").clone(true);
    p.blocks.push_back(std::move(blk));
  }
  p.head_kernel = find_param(tensors, "head.kernel").clone(true);

  const Index D = config.embed_dim;
  if (p.embed_kernel.shape() != Shape{D, config.channels, config.patch, config.patch} ||
      p.pos.shape() != Shape{config.tokens(), D}) {
    throw ShapeError("checkpoint does not match the model configuration");
  }
  return p;
}

std::vector<Tensor> MetaModelParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

Index MetaModelParams::parameter_count() const {
  Index n = 0;
  for (const Tensor& t : tensors()) n += t.numel();
  return n;
}

void MetaModelParams::set_requires_grad(bool rg) {
  for (Tensor t : tensors()) t.set_requires_grad(rg);
}

std::uint64_t MetaModelParams::checksum() const {
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

// --------------------------------------------------------------------------
// Window machinery

Tensor window_partition(const Tensor& seq, int grid_rows, int grid_cols, const WindowShape& shape) {
  if (seq.ndim() != 3) throw ShapeError("window_partition: expected [B,N,D]");
  const Index B = seq.dim(0), N = seq.dim(1), D = seq.dim(2);
  if (N != static_cast<Index>(grid_rows) * grid_cols) {
    throw ShapeError("window_partition: token count " + std::to_string(N) +
                     " does not match grid " + std::to_string(grid_rows) + "x" +
                     std::to_string(grid_cols));
  }
  if (!shape.tiles(grid_rows, grid_cols)) {
    throw ShapeError("window_partition: window " + std::to_string(shape.rows) + "x" +
                     std::to_string(shape.cols) + " does not tile grid " +
                     std::to_string(grid_rows) + "x" + std::to_string(grid_cols));
  }
  const Index gr = grid_rows / shape.rows, gc = grid_cols / shape.cols;
  Tensor x = reshape(seq, {B, gr, shape.rows, gc, shape.cols, D});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  return reshape(x, {B * gr * gc, static_cast<Index>(shape.rows) * shape.cols, D});
}

Tensor window_reverse(const Tensor& windows, int grid_rows, int grid_cols, const WindowShape& shape,
                      Index batch) {
  if (windows.ndim() != 3) throw ShapeError("window_reverse: expected [B*G,w,D]");
  const Index gr = grid_rows / shape.rows, gc = grid_cols / shape.cols;
  const Index D = windows.dim(2);
  if (windows.dim(0) != batch * gr * gc ||
      windows.dim(1) != static_cast<Index>(shape.rows) * shape.cols) {
    throw ShapeError("window_reverse: windowed batch " + shape_str(windows.shape()) +
                     " inconsistent with grid/window/batch");
  }
  Tensor x = reshape(windows, {batch, gr, gc, shape.rows, shape.cols, D});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  return reshape(x, {batch, static_cast<Index>(grid_rows) * grid_cols, D});
}

// --------------------------------------------------------------------------
// Attention

Tensor multihead_self_attention(const Tensor& x, const Tensor& wq, const Tensor& wk,
                                const Tensor& wv, const Tensor& wo, int heads) {
  const Index G = x.dim(0), T = x.dim(1), D = x.dim(2);
  if (D % heads != 0) throw ShapeError("attention: embed dim not divisible by heads");
  const Index dh = D / heads;
  auto split = [&](const Tensor& t) {
    return permute(reshape(t, {G, T, heads, dh}), {0, 2, 1, 3});  // [G,h,T,dh]
  };
  Tensor q = split(matmul(x, wq));
  Tensor k = split(matmul(x, wk));
  Tensor v = split(matmul(x, wv));
  Tensor scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor attn = softmax(scores, -1);
  Tensor ctx = matmul(attn, v);                          // [G,h,T,dh]
  ctx = reshape(permute(ctx, {0, 2, 1, 3}), {G, T, D});  // back to tokens
  return matmul(ctx, wo);
}

namespace {

Tensor mhsa(const Tensor& x, const BlockParams& p, int heads) {
  return multihead_self_attention(x, p.wq, p.wk, p.wv, p.wo, heads);
}

}  // namespace

Tensor attention_block(const Tensor& seq, const BlockParams& params, int heads, AttentionMode mode,
                       const WindowShape* shape, int grid_rows, int grid_cols,
                       AttentionStats* stats, bool stats_res_tag) {
  const Index B = seq.dim(0), N = seq.dim(1);
  Tensor h = layernorm(seq, params.ln1_gain, params.ln1_offset);

  Tensor attended;
  if (mode == AttentionMode::Local) {
    if (!shape) throw ShapeError("attention_block: local mode needs a window shape");
    Tensor windows = window_partition(h, grid_rows, grid_cols, *shape);
    Tensor out = mhsa(windows, params, heads);
    attended = window_reverse(out, grid_rows, grid_cols, *shape, B);
    if (stats) {
      const Index groups = windows.dim(0);
      const Index T = windows.dim(1);
      stats->entries.push_back({false, stats_res_tag, groups, T, groups * T * T});
    }
  } else {
    attended = mhsa(h, params, heads);
    if (stats) {
      stats->entries.push_back({true, stats_res_tag, B, N, B * N * N});
      stats->global_score_entries += B * N * N;
    }
  }
  Tensor s = add(seq, attended);

  Tensor h2 = layernorm(s, params.ln2_gain, params.ln2_offset);
  Tensor f = add(matmul(h2, params.fc1), params.fc1_bias);
  f = gelu(f);
  f = add(matmul(f, params.fc2), params.fc2_bias);
  return add(s, f);
}

// --------------------------------------------------------------------------
// Forward

Tensor embed_values(const Tensor& x, const MetaModelParams& params) {
  const ModelConfig& cfg = params.config;
  if (x.ndim() != 4) throw ShapeError("embed: expected [B,C,H,W], got " + shape_str(x.shape()));
  if (x.dim(2) % cfg.patch != 0 || x.dim(3) % cfg.patch != 0) {
    throw ShapeError("embed: spatial dims " + shape_str(x.shape()) + " not divisible by patch " +
                     std::to_string(cfg.patch));
  }
  Tensor tokens = conv2d(x, params.embed_kernel, &params.embed_bias, cfg.patch);  // [B,D,R,C]
  const Index B = tokens.dim(0), D = tokens.dim(1);
  const Index N = tokens.dim(2) * tokens.dim(3);
  tokens = permute(reshape(tokens, {B, D, N}), {0, 2, 1});  // [B,N,D]
  return add(tokens, params.pos);
}

TokenSequence embed(const WeatherState& state, const MetaModelParams& params) {
  Tensor x = reshape(state.values, {1, state.values.dim(0), state.values.dim(1), state.values.dim(2)});
  TokenSequence seq;
  seq.values = embed_values(x, params);
  seq.rows = static_cast<int>(state.grid.n_lat / params.config.patch);
  seq.cols = static_cast<int>(state.grid.n_lon / params.config.patch);
  return seq;
}

Tensor forward_values(const Tensor& x, const MetaModelParams& params, const ForwardHooks& hooks,
                      int sime_factor, TokenSequence::Provenance provenance) {
  const ModelConfig& cfg = params.config;
  if (x.ndim() != 4 || x.dim(1) != cfg.channels || x.dim(2) != cfg.grid_lat ||
      x.dim(3) != cfg.grid_lon) {
    throw ShapeError("forward: input " + shape_str(x.shape()) + " does not match config C=" +
                     std::to_string(cfg.channels) + ", grid " + std::to_string(cfg.grid_lat) + "x" +
                     std::to_string(cfg.grid_lon));
  }
  if (hooks.res && provenance != TokenSequence::Provenance::SimeDecomposed) {
    throw ShapeError("forward: RES modules need a SIME-decomposed batch");
  }

  const int rows = cfg.token_rows(), cols = cfg.token_cols();
  Tensor seq = embed_values(x, params);

  int local_ordinal = 0;
  for (int b = 0; b < cfg.blocks; ++b) {
    BlockParams blk = params.blocks[static_cast<std::size_t>(b)];
    if (hooks.overrides) {
      const std::string prefix = "blocks." + std::to_string(b) + ".attn.";
      auto maybe = [&](const char* key, Tensor& slot) {
        auto it = hooks.overrides->find(prefix + key);
        if (it != hooks.overrides->end()) slot = it->second;
      };
      maybe("wq", blk.wq);
      maybe("wk", blk.wk);
      maybe("wv", blk.wv);
      maybe("wo", blk.wo);
    }
    if (cfg.is_global(b)) {
      seq = attention_block(seq, blk, cfg.heads, AttentionMode::Global, nullptr, rows, cols,
                            hooks.stats);
    } else {
      const WindowShape& shape = cfg.local_shape(local_ordinal++);
      seq = attention_block(seq, blk, cfg.heads, AttentionMode::Local, &shape, rows, cols,
                            hooks.stats);
    }
    if (hooks.res) {
      seq = res_apply_after_block(seq, b + 1, *hooks.res, sime_factor, rows, cols, cfg.heads,
                                  hooks.stats);
    }
  }

  const Index B = x.dim(0), D = cfg.embed_dim;
  Tensor spatial = reshape(permute(seq, {0, 2, 1}), {B, D, rows, cols});
  Tensor increment = deconv2d(spatial, params.head_kernel, cfg.patch);
  return add(x, increment);
}

WeatherState forward(const WeatherState& state, const MetaModelParams& params,
                     const ForwardHooks& hooks) {
  if (!state.normalization) {
    throw ShapeError("forward: state must be normalized");
  }
  Tensor x = reshape(state.values, {1, state.values.dim(0), state.values.dim(1), state.values.dim(2)});
  Tensor y = forward_values(x, params, hooks);
  WeatherState out = state;
  out.values = reshape(y, state.values.shape());
  out.valid_time = state.valid_time + kStepSeconds;
  return out;
}

// --------------------------------------------------------------------------
// Loss and pretraining

Tensor lat_weight_tensor(const GridSpec& grid) {
  LatitudeWeights w = latitude_weights(grid);
  std::vector<float> vals;
  vals.reserve(w.alpha.size());
  for (double a : w.alpha) vals.push_back(static_cast<float>(a));
  const Index n = static_cast<Index>(vals.size());
  return Tensor::from({n, 1}, std::move(vals));
}

Tensor weighted_mse_loss(const Tensor& pred, const Tensor& target, const Tensor& lat_weights) {
  Tensor diff = sub(pred, target);
  return mean(mul(mul(diff, diff), lat_weights));
}

namespace {

// Consecutive (t, t+6h) index pairs within each trajectory.
std::vector<std::pair<std::size_t, std::size_t>> training_pairs(const DatasetManifest& manifest) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& [begin, end] : manifest.trajectories()) {
    for (std::size_t i = begin; i + 1 < end; ++i) pairs.emplace_back(i, i + 1);
  }
  return pairs;
}

Tensor stack_batch(const std::vector<Tensor>& fields, const std::vector<std::size_t>& indices) {
  const Index C = fields[0].dim(0), H = fields[0].dim(1), W = fields[0].dim(2);
  Tensor out = Tensor::zeros({static_cast<Index>(indices.size()), C, H, W});
  float* dst = out.raw_data().data();
  const Index n = C * H * W;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    std::memcpy(dst + static_cast<Index>(b) * n, fields[indices[b]].data().data(),
                static_cast<std::size_t>(n) * sizeof(float));
  }
  return out;
}

}  // namespace

PretrainResult pretrain(const DatasetManifest& manifest_lr, const ModelConfig& config,
                        const TrainHyper& hyper, const ChannelStats& stats) {
  config.validate();
  if (manifest_lr.grid.n_lat != config.grid_lat || manifest_lr.grid.n_lon != config.grid_lon) {
    throw ConfigError("pretrain: manifest grid does not match model config");
  }
  if (manifest_lr.vars.count() != config.channels) {
    throw ConfigError("pretrain: manifest channels do not match model config");
  }

  // The LR split is small by construction; hold it in memory normalized.
  auto shared_stats = std::make_shared<ChannelStats>(stats);
  std::vector<Tensor> fields;
  fields.reserve(manifest_lr.entries.size());
  for (std::size_t i = 0; i < manifest_lr.entries.size(); ++i) {
    fields.push_back(normalize(load_manifest_state(manifest_lr, i), shared_stats).values);
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs = training_pairs(manifest_lr);
  if (pairs.size() < 4) throw ConfigError("pretrain: too few consecutive pairs in the manifest");
  const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                         static_cast<double>(pairs.size()) * hyper.val_fraction));
  const std::size_t n_train = pairs.size() - n_val;

  Rng rng(hyper.seed, /*stream=*/0x11);
  MetaModelParams params = MetaModelParams::init(config, rng);
  Tensor lat_w = lat_weight_tensor(manifest_lr.grid);

  AdamW optimizer(params.tensors(),
                  {hyper.lr, hyper.beta1, hyper.beta2, hyper.eps, hyper.weight_decay});

  auto validation_loss = [&]() {
    double total = 0.0;
    for (std::size_t i = n_train; i < pairs.size(); ++i) {
      Tensor x = stack_batch(fields, {pairs[i].first});
      Tensor y = stack_batch(fields, {pairs[i].second});
      Tensor pred = forward_values(x, params);
      total += static_cast<double>(weighted_mse_loss(pred, y, lat_w).item());
    }
    return total / static_cast<double>(n_val);
  };

  PretrainResult result;
  result.initial_val_loss = validation_loss();
  result.val_curve.emplace_back(0, result.initial_val_loss);

  for (int step = 1; step <= hyper.steps; ++step) {
    std::vector<std::size_t> xs, ys;
    for (int b = 0; b < hyper.batch; ++b) {
      const std::size_t p = rng.below(static_cast<std::uint32_t>(n_train));
      xs.push_back(pairs[p].first);
      ys.push_back(pairs[p].second);
    }
    Tensor x = stack_batch(fields, xs);
    Tensor y = stack_batch(fields, ys);

    optimizer.zero_grad();
    double loss_value = 0.0;
    {
      ComputationTape tape;
      TapeScope scope(tape);
      Tensor pred = forward_values(x, params);
      Tensor loss = weighted_mse_loss(pred, y, lat_w);
      loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        throw NumericalError("pretrain diverged: loss " + std::to_string(loss_value) + " at step " +
                             std::to_string(step));
      }
      tape.backward(loss);
    }
    optimizer.step();
    result.loss_curve.emplace_back(step, loss_value);

    if (step % hyper.val_every == 0 || step == hyper.steps) {
      result.val_curve.emplace_back(step, validation_loss());
    }
  }

  result.final_val_loss = result.val_curve.back().second;
  result.params = std::move(params);
  return result;
}

}  // namespace ghr
