#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <vector>

#include "ghr/errors.hpp"
#include "ghr/io.hpp"
#include "ghr/meta_model.hpp"
#include "ghr/synthetic.hpp"
#include "test_helpers.hpp"

using namespace ghr;
using namespace testhelp;

namespace {

// Dense multi-head attention transcribed with explicit loops; the oracle
// side of the window-attention equivalence checks.
std::vector<double> dense_attention_oracle(const std::vector<double>& tokens, Index T, Index D,
                                           const Tensor& wq, const Tensor& wk, const Tensor& wv,
                                           const Tensor& wo, int heads) {
  const Index dh = D / heads;
  auto project = [&](const Tensor& w) {
    std::vector<double> out(static_cast<std::size_t>(T * D), 0.0);
    for (Index t = 0; t < T; ++t) {
      for (Index j = 0; j < D; ++j) {
        double acc = 0.0;
        for (Index i = 0; i < D; ++i) {
          acc += tokens[static_cast<std::size_t>(t * D + i)] * static_cast<double>(w.at({i, j}));
        }
        out[static_cast<std::size_t>(t * D + j)] = acc;
      }
    }
    return out;
  };
  const std::vector<double> q = project(wq), k = project(wk), v = project(wv);
  std::vector<double> ctx(static_cast<std::size_t>(T * D), 0.0);
  for (int h = 0; h < heads; ++h) {
    const Index off = h * dh;
    for (Index t = 0; t < T; ++t) {
      std::vector<double> scores(static_cast<std::size_t>(T));
      double mx = -1e300;
      for (Index u = 0; u < T; ++u) {
        double s = 0.0;
        for (Index e = 0; e < dh; ++e) {
          s += q[static_cast<std::size_t>(t * D + off + e)] * k[static_cast<std::size_t>(u * D + off + e)];
        }
        s /= std::sqrt(static_cast<double>(dh));
        scores[static_cast<std::size_t>(u)] = s;
        mx = std::max(mx, s);
      }
      double denom = 0.0;
      for (Index u = 0; u < T; ++u) {
        scores[static_cast<std::size_t>(u)] = std::exp(scores[static_cast<std::size_t>(u)] - mx);
        denom += scores[static_cast<std::size_t>(u)];
      }
      for (Index e = 0; e < dh; ++e) {
        double acc = 0.0;
        for (Index u = 0; u < T; ++u) {
          acc += scores[static_cast<std::size_t>(u)] / denom * v[static_cast<std::size_t>(u * D + off + e)];
        }
        ctx[static_cast<std::size_t>(t * D + off + e)] = acc;
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(T * D), 0.0);
  for (Index t = 0; t < T; ++t) {
    for (Index j = 0; j < D; ++j) {
      double acc = 0.0;
      for (Index i = 0; i < D; ++i) {
        acc += ctx[static_cast<std::size_t>(t * D + i)] * static_cast<double>(wo.at({i, j}));
      }
      out[static_cast<std::size_t>(t * D + j)] = acc;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = toy_config();
  cfg.validate();
  CHECK(cfg.tokens() == 32);  // token-count law on the toy grid

  ModelConfig bad = cfg;
  bad.blocks = 5;  // not divisible by period 2
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.window_schedule = {{3, 3}};  // does not tile 4x8
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.heads = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("embed: zero case, token count, channel permutation") {
  Rng rng(1);
  ModelConfig cfg = toy_config();
  MetaModelParams params = MetaModelParams::init(cfg, rng);

  // Zero state, zero bias, zero position embedding -> zero sequence.
  MetaModelParams zeroed = params;
  zeroed.embed_bias = Tensor::zeros({cfg.embed_dim});
  zeroed.pos = Tensor::zeros({cfg.tokens(), cfg.embed_dim});
  Tensor zero_in = Tensor::zeros({1, cfg.channels, cfg.grid_lat, cfg.grid_lon});
  Tensor seq = embed_values(zero_in, zeroed);
  REQUIRE(seq.shape() == Shape{1, 32, cfg.embed_dim});
  for (float v : seq.data()) CHECK(v == 0.0f);

  // Permuting channels together with the kernel's channel axis changes
  // nothing.
  Tensor x = Tensor::gaussian({1, cfg.channels, cfg.grid_lat, cfg.grid_lon}, rng, 1.0);
  Tensor base = embed_values(x, params);
  std::vector<int> perm = {2, 0, 3, 1};
  Tensor xp = Tensor::zeros(x.shape());
  Tensor kp = Tensor::zeros(params.embed_kernel.shape());
  const Index HW = cfg.grid_lat * cfg.grid_lon;
  const Index PP = cfg.patch * cfg.patch;
  for (int c = 0; c < cfg.channels; ++c) {
    std::copy(x.data().begin() + perm[static_cast<std::size_t>(c)] * HW,
              x.data().begin() + (perm[static_cast<std::size_t>(c)] + 1) * HW,
              xp.raw_data().begin() + c * HW);
    for (Index d = 0; d < cfg.embed_dim; ++d) {
      std::copy(params.embed_kernel.data().begin() + (d * cfg.channels + perm[static_cast<std::size_t>(c)]) * PP,
                params.embed_kernel.data().begin() + (d * cfg.channels + perm[static_cast<std::size_t>(c)] + 1) * PP,
                kp.raw_data().begin() + (d * cfg.channels + c) * PP);
    }
  }
  MetaModelParams permuted = params;
  permuted.embed_kernel = kp;
  Tensor other = embed_values(xp, permuted);
  CHECK(max_abs_diff(base, other) < 1e-6);
}

TEST_CASE("window partition: hand table, identity, round-trips") {
  Rng rng(2);
  const int R = 4, C = 8;
  const Index D = 3;
  // Token t carries value t so indices are visible in the output.
  std::vector<float> vals;
  for (int t = 0; t < R * C; ++t) {
    for (Index d = 0; d < D; ++d) vals.push_back(static_cast<float>(t));
  }
  Tensor seq = Tensor::from({1, R * C, D}, vals);

  // Full-grid window: one window, order preserved.
  Tensor full = window_partition(seq, R, C, {R, C});
  REQUIRE(full.shape() == Shape{1, R * C, D});
  CHECK(bitwise_equal(full, seq));

  // 2x2 windows on a 4x8 grid: 8 windows of 4 tokens; hand-computed table.
  Tensor wins = window_partition(seq, R, C, {2, 2});
  REQUIRE(wins.shape() == Shape{8, 4, D});
  const int expect[8][4] = {{0, 1, 8, 9},   {2, 3, 10, 11},  {4, 5, 12, 13},  {6, 7, 14, 15},
                            {16, 17, 24, 25}, {18, 19, 26, 27}, {20, 21, 28, 29}, {22, 23, 30, 31}};
  for (Index g = 0; g < 8; ++g) {
    for (Index t = 0; t < 4; ++t) {
      CHECK(wins.at({g, t, 0}) == static_cast<float>(expect[g][t]));
    }
  }

  // Round-trips are bitwise for all three window families.
  Tensor data = Tensor::gaussian({3, R * C, D}, rng, 1.0);
  for (WindowShape shape : {WindowShape{2, 2}, WindowShape{2, 4}, WindowShape{4, 2}}) {
    Tensor back = window_reverse(window_partition(data, R, C, shape), R, C, shape, 3);
    CHECK(bitwise_equal(back, data));
  }

  CHECK_THROWS_AS(window_partition(seq, R, C, {3, 2}), ShapeError);
}

TEST_CASE("attention block: pure residual with zeroed value/ffn paths") {
  Rng rng(3);
  ModelConfig cfg = toy_config();
  MetaModelParams params = MetaModelParams::init(cfg, rng);
  BlockParams blk = params.blocks[0];
  blk.wv = Tensor::zeros({cfg.embed_dim, cfg.embed_dim});
  blk.fc2 = Tensor::zeros({4 * cfg.embed_dim, cfg.embed_dim});

  Tensor seq = Tensor::gaussian({2, cfg.tokens(), cfg.embed_dim}, rng, 1.0);
  WindowShape shape{2, 2};
  Tensor out = attention_block(seq, blk, cfg.heads, AttentionMode::Local, &shape,
                               cfg.token_rows(), cfg.token_cols());
  CHECK(max_abs_diff(out, seq) == 0.0);
}

TEST_CASE("local attention with full-grid window equals global, bitwise") {
  Rng rng(4);
  ModelConfig cfg = toy_config();
  MetaModelParams params = MetaModelParams::init(cfg, rng);
  Tensor seq = Tensor::gaussian({2, cfg.tokens(), cfg.embed_dim}, rng, 1.0);

  WindowShape full{cfg.token_rows(), cfg.token_cols()};
  Tensor local = attention_block(seq, params.blocks[0], cfg.heads, AttentionMode::Local, &full,
                                 cfg.token_rows(), cfg.token_cols());
  Tensor global = attention_block(seq, params.blocks[0], cfg.heads, AttentionMode::Global, nullptr,
                                  cfg.token_rows(), cfg.token_cols());
  CHECK(bitwise_equal(local, global));
}

TEST_CASE("local window attention equals the per-window dense oracle") {
  Rng rng(5);
  ModelConfig cfg = toy_config();
  MetaModelParams params = MetaModelParams::init(cfg, rng);
  // Bigger weights than init so the attention is far from uniform.
  const BlockParams& src = params.blocks[0];
  BlockParams blk = src;
  blk.wq = Tensor::gaussian({cfg.embed_dim, cfg.embed_dim}, rng, 0.3);
  blk.wk = Tensor::gaussian({cfg.embed_dim, cfg.embed_dim}, rng, 0.3);
  blk.wv = Tensor::gaussian({cfg.embed_dim, cfg.embed_dim}, rng, 0.3);
  blk.wo = Tensor::gaussian({cfg.embed_dim, cfg.embed_dim}, rng, 0.3);

  const Index D = cfg.embed_dim;
  const int R = cfg.token_rows(), C = cfg.token_cols();
  Tensor seq = Tensor::gaussian({1, cfg.tokens(), D}, rng, 1.0);
  const WindowShape shape{2, 2};

  // Library path: partition -> attention -> reverse (no residual/FFN).
  Tensor windows = window_partition(seq, R, C, shape);
  Tensor attn = multihead_self_attention(windows, blk.wq, blk.wk, blk.wv, blk.wo, cfg.heads);
  Tensor lib = window_reverse(attn, R, C, shape, 1);

  // Oracle: dense attention run independently on each hand-gathered window.
  Tensor want = Tensor::zeros(lib.shape());
  for (int wi = 0; wi < R / 2; ++wi) {
    for (int wj = 0; wj < C / 2; ++wj) {
      std::vector<std::pair<int, int>> members;
      for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 2; ++c) members.emplace_back(wi * 2 + r, wj * 2 + c);
      }
      std::vector<double> tokens;
      for (auto [ti, tj] : members) {
        for (Index d = 0; d < D; ++d) tokens.push_back(seq.at({0, ti * C + tj, d}));
      }
      std::vector<double> out =
          dense_attention_oracle(tokens, 4, D, blk.wq, blk.wk, blk.wv, blk.wo, cfg.heads);
      for (std::size_t m = 0; m < members.size(); ++m) {
        auto [ti, tj] = members[m];
        for (Index d = 0; d < D; ++d) {
          want.raw_data()[(static_cast<Index>(ti) * C + tj) * D + d] =
              static_cast<float>(out[m * static_cast<std::size_t>(D) + static_cast<std::size_t>(d)]);
        }
      }
    }
  }
  CHECK(max_abs_diff(lib, want) < 1e-6);
}

TEST_CASE("forward: persistence at zero head, shapes, instrumentation") {
  Rng rng(6);
  ModelConfig cfg = toy_config();
  MetaModelParams params = MetaModelParams::init(cfg, rng);  // head starts at zero

  GridSpec grid = GridSpec::regular(cfg.grid_lat, cfg.grid_lon);
  VariableSet vars = n_channels(cfg.channels);
  WeatherState state = random_state(grid, vars, rng, kSyntheticEpoch, true);

  WeatherState out = forward(state, params);
  REQUIRE(out.values.shape() == state.values.shape());
  CHECK(out.valid_time == state.valid_time + kStepSeconds);
  for (Index i = 0; i < out.values.numel(); ++i) {
    CHECK(out.values.data()[i] == state.values.data()[i]);  // persistence
  }

  // A state that is not normalized is rejected.
  WeatherState raw = state;
  raw.normalization = nullptr;
  CHECK_THROWS_AS(forward(raw, params), ShapeError);

  // Score-matrix instrumentation: global blocks see 32x32, local blocks
  // window-sized matrices.
  AttentionStats stats;
  ForwardHooks hooks;
  hooks.stats = &stats;
  Tensor x = Tensor::gaussian({1, cfg.channels, cfg.grid_lat, cfg.grid_lon}, rng, 1.0);
  forward_values(x, params, hooks);
  REQUIRE(stats.entries.size() == 4);  // M = 4 blocks
  CHECK(!stats.entries[0].global);     // square 2x2
  CHECK(stats.entries[0].window_size == 4);
  CHECK(stats.entries[1].global);
  CHECK(stats.entries[1].window_size == 32);
  CHECK(stats.entries[1].score_entries == 32 * 32);
  CHECK(!stats.entries[2].global);  // zonal 2x4
  CHECK(stats.entries[2].window_size == 8);
  CHECK(stats.entries[3].global);
}

TEST_CASE("forward gradient check against finite differences") {
  Rng rng(7);
  ModelConfig cfg = tiny_config();
  MetaModelParams params = MetaModelParams::init(cfg, rng);
  // Non-zero head so its gradient path is exercised too.
  params.head_kernel = Tensor::gaussian(params.head_kernel.shape(), rng, 0.02, true);

  Tensor x = Tensor::gaussian({1, cfg.channels, cfg.grid_lat, cfg.grid_lon}, rng, 1.0);
  Tensor y = Tensor::gaussian(x.shape(), rng, 1.0);
  GridSpec grid = GridSpec::regular(cfg.grid_lat, cfg.grid_lon);
  Tensor lat_w = lat_weight_tensor(grid);

  auto loss_value = [&]() {
    Tensor pred = forward_values(x, params);
    return static_cast<double>(weighted_mse_loss(pred, y, lat_w).item());
  };

  ComputationTape tape;
  {
    TapeScope scope(tape);
    Tensor pred = forward_values(x, params);
    tape.backward(weighted_mse_loss(pred, y, lat_w));
  }

  // Ten parameters sampled across distinct tensors.
  NamedTensors named = params.named();
  Rng pick(99);
  int checked = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor t = named[pick.below(static_cast<std::uint32_t>(named.size()))].second;
    const Index e = static_cast<Index>(pick.below(static_cast<std::uint32_t>(t.numel())));
    const float saved = t.raw_data()[e];
    const double h = 1e-2;
    t.raw_data()[e] = static_cast<float>(saved + h);
    const double up = loss_value();
    t.raw_data()[e] = static_cast<float>(saved - h);
    const double down = loss_value();
    t.raw_data()[e] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double an = t.has_grad() ? static_cast<double>(t.grad()[e]) : 0.0;
    // allclose-style: |fd - an| <= atol + rtol * max(|fd|, |an|)
    CHECK(std::fabs(fd - an) <= 1e-5 + 1e-2 * std::max(std::fabs(fd), std::fabs(an)));
    ++checked;
  }
  CHECK(checked == 10);
}

TEST_CASE("checkpoint round-trip preserves the checksum") {
  Rng rng(8);
  ModelConfig cfg = tiny_config();
  MetaModelParams params = MetaModelParams::init(cfg, rng);
  const std::filesystem::path dir = std::filesystem::path("tmp_test") / "meta_ckpt";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "meta.ghrp").string();
  write_params(params.named(), path);
  MetaModelParams back = MetaModelParams::from_named(cfg, read_params(path));
  CHECK(back.checksum() == params.checksum());
  CHECK(back.parameter_count() == params.parameter_count());
}

TEST_CASE("pretrain: constant data is a fixed point, runs are deterministic") {
  const std::filesystem::path dir = std::filesystem::path("tmp_test") / "pretrain";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  ModelConfig cfg = tiny_config();
  GridSpec grid = GridSpec::regular(cfg.grid_lat, cfg.grid_lon);
  VariableSet vars = n_channels(cfg.channels);

  // Constant-in-time dataset: persistence is optimal and already reached
  // by the zero-initialized head.
  Rng rng(9);
  Tensor frozen_field = Tensor::gaussian({cfg.channels, cfg.grid_lat, cfg.grid_lon}, rng, 1.0);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < 12; ++i) {
    WeatherState s;
    s.grid = grid;
    s.vars = vars;
    s.valid_time = kSyntheticEpoch + i * kStepSeconds;
    s.values = frozen_field;
    const std::string p = (dir / ("c" + std::to_string(i) + ".ghr")).string();
    write_state(s, p);
    entries.push_back({s.valid_time, p});
  }
  write_manifest(entries, (dir / "m.txt").string());
  DatasetManifest manifest = load_manifest((dir / "m.txt").string(), "train-lr");

  ChannelStats stats;
  stats.vars = vars;
  stats.mean.assign(static_cast<std::size_t>(vars.count()), 0.0);
  stats.stddev.assign(static_cast<std::size_t>(vars.count()), 1.0);

  TrainHyper hyper;
  hyper.steps = 12;
  hyper.batch = 2;
  hyper.seed = 5;
  hyper.val_every = 6;
  PretrainResult r1 = pretrain(manifest, cfg, hyper, stats);
  CHECK(r1.initial_val_loss < 1e-6);
  for (const auto& [step, loss] : r1.loss_curve) CHECK(loss < 1e-6);

  PretrainResult r2 = pretrain(manifest, cfg, hyper, stats);
  REQUIRE(r2.loss_curve.size() == r1.loss_curve.size());
  for (std::size_t i = 0; i < r1.loss_curve.size(); ++i) {
    CHECK(r1.loss_curve[i].second == r2.loss_curve[i].second);  // bitwise determinism
  }
}

TEST_CASE("pretrain learns on evolving synthetic data") {
  const std::filesystem::path dir = std::filesystem::path("tmp_test") / "pretrain_syn";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  ModelConfig cfg = tiny_config();
  SyntheticConfig syn;
  syn.seed = 21;
  syn.grid_hr = GridSpec::regular(cfg.grid_lat, cfg.grid_lon);
  syn.k = 1;
  syn.n_steps = 80;
  syn.vars = n_channels(cfg.channels);
  SyntheticTrajectory traj = generate_synthetic(syn);

  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < traj.lr.size(); ++i) {
    const std::string p = (dir / ("s" + std::to_string(i) + ".ghr")).string();
    write_state(traj.lr[i], p);
    entries.push_back({traj.lr[i].valid_time, p});
  }
  write_manifest(entries, (dir / "m.txt").string());
  DatasetManifest manifest = load_manifest((dir / "m.txt").string(), "train-lr");
  ChannelStats stats = compute_stats(manifest);

  TrainHyper hyper;
  hyper.steps = 120;
  hyper.batch = 4;
  hyper.seed = 3;
  hyper.val_every = 40;
  PretrainResult result = pretrain(manifest, cfg, hyper, stats);
  CHECK(result.final_val_loss < result.initial_val_loss);
}
