#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cplab/config.hpp"
#include "cplab/training.hpp"

using namespace cplab;

namespace {

std::vector<double> values(Var v) { return {v.value().values().begin(), v.value().values().end()}; }

double scalar_of(const std::function<Var(Tape&)>& f) {
  Tape t;
  return f(t).item();
}

NdArray row_matrix(std::vector<std::vector<double>> rows) {
  NdArray a(Shape{rows.size(), rows[0].size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) a.at(i, j) = rows[i][j];
  return a;
}

double normal(SeededRng& rng) {
  const double u = std::max(rng.uniform(), 1e-300);
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * rng.uniform());
}

std::vector<std::size_t> permutation(SeededRng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small but complete run configuration.
RunConfig small_run() {
  RunConfig c;
  c.env.grid = 8;
  c.env.piles = 2;
  c.env.distractors = 2;
  c.model.slots = 8;
  c.model.width = 4;
  c.model.key_dim = 6;
  c.model.b_count = 2;
  c.model.bins = 8;
  c.model.enc_hidden = 16;
  c.model.enc_out = 16;
  c.model.score_hidden = 12;
  c.model.pred_hidden = 12;
  c.model.verify_hidden = 12;
  c.train.batch = 6;
  c.train.negatives = 5;
  c.train.buffer_episodes = 8;
  c.train.episode_length = 24;
  c.train.window = 8;
  c.train.horizon = 3;
  c.train.steps = 5;
  c.train.checkpoint_every = 2;
  c.eval.episode_length = 24;
  c.sync();
  c.validate();
  return c;
}

std::vector<NdArray> sample_observations(const RunConfig& cfg, std::uint64_t seed) {
  TrajectoryBuffer buffer(cfg.env, cfg.train.buffer_episodes, cfg.train.episode_length, seed);
  SeededRng rng(seed + 1);
  std::vector<Window> windows;
  for (std::size_t i = 0; i < cfg.train.batch; ++i)
    windows.push_back(buffer.sample_window(static_cast<std::size_t>(cfg.train.window), rng));
  return window_observations(buffer, windows);
}

}  // namespace

// ---- nce -----------------------------------------------------------------------------

TEST(Nce, EqualScoresGiveLogOfCandidates) {
  std::vector<double> negs(31, 0.7);
  EXPECT_NEAR(nce_loss(0.7, negs), std::log(32.0), 1e-12);
  EXPECT_NEAR(nce_loss(0.7, negs), 3.4657, 1e-4);
}

TEST(Nce, DominantPositiveApproachesZero) {
  std::vector<double> negs(31, 0.0);
  EXPECT_LT(nce_loss(50.0, negs), 1e-18);
  EXPECT_GE(nce_loss(50.0, negs), 0.0);
  EXPECT_LT(nce_loss(10.0, negs), nce_loss(5.0, negs));
}

TEST(Nce, MatrixFormMatchesScalarForm) {
  SeededRng rng(3);
  NdArray scores(Shape{4, 6});
  for (auto& x : scores.values()) x = 3.0 * normal(rng);
  const std::vector<std::size_t> pos{0, 3, 5, 1};
  Tape t;
  const double batched = nce_loss(t.constant(scores), pos).item();
  double manual = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    std::vector<double> negs;
    for (std::size_t j = 0; j < 6; ++j)
      if (j != pos[r]) negs.push_back(scores.at(r, j));
    manual += nce_loss(scores.at(r, pos[r]), negs);
  }
  EXPECT_NEAR(batched, manual / 4.0, 1e-12);
}

TEST(Nce, RandomScoresConcentrateNearLogCandidates) {
  SeededRng rng(11);
  double total = 0.0;
  int inside = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    const double pos = rng.uniform();
    std::vector<double> negs(31);
    for (auto& s : negs) s = rng.uniform();
    // Direct evaluation of -log(e^pos / (e^pos + sum e^neg)).
    long double denom = std::exp(static_cast<long double>(pos));
    for (double s : negs) denom += std::exp(static_cast<long double>(s));
    const double oracle = -static_cast<double>(pos - std::log(denom));
    const double loss = nce_loss(pos, negs);
    EXPECT_NEAR(loss, oracle, 1e-12);
    total += loss;
    inside += std::abs(loss - std::log(32.0)) <= 0.5;
  }
  EXPECT_NEAR(total / 1000.0, std::log(32.0), 0.1);
  EXPECT_GE(inside, 950);
}

// ---- prediction loss ------------------------------------------------------------------

TEST(PredictionLoss, UniformOneHotAndClamped) {
  const std::vector<std::size_t> bins{3, 0};
  EXPECT_NEAR(scalar_of([&](Tape& t) {
                return prediction_loss(t.constant(NdArray(Shape{2, 16}, 1.0 / 16.0)), bins);
              }),
              2.7726, 1e-4);
  NdArray onehot(Shape{2, 16}, 0.0);
  onehot.at(0, 3) = 1.0;
  onehot.at(1, 0) = 1.0;
  EXPECT_EQ(scalar_of([&](Tape& t) { return prediction_loss(t.constant(onehot), bins); }), 0.0);
  const std::vector<std::size_t> wrong{4, 1};
  EXPECT_NEAR(scalar_of([&](Tape& t) { return prediction_loss(t.constant(onehot), wrong); }), -std::log(1e-12),
              1e-9);
  EXPECT_NEAR(-std::log(1e-12), 27.63, 0.01);
}

// ---- regularizers ----------------------------------------------------------------------

TEST(Regularizers, AttentionEntropyBounds) {
  const double uniform =
      scalar_of([](Tape& t) { return entropy_regularizer(t.constant(NdArray(Shape{3, 16}, 1.0 / 16.0))); });
  EXPECT_NEAR(uniform, std::log(16.0), 1e-12);
  NdArray onehot(Shape{2, 16}, 0.0);
  onehot.at(0, 4) = onehot.at(1, 9) = 1.0;
  EXPECT_NEAR(scalar_of([&](Tape& t) { return entropy_regularizer(t.constant(onehot)); }), 0.0, 1e-12);

  SeededRng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    NdArray p(Shape{4, 16});
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 16; ++j) s += p.at(r, j) = std::pow(rng.uniform(), 4.0);
      for (std::size_t j = 0; j < 16; ++j) p.at(r, j) /= s;
    }
    const double h = scalar_of([&](Tape& t) { return entropy_regularizer(t.constant(p)); });
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(16.0) + 1e-12);
  }
}

TEST(Regularizers, DiversityFromUsage) {
  // Every row selects slots {0, 1, 2}.
  NdArray same(Shape{5, 16}, 0.0);
  for (std::size_t r = 0; r < 5; ++r) same.at(r, 0) = same.at(r, 1) = same.at(r, 2) = 1.0;
  const double concentrated = scalar_of([&](Tape& t) {
    return diversity_regularizer(slot_usage(t.constant(same), 3));
  });
  EXPECT_NEAR(concentrated, std::log(3.0), 1e-12);
  // A single slot used by every row is fully degenerate.
  NdArray single(Shape{5, 16}, 0.0);
  for (std::size_t r = 0; r < 5; ++r) single.at(r, 7) = 1.0;
  EXPECT_NEAR(scalar_of([&](Tape& t) { return diversity_regularizer(slot_usage(t.constant(single), 1)); }), 0.0,
              1e-12);
  // Balanced: 4 rows of 4 cover 16 slots once.
  NdArray balanced(Shape{4, 16}, 0.0);
  for (std::size_t s = 0; s < 16; ++s) balanced.at(s / 4, s) = 1.0;
  EXPECT_NEAR(scalar_of([&](Tape& t) { return diversity_regularizer(slot_usage(t.constant(balanced), 4)); }),
              std::log(16.0), 1e-12);
}

TEST(Regularizers, DiversityIgnoresBatchOrder) {
  SeededRng rng(9);
  NdArray sel(Shape{8, 16}, 0.0);
  for (std::size_t r = 0; r < 8; ++r) {
    const auto order = permutation(rng, 16);
    for (std::size_t j = 0; j < 4; ++j) sel.at(r, order[j]) = 1.0;
  }
  const double base = scalar_of([&](Tape& t) { return diversity_regularizer(slot_usage(t.constant(sel), 4)); });
  for (int trial = 0; trial < 20; ++trial) {
    const auto order = permutation(rng, 8);
    NdArray shuffled(Shape{8, 16});
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t s = 0; s < 16; ++s) shuffled.at(r, s) = sel.at(order[r], s);
    EXPECT_NEAR(scalar_of([&](Tape& t) { return diversity_regularizer(slot_usage(t.constant(shuffled), 4)); }),
                base, 1e-12);
  }
}

TEST(Regularizers, VarianceFloor) {
  EXPECT_NEAR(scalar_of([](Tape& t) { return variance_floor_penalty(t.constant(NdArray(Shape{4, 3}, 0.3)), 0.1); }),
              1.0, 1e-12);
  // Columns with std 1 and 0.05 against floor 0.1: penalties 0 and 1 - 0.25.
  const NdArray h = row_matrix({{1.0, 0.05}, {-1.0, -0.05}});
  EXPECT_NEAR(scalar_of([&](Tape& t) { return variance_floor_penalty(t.constant(h), 0.1); }), 0.75 / 2.0, 1e-12);
}

// ---- readout ranges --------------------------------------------------------------------

TEST(ReadoutRanges, BatchMeanPlusMinusTwoSigma) {
  ModelConfig m;
  m.slots = 2;
  m.width = 2;
  m.bins = 4;
  const NdArray future = row_matrix({{1.0, 9.0, 0.5, 0.0}, {3.0, 9.0, 0.5, 0.0}});
  const auto r = batch_readout_ranges(m, future);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_DOUBLE_EQ(r[0].lo, 0.0);
  EXPECT_DOUBLE_EQ(r[0].hi, 4.0);
  EXPECT_EQ(r[0].bin_of(1.0), 1u);
  // Constant readouts get a tiny range centred on the value.
  EXPECT_NEAR(0.5 * (r[1].lo + r[1].hi), 0.5, 1e-15);
  EXPECT_GT(r[1].hi, r[1].lo);
}

// ---- data --------------------------------------------------------------------------------

TEST(Buffer, WindowsStayInsideOneEpisode) {
  EnvConfig env;
  TrajectoryBuffer buffer(env, 4, 20, 7);
  SeededRng rng(2);
  for (int i = 0; i < 2000; ++i) {
    if (i % 50 == 0) buffer.refresh();
    const Window w = buffer.sample_window(12, rng);
    ASSERT_LT(w.slot, buffer.size());
    ASSERT_EQ(w.length, 12u);
    ASSERT_LE(w.start + w.length, buffer.episode(w.slot).observations.size());
    ASSERT_EQ(w.episode, buffer.episode_index(w.slot));
  }
  EXPECT_THROW(buffer.sample_window(21, rng), std::invalid_argument);
}

TEST(Buffer, EpisodesComeFromTheSharedStream) {
  EnvConfig env;
  TrajectoryBuffer buffer(env, 3, 16, 42);
  for (int i = 0; i < 5; ++i) buffer.refresh();
  for (std::size_t s = 0; s < buffer.size(); ++s) {
    const Trajectory again = make_episode(env, 42, buffer.episode_index(s), 16);
    ASSERT_EQ(again.observations.size(), buffer.episode(s).observations.size());
    for (std::size_t k = 0; k < again.observations.size(); ++k)
      ASSERT_TRUE(again.observations[k] == buffer.episode(s).observations[k]);
  }
  EXPECT_EQ(buffer.next_index(), 8u);
}

TEST(Buffer, WindowObservationsAreStacked) {
  EnvConfig env;
  TrajectoryBuffer buffer(env, 3, 16, 1);
  const std::vector<Window> ws{{0, buffer.episode_index(0), 2, 5}, {2, buffer.episode_index(2), 9, 5}};
  const auto obs = window_observations(buffer, ws);
  ASSERT_EQ(obs.size(), 5u);
  for (std::size_t s = 0; s < 5; ++s) {
    ASSERT_EQ(obs[s].shape(), (Shape{2, env.obs_dim()}));
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t d = 0; d < env.obs_dim(); d += 37)
        ASSERT_EQ(obs[s].at(i, d), buffer.episode(ws[i].slot).observations[ws[i].start + s][d]);
  }
}

// ---- config -----------------------------------------------------------------------------

TEST(Config, ParsesOverridesAndComments) {
  const RunConfig c = parse_config(
      "# comment line\n"
      "train.lr = 0.001   # trailing\n"
      "train.temporal_negatives = true\n"
      "\n"
      "model.slots = 12\n"
      "env.grid = 10\n");
  EXPECT_DOUBLE_EQ(c.train.lr, 0.001);
  EXPECT_TRUE(c.train.temporal_negatives);
  EXPECT_EQ(c.model.slots, 12u);
  EXPECT_EQ(c.model.obs_dim, c.env.obs_dim());
  EXPECT_EQ(c.train.batch, 32u);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config("train.learning_rate = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("train.lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_config("train.batch = -3\n"), ConfigError);
  EXPECT_THROW(parse_config("just words\n"), ConfigError);
  EXPECT_THROW(parse_config("train.window = 4\ntrain.horizon = 5\n"), ConfigError);
  EXPECT_THROW(parse_config("train.negatives = 40\n"), ConfigError);
  EXPECT_THROW(parse_config("train.entropy_weight = -0.1\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/cfg.toml"), ConfigError);
}

TEST(Config, TextRoundTrip) {
  RunConfig c = small_run();
  c.train.lr = 1.0 / 3.0;
  c.train.seed = 123456789012345ULL;
  const RunConfig back = parse_config(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.train.lr, c.train.lr);
  EXPECT_EQ(back.train.seed, c.train.seed);
}

TEST(Config, TemperatureSchedule) {
  TrainConfig t;
  EXPECT_DOUBLE_EQ(t.tau_at(0), 1.0);
  EXPECT_DOUBLE_EQ(t.tau_at(20000), std::max(0.1, std::pow(0.999, 20000.0)));
  EXPECT_DOUBLE_EQ(t.tau_at(20000), 0.1);
  EXPECT_NEAR(t.tau_at(100), std::pow(0.999, 100.0), 1e-15);
  EXPECT_EQ(t.conscious_index(), 6u);
}

// ---- steps ------------------------------------------------------------------------------

TEST(TrainStep, LossCompositionIsExact) {
  RunConfig cfg = small_run();
  cfg.train.entropy_weight = 0.3;
  cfg.train.diversity_weight = 0.7;
  cfg.train.pred_weight = 1.3;
  cfg.train.nce_weight = 0.9;
  cfg.train.variance_weight = 0.05;
  ParameterStore store = initial_params(cfg);
  SeededRng rng(4);
  for (int step = 0; step < 5; ++step) {
    const LossBreakdown parts = train_step(store, cfg, sample_observations(cfg, 10 + step), rng, 0.5);
    EXPECT_NEAR(parts.total, parts.recomposed(cfg.train), 1e-9);
    EXPECT_GE(parts.nce, 0.0);
    EXPECT_GE(parts.pred, 0.0);
    EXPECT_LE(parts.ent, std::log(static_cast<double>(cfg.model.slots)) + 1e-12);
    EXPECT_LE(parts.div, std::log(static_cast<double>(cfg.model.slots)) + 1e-12);
    EXPECT_EQ(std::accumulate(parts.slot_usage.begin(), parts.slot_usage.end(), 0),
              static_cast<int>(cfg.train.batch * cfg.model.selected()));
  }
}

TEST(TrainStep, IdenticalInputsGiveIdenticalParameters) {
  const RunConfig cfg = small_run();
  const auto obs = sample_observations(cfg, 3);
  ParameterStore a = initial_params(cfg), b = initial_params(cfg);
  SeededRng ra(77), rb(77);
  for (int i = 0; i < 3; ++i) {
    const LossBreakdown pa = train_step(a, cfg, obs, ra, 0.7);
    const LossBreakdown pb = train_step(b, cfg, obs, rb, 0.7);
    EXPECT_EQ(pa.total, pb.total);
  }
  EXPECT_TRUE(a == b);
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
}

TEST(TrainStep, InitialGradientAndNceAtDefaults) {
  RunConfig cfg;
  cfg.train.buffer_episodes = 40;
  cfg.sync();
  ParameterStore store = initial_params(cfg);
  TrajectoryBuffer buffer(cfg.env, cfg.train.buffer_episodes, cfg.train.episode_length, 0);
  SeededRng batch(1), noise(2);
  double nce = 0.0;
  for (int step = 0; step < 10; ++step) {
    std::vector<Window> ws;
    for (std::size_t i = 0; i < cfg.train.batch; ++i)
      ws.push_back(buffer.sample_window(static_cast<std::size_t>(cfg.train.window), batch));
    const LossBreakdown parts = train_step(store, cfg, window_observations(buffer, ws), noise, cfg.train.tau_at(step));
    if (step == 0) {
      EXPECT_TRUE(std::isfinite(parts.grad_norm));
      EXPECT_GT(parts.grad_norm, 0.0);
    }
    nce += parts.nce;
  }
  EXPECT_NEAR(nce / 10.0, std::log(32.0), 0.5);
}

TEST(TrainStep, TargetsCarryNoGradient) {
  // The future state reaches the loss through the verifier and through the
  // target bins; only the verifier path may carry gradient into it.
  const RunConfig cfg = small_run();
  const ParameterStore store = initial_params(cfg);
  SeededRng rng(8);
  std::vector<NdArray> states;
  for (int s = 0; s < cfg.train.window; ++s) {
    NdArray h(Shape{cfg.train.batch, cfg.model.state_dim()});
    for (auto& x : h.values()) x = rng.uniform() * 2.0 - 1.0;
    states.push_back(std::move(h));
  }
  Tape t;
  std::vector<Var> vars;
  for (const auto& s : states) vars.push_back(t.input(s));
  SeededRng noise(1);
  StepGraph g = build_losses(t, store, cfg.model, cfg.train, vars, 0.5, noise);
  Var pred = prediction_loss(g.prediction, g.target_bins);
  t.backward(pred);
  const NdArray future_grad = t.grad(vars.back());
  for (double x : future_grad.values()) ASSERT_EQ(x, 0.0);
  // The same loss does reach the state C reads from.
  const NdArray c_grad = t.grad(vars[cfg.train.conscious_index()]);
  EXPECT_GT(std::abs(*std::max_element(c_grad.values().begin(), c_grad.values().end(),
                                       [](double a, double b) { return std::abs(a) < std::abs(b); })),
            0.0);

  // Perturbing the future readouts within their bins leaves every gradient of
  // the prediction loss unchanged.
  auto grads_with = [&](const std::vector<NdArray>& st) {
    Tape tt;
    std::vector<Var> vv;
    for (const auto& s : st) vv.push_back(tt.constant(s));
    SeededRng nn(1);
    StepGraph gg = build_losses(tt, store, cfg.model, cfg.train, vv, 0.5, nn);
    tt.backward(prediction_loss(gg.prediction, gg.target_bins));
    return std::make_pair(tt.parameter_grads(), gg.target_bins);
  };
  std::vector<NdArray> moved = states;
  for (std::size_t i = 0; i < cfg.train.batch; ++i)
    for (std::size_t d = 0; d < cfg.model.state_dim(); ++d)
      if (d % cfg.model.width != 0) moved.back().at(i, d) += 0.3;
  const auto [ga, ba] = grads_with(states);
  const auto [gb, bb] = grads_with(moved);
  ASSERT_EQ(ba, bb);
  for (const auto& [name, grad] : ga) ASSERT_TRUE(grad == gb.at(name)) << name;
}

TEST(TrainStep, LearnsSyntheticBinTask) {
  // Every slot holds the same per-row level and the future keeps it, so A's
  // future bin is a fixed function of the B values.
  ModelConfig m;
  m.slots = 6;
  m.width = 3;
  m.key_dim = 4;
  m.b_count = 2;
  m.bins = 16;
  m.score_hidden = 16;
  m.pred_hidden = 32;
  m.verify_hidden = 16;
  TrainConfig tc;
  tc.window = 3;
  tc.horizon = 1;
  tc.batch = 16;
  tc.negatives = 15;
  tc.entropy_weight = 0.0;
  tc.diversity_weight = 0.0;
  tc.adapt_readout_range = false;
  tc.lr = 3e-3;
  SeededRng init(5);
  ParameterStore store = init_params(m, init);
  SeededRng data(6), noise(7);
  const double levels[4] = {-0.75, -0.25, 0.25, 0.75};
  double recent = 0.0;
  for (int step = 0; step < 2000; ++step) {
    NdArray h(Shape{tc.batch, m.state_dim()});
    for (std::size_t i = 0; i < tc.batch; ++i) {
      const double level = levels[data.below(4)];
      for (std::size_t s = 0; s < m.slots; ++s) {
        h.at(i, s * m.width) = level;
        for (std::size_t d = 1; d < m.width; ++d) h.at(i, s * m.width + d) = 0.1 * normal(data);
      }
    }
    const std::vector<NdArray> states(static_cast<std::size_t>(tc.window), h);
    const LossBreakdown parts = train_step_states(store, m, tc, states, noise, 0.5);
    if (step >= 1900) recent += parts.pred / 100.0;
  }
  EXPECT_LT(recent, 0.3);
}

// ---- loop --------------------------------------------------------------------------------

TEST(Train, FixedSeedGivesIdenticalFiles) {
  const RunConfig cfg = small_run();
  const auto base = std::filesystem::temp_directory_path() / "cplab_train_det";
  std::filesystem::remove_all(base);
  const auto a = train(cfg, base / "a");
  const auto b = train(cfg, base / "b");
  EXPECT_EQ(slurp(a.metrics), slurp(b.metrics));
  EXPECT_EQ(slurp(a.loss_curve), slurp(b.loss_curve));
  EXPECT_EQ(slurp(a.final_checkpoint), slurp(b.final_checkpoint));
  EXPECT_TRUE(std::filesystem::exists(base / "a" / "ckpt_000002.bin"));
  EXPECT_TRUE(std::filesystem::exists(base / "a" / "ckpt_000004.bin"));

  std::ifstream in(a.metrics);
  std::string line;
  std::uint64_t rows = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<std::uint64_t>(), rows);
    for (const char* key : {"total", "nce", "pred", "ent", "div", "tau"}) EXPECT_TRUE(j.at(key).is_number());
    EXPECT_EQ(j.at("slot_usage").size(), cfg.model.slots);
    ++rows;
  }
  EXPECT_EQ(rows, cfg.train.steps);
  std::filesystem::remove_all(base);
}

TEST(Train, CheckpointRoundTripKeepsForwardBitIdentical) {
  const RunConfig cfg = small_run();
  ParameterStore store = initial_params(cfg);
  SeededRng rng(1);
  const auto obs = sample_observations(cfg, 2);
  train_step(store, cfg, obs, rng, 0.5);
  const auto path = std::filesystem::temp_directory_path() / "cplab_roundtrip.bin";
  save_checkpoint(store, path);
  const ParameterStore back = load_checkpoint(path);
  std::filesystem::remove(path);

  auto forward = [&](const ParameterStore& p) {
    Tape t;
    const NdArray h0(Shape{cfg.train.batch, cfg.model.state_dim()}, 0.0);
    auto states = encode_sequence(t, p, cfg.model, obs, t.constant(h0));
    NdArray noise(Shape{cfg.train.batch, cfg.model.slots}, 0.0);
    const ConsciousState c = conscious_step(t, p, cfg.model, states.back(),
                                            t.constant(NdArray(Shape{cfg.train.batch, cfg.model.content_dim()}, 0.0)),
                                            noise, 0.0);
    Var pred = predict(t, p, cfg.model, c);
    std::vector<double> out = values(pred);
    for (double x : values(verify_all_pairs(t, p, cfg.model, states.back(), c, pred))) out.push_back(x);
    return out;
  };
  EXPECT_EQ(forward(store), forward(back));
  EXPECT_EQ(serialize_checkpoint(store), serialize_checkpoint(back));
}
