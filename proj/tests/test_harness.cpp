#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "cplab/harness.hpp"
#include "cplab/training.hpp"

using namespace cplab;

namespace {

std::vector<std::size_t> permutation(SeededRng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

std::vector<int> coin_labels(SeededRng& rng, std::size_t n, double p = 0.5) {
  std::vector<int> y(n);
  for (auto& v : y) v = rng.uniform() < p;
  return y;
}

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
  c.eval.episode_length = 24;
  c.eval.baseline_hidden = 16;
  c.eval.baseline_steps = 3;
  c.eval.baseline_batch = 4;
  c.eval.baseline_rollouts = 8;
  c.sync();
  c.validate();
  return c;
}

StatementRecord record(double score, bool correct) {
  StatementRecord r;
  r.argmax = 3;
  r.resolved_bin = correct ? 3 : 4;
  r.verifier_score = score;
  return r;
}

}  // namespace

// ---- AUC ----

TEST(Auc, PerfectFeatureIsOne) {
  SeededRng rng(1);
  const auto y = coin_labels(rng, 400);
  std::vector<double> s(y.begin(), y.end());
  EXPECT_DOUBLE_EQ(auc(s, y), 1.0);
  for (auto& v : s) v = -v;
  EXPECT_DOUBLE_EQ(auc(s, y), 0.0);
}

TEST(Auc, IndependentScoresNearHalf) {
  SeededRng rng(2);
  const auto y = coin_labels(rng, 4000);
  std::vector<double> s(y.size());
  for (auto& v : s) v = rng.uniform();
  const double a = auc(s, y);
  EXPECT_GE(a, 0.45);
  EXPECT_LE(a, 0.55);
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  SeededRng rng(3);
  const auto y = coin_labels(rng, 500);
  std::vector<double> s(y.size()), g(y.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.uniform() + 0.3 * y[i];
    g[i] = std::exp(3.0 * s[i]) - 7.0;
  }
  EXPECT_NEAR(auc(s, y), auc(g, y), 1e-12);
}

TEST(Auc, AllTiesIsHalf) {
  SeededRng rng(4);
  const auto y = coin_labels(rng, 300);
  const std::vector<double> s(y.size(), 0.25);
  EXPECT_DOUBLE_EQ(auc(s, y), 0.5);
}

TEST(Auc, MatchesPairCount) {
  SeededRng rng(5);
  const auto y = coin_labels(rng, 120, 0.3);
  std::vector<double> s(y.size());
  for (auto& v : s) v = std::floor(rng.uniform() * 6.0);
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  EXPECT_NEAR(auc(s, y), wins / pairs, 1e-12);
}

TEST(Auc, SingleClassThrows) {
  const std::vector<double> s = {0.1, 0.2};
  const std::vector<int> y = {1, 1};
  EXPECT_THROW(auc(s, y), std::invalid_argument);
}

// ---- mutual information ----

TEST(MutualInformation, SelfIsEntropy) {
  SeededRng rng(6);
  std::vector<double> x(3000);
  for (auto& v : x) v = rng.uniform() * rng.uniform();
  const auto codes = uniform_bins(x, 16);
  EXPECT_NEAR(mutual_information(x, x, 16), plugin_entropy(codes), 1e-12);
  EXPECT_NEAR(mutual_information(codes, codes), plugin_entropy(codes), 1e-12);
}

TEST(MutualInformation, UniformEntropyIsLogBins) {
  std::vector<std::size_t> codes(1600);
  for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = i % 16;
  EXPECT_NEAR(plugin_entropy(codes), std::log(16.0), 1e-12);
}

TEST(MutualInformation, IndependentIsSmall) {
  SeededRng rng(7);
  std::vector<double> x(10000), y(10000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(), y[i] = rng.uniform();
  const double mi = mutual_information(x, y, 16);
  EXPECT_GE(mi, 0.0);
  EXPECT_LT(mi, 0.05);
}

TEST(MutualInformation, Symmetric) {
  SeededRng rng(8);
  std::vector<double> x(2500), y(2500);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.uniform();
    y[i] = x[i] * x[i] + 0.2 * rng.uniform();
  }
  EXPECT_NEAR(mutual_information(x, y, 16), mutual_information(y, x, 16), 1e-12);
}

TEST(MutualInformation, TooFewSamplesThrows) {
  const std::vector<double> x(100, 0.0);
  EXPECT_THROW(mutual_information(x, x, 16), std::invalid_argument);
}

// ---- statements ----

TEST(Statements, ConstantScoreIsHalf) {
  SeededRng rng(9);
  std::vector<StatementRecord> r;
  for (int i = 0; i < 500; ++i) r.push_back(record(1.0, rng.uniform() < 0.4));
  EXPECT_DOUBLE_EQ(resolve_statements(r).auc, 0.5);
}

TEST(Statements, TruthIndicatorIsOne) {
  SeededRng rng(10);
  std::vector<StatementRecord> r;
  for (int i = 0; i < 500; ++i) {
    const bool c = rng.uniform() < 0.4;
    r.push_back(record(c ? 1.0 : 0.0, c));
  }
  const auto res = resolve_statements(r);
  EXPECT_DOUBLE_EQ(res.auc, 1.0);
  EXPECT_EQ(res.resolved, 500u);
  EXPECT_EQ(res.correct, static_cast<std::size_t>(std::count_if(r.begin(), r.end(), [](const auto& x) {
              return x.resolved_bin == x.argmax;
            })));
}

TEST(Statements, ShuffledScoresNearHalf) {
  SeededRng rng(11);
  std::vector<double> truth_scores;
  std::vector<bool> truth;
  for (int i = 0; i < 1000; ++i) {
    truth.push_back(rng.uniform() < 0.5);
    truth_scores.push_back(truth.back() ? 1.0 + rng.uniform() : rng.uniform());
  }
  const auto perm = permutation(rng, truth.size());
  std::vector<StatementRecord> r;
  for (std::size_t i = 0; i < truth.size(); ++i) r.push_back(record(truth_scores[perm[i]], truth[i]));
  const double a = resolve_statements(r).auc;
  EXPECT_GE(a, 0.45);
  EXPECT_LE(a, 0.55);
}

TEST(Statements, UnresolvedSkippedAndCounted) {
  std::vector<StatementRecord> r;
  for (int i = 0; i < 300; ++i) r.push_back(record(i % 2, i % 2 == 1));
  for (int i = 0; i < 7; ++i) {
    r.push_back(record(0.0, false));
    r.back().resolved_bin.reset();
  }
  const auto res = resolve_statements(r);
  EXPECT_EQ(res.resolved, 300u);
  EXPECT_EQ(res.skipped, 7u);
}

TEST(Statements, TooFewResolvedThrows) {
  std::vector<StatementRecord> r;
  for (int i = 0; i < 199; ++i) r.push_back(record(i, i % 2 == 0));
  EXPECT_THROW(resolve_statements(r), std::invalid_argument);
}

TEST(Statements, TsvHasNineFields) {
  StatementRecord r = record(0.5, true);
  r.b_slots = {1, 2};
  r.utterance = "slot 3 will be in bin 3";
  const std::string line = r.tsv();
  EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 8);
}

// ---- probes ----

TEST(Probe, SeparableFeaturesScoreHigh) {
  SeededRng rng(12);
  const std::size_t n = 800;
  const auto y = coin_labels(rng, n);
  NdArray x(Shape{n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    x.at(i, 0) = (y[i] ? 1.0 : -1.0) + 0.3 * (rng.uniform() - 0.5);
    x.at(i, 1) = rng.uniform();
    x.at(i, 2) = 100.0 * rng.uniform();
  }
  const auto r = probe_outcome(x, y, EvalConfig{}, 1);
  EXPECT_GT(r.auc, 0.99);
  EXPECT_GT(r.accuracy, 0.95);
  EXPECT_EQ(r.n, n);
  EXPECT_EQ(r.n_test, n - static_cast<std::size_t>(0.7 * n));
}

TEST(Probe, NoiseFeaturesNearHalf) {
  SeededRng rng(13);
  const std::size_t n = 2000;
  const auto y = coin_labels(rng, n);
  NdArray x(Shape{n, 4});
  for (auto& v : x.values()) v = rng.uniform();
  const auto r = probe_outcome(x, y, EvalConfig{}, 1);
  EXPECT_GE(r.auc, 0.42);
  EXPECT_LE(r.auc, 0.58);
}

TEST(Probe, RejectsBadInputs) {
  SeededRng rng(14);
  NdArray small(Shape{100, 2}, 0.5);
  EXPECT_THROW(probe_outcome(small, coin_labels(rng, 100), EvalConfig{}, 1), std::invalid_argument);
  NdArray x(Shape{600, 2}, 0.5);
  const std::vector<int> one_class(600, 1);
  EXPECT_THROW(probe_outcome(x, one_class, EvalConfig{}, 1), std::invalid_argument);
  EXPECT_THROW(probe_outcome(x, coin_labels(rng, 599), EvalConfig{}, 1), std::invalid_argument);
}

TEST(Probe, SlotFeaturesLayout) {
  ModelConfig m;
  m.slots = 4;
  m.width = 2;
  const std::vector<double> h = {1, 2, 3, 4, 5, 6, 7, 8};
  const std::vector<std::size_t> slots = {2, 0};
  const auto f = slot_features(m, h, slots);
  const std::vector<double> want = {1, 2, 0, 0, 5, 6, 0, 0, 1, 0, 1, 0};
  EXPECT_EQ(f, want);
}

// ---- evaluation data ----

TEST(Eval, CollectCoversEveryWindow) {
  RunConfig cfg = small_run();
  cfg.eval.episodes = 5;
  SeededRng rng(15);
  const ParameterStore p = init_params(cfg.model, rng);
  const EvalData d = collect_eval(p, cfg, 3);
  const std::size_t tc = cfg.train.conscious_index(), w = static_cast<std::size_t>(cfg.train.window);
  const std::size_t per_episode = cfg.eval.episode_length - (w - tc) + 1 - tc;
  EXPECT_EQ(d.samples.size(), cfg.eval.episodes * per_episode);
  EXPECT_EQ(d.statements.size(), d.samples.size());
  for (const auto& s : d.samples) {
    EXPECT_EQ(s.selected.size(), cfg.model.selected());
    EXPECT_EQ(s.h.size(), cfg.model.state_dim());
    for (std::size_t k = 0; k < s.labels.size(); ++k)
      if (!s.standing[k]) {
        EXPECT_EQ(s.labels[k], 0);
        EXPECT_EQ(s.oracle[k], 0.0);
      }
  }
  for (const auto& r : d.statements) {
    ASSERT_TRUE(r.resolved_bin.has_value());
    EXPECT_LT(*r.resolved_bin, cfg.model.bins);
    EXPECT_TRUE(std::isfinite(r.verifier_score));
  }
}

TEST(Eval, EpisodesDisjointFromTraining) {
  const RunConfig cfg = small_run();
  const Trajectory a = eval_episode(cfg, cfg.train.seed, 0);
  const Trajectory b = make_episode(cfg.env, cfg.train.seed, 0, cfg.eval.episode_length);
  EXPECT_NE(a.observations[0].values(), b.observations[0].values());
}

// ---- pixel baseline ----

TEST(Baseline, CellDistributionsSumToOne) {
  const RunConfig cfg = small_run();
  SeededRng rng(16);
  const BaselineModel m = init_baseline(cfg, rng);
  const Trajectory ep = make_episode(cfg.env, 1, 0, 4);
  NdArray z(Shape{1, m.hidden}, 0.0), next;
  const NdArray probs = baseline_forward(m, ep.observations[0].reshaped(Shape{1, cfg.env.obs_dim()}), z, &next);
  ASSERT_EQ(probs.dim(1), m.cells);
  for (std::size_t c = 0; c < m.cells; ++c) {
    double total = 0.0;
    for (std::size_t k = 0; k < m.channels; ++k) total += probs.values()[c * m.channels + k];
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  EXPECT_EQ(next.dim(1), m.hidden);
}

TEST(Baseline, TrainingLowersLossAndRolloutsAreDeterministic) {
  RunConfig cfg = small_run();
  cfg.eval.baseline_steps = 60;
  cfg.eval.baseline_lr = 3e-3;
  SeededRng init(17);
  BaselineModel m = init_baseline(cfg, init);
  const auto losses = train_baseline(m, cfg);
  ASSERT_EQ(losses.size(), 60u);
  EXPECT_LT(losses.back(), losses.front());
  const Trajectory ep = make_episode(cfg.env, 5, 0, 20);
  SeededRng r1(3), r2(3);
  const auto a = baseline_event_scores(m, cfg, ep, 8, r1);
  const auto b = baseline_event_scores(m, cfg, ep, 8, r2);
  EXPECT_EQ(a, b);
  for (std::size_t p = 0; p < a.size(); ++p) {
    EXPECT_GE(a[p], 0.0);
    EXPECT_LE(a[p], 1.0);
    if (ep.states[8].piles[p].status != PileStatus::kStanding) {
      EXPECT_EQ(a[p], 0.0);
    }
  }
}

TEST(Baseline, UntrainedModelIsUninformative) {
  RunConfig cfg = small_run();
  cfg.env.grid = 6;
  cfg.env.piles = 1;
  cfg.env.distractors = 1;
  cfg.sync();
  SeededRng init(18);
  const BaselineModel m = init_baseline(cfg, init);
  std::vector<double> scores;
  std::vector<int> labels;
  SeededRng rng(19);
  for (std::uint64_t e = 0; e < 60; ++e) {
    const Trajectory ep = make_episode(cfg.env, 21, e, 20);
    for (std::size_t t = 6; t + 3 < 20; t += 2) {
      if (ep.states[t].piles[0].status != PileStatus::kStanding) continue;
      scores.push_back(baseline_event_scores(m, cfg, ep, t, rng)[0]);
      labels.push_back(ep.falls_within(t, 0, cfg.train.horizon));
    }
  }
  ASSERT_GT(std::count(labels.begin(), labels.end(), 1), 10);
  const double a = auc(scores, labels);
  EXPECT_GE(a, 0.4);
  EXPECT_LE(a, 0.6);
}

// ---- reports ----

TEST(Report, EndToEndFilesOnSmallRun) {
  RunConfig cfg = small_run();
  cfg.eval.episodes = 100;
  cfg.eval.episode_length = 32;
  SeededRng rng(20);
  const ParameterStore p = init_params(cfg.model, rng);
  EvalOptions opt;
  opt.baseline = false;
  EvalData data;
  const EvalReport r = evaluate(p, cfg, 4, opt, &data);
  EXPECT_GE(r.mi.n, kMinMiSamples);
  EXPECT_EQ(r.mi.mi.size(), cfg.model.slots);
  double freq = 0.0;
  for (double f : r.mi.selection_frequency) freq += f;
  EXPECT_NEAR(freq, 1.0, 1e-12);
  for (const auto& row : r.mi.mi)
    for (double v : row) EXPECT_GE(v, 0.0);
  for (const auto* s : {&r.conscious, &r.full_h, &r.random_k, &r.oracle}) {
    EXPECT_GE(s->auc, 0.0);
    EXPECT_LE(s->auc, 1.0);
  }
  // The exact event probability ranks the realized events well.
  EXPECT_GT(r.oracle.auc, 0.7);

  const auto dir = std::filesystem::temp_directory_path() / "cplab_report_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const std::vector<EvalReport> reports = {r};
  write_report(dir, reports, data.statements);
  for (const char* f : {"report.json", "auc_by_seed.csv", "mi_matrix.csv", "statements.tsv"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  std::ifstream in(dir / "report.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_TRUE(j.contains("seeds"));
  std::filesystem::remove_all(dir);
}

// ---- gradient suite ----

TEST(GradientSuite, AllEntriesPass) {
  ModelConfig m;
  m.obs_dim = 10;
  m.slots = 4;
  m.width = 3;
  m.key_dim = 4;
  m.b_count = 1;
  m.bins = 5;
  m.enc_hidden = 6;
  m.enc_out = 5;
  m.score_hidden = 5;
  m.pred_hidden = 5;
  m.verify_hidden = 5;
  const auto entries = gradient_suite(m, 3, 3, 6);
  EXPECT_GT(entries.size(), 20u);
  for (const auto& e : entries) {
    EXPECT_TRUE(e.pass()) << e.name << " max error " << e.max_error;
    EXPECT_EQ(e.points, 3u) << e.name;
  }
}
