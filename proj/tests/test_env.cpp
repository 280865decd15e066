#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "cplab/env.hpp"

using namespace cplab;

namespace {

WorldState single_pile(const EnvConfig& cfg, int height, int offset) {
  WorldState s;
  Pile p;
  p.column = cfg.pile_column(0);
  p.height = height;
  p.offset = offset;
  s.piles.push_back(p);
  return s;
}

double monte_carlo_fall(const EnvConfig& cfg, const WorldState& s, int pile, int horizon, int rollouts,
                        SeededRng& rng) {
  int hits = 0;
  for (int r = 0; r < rollouts; ++r) {
    WorldState cur = s;
    for (int k = 0; k < horizon; ++k) cur = step(cfg, cur, rng).state;
    hits += cur.piles[static_cast<std::size_t>(pile)].status != PileStatus::kStanding;
  }
  return static_cast<double>(hits) / rollouts;
}

}  // namespace

TEST(EnvConfig, Validation) {
  EnvConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EnvConfig small = cfg;
  small.grid = 7;  // < 2*3 + 2
  EXPECT_THROW(small.validate(), ConfigError);
  EnvConfig probs = cfg;
  probs.nudge_probs = {0.5, 0.5, 0.1};
  EXPECT_THROW(probs.validate(), ConfigError);
  EnvConfig theta = cfg;
  theta.fall_threshold = 0;
  EXPECT_THROW(theta.validate(), ConfigError);
}

TEST(Reset, DeterministicAndValid) {
  EnvConfig cfg;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SeededRng a(seed), b(seed);
    const WorldState s = reset(cfg, a);
    EXPECT_EQ(s, reset(cfg, b));
    ASSERT_EQ(s.piles.size(), 3u);
    EXPECT_EQ(s.distractors.size(), 4u);
    for (const Pile& p : s.piles) {
      EXPECT_EQ(p.status, PileStatus::kStanding);
      EXPECT_LE(std::abs(p.offset) * p.height, cfg.fall_threshold);
    }
  }
}

TEST(Reset, InfeasibleDistractorPlacementIsRejected) {
  EnvConfig cfg;
  cfg.grid = 8;
  cfg.distractors = 70;  // more than the free cells
  SeededRng rng(1);
  EXPECT_THROW(reset(cfg, rng), std::runtime_error);
}

TEST(Step, NudgePastThresholdEmitsFell) {
  EnvConfig cfg;
  cfg.piles = 1;
  cfg.grid = 6;
  cfg.distractors = 0;
  cfg.nudge_probs = {0.0, 0.0, 1.0};  // always +1
  WorldState s = single_pile(cfg, 3, 1);
  SeededRng rng(4);
  StepResult r = step(cfg, s, rng);
  EXPECT_EQ(r.state.piles[0].offset, 2);
  EXPECT_EQ(r.state.piles[0].status, PileStatus::kScattering);
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0].pile, 0);
  EXPECT_EQ(r.events[0].step, 1u);
}

TEST(Step, HeightOnePileNeverFalls) {
  EnvConfig cfg;
  cfg.piles = 1;
  cfg.grid = 6;
  cfg.distractors = 0;
  WorldState s = single_pile(cfg, 1, 0);
  SeededRng rng(9);
  for (int i = 0; i < 500; ++i) {
    StepResult r = step(cfg, s, rng);
    EXPECT_TRUE(r.events.empty());
    s = r.state;
  }
  EXPECT_EQ(s.piles[0].status, PileStatus::kStanding);
}

TEST(Step, InvariantsAndAbsorbingFalls) {
  EnvConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SeededRng rng(seed);
    Trajectory traj = sample_trajectory(cfg, rng, 100);
    std::set<int> fell;
    for (const auto& e : traj.events) EXPECT_TRUE(fell.insert(e.pile).second) << "second fell event";
    for (const auto& s : traj.states) {
      for (const Pile& p : s.piles) {
        if (p.status == PileStatus::kStanding) EXPECT_LE(std::abs(p.offset) * p.height, cfg.fall_threshold);
        if (p.status == PileStatus::kScattering) {
          EXPECT_GE(p.t_remaining, 1);
          EXPECT_LE(p.t_remaining, cfg.scatter_steps);
        }
      }
    }
  }
}

TEST(Step, FixedSeedEventLogIsReproducible) {
  EnvConfig cfg;
  SeededRng a(77), b(77);
  EXPECT_EQ(sample_trajectory(cfg, a, 100).events, sample_trajectory(cfg, b, 100).events);
}

TEST(Render, EmptyWorldIsAllEmpty) {
  EnvConfig cfg;
  const NdArray obs = render(cfg, WorldState{});
  for (std::size_t cell = 0; cell < 144; ++cell)
    for (std::size_t ch = 0; ch < cfg.channels(); ++ch)
      EXPECT_EQ(obs[cell * cfg.channels() + ch], ch == kEmpty ? 1.0 : 0.0);
}

TEST(Render, SubThresholdOffsetIsInvisible) {
  EnvConfig cfg;
  cfg.piles = 1;
  cfg.grid = 6;
  cfg.distractors = 0;
  EXPECT_EQ(render(cfg, single_pile(cfg, 2, 1)), render(cfg, single_pile(cfg, 2, 0)));
  EXPECT_EQ(render(cfg, single_pile(cfg, 2, -1)), render(cfg, single_pile(cfg, 2, 0)));
  EXPECT_NE(render(cfg, single_pile(cfg, 2, 2)), render(cfg, single_pile(cfg, 2, 0)));
  EXPECT_NE(render(cfg, single_pile(cfg, 2, -2)), render(cfg, single_pile(cfg, 2, 2)));
}

TEST(Render, PureAndOneHot) {
  EnvConfig cfg;
  SeededRng rng(5);
  Trajectory traj = sample_trajectory(cfg, rng, 40);
  for (const auto& s : traj.states) {
    const NdArray a = render(cfg, s);
    EXPECT_EQ(a, render(cfg, s));
    for (std::size_t cell = 0; cell < 144; ++cell) {
      double active = 0;
      for (std::size_t ch = 0; ch < cfg.channels(); ++ch) active += a[cell * cfg.channels() + ch];
      EXPECT_EQ(active, 1.0);
    }
  }
}

TEST(Oracle, HorizonZero) {
  EnvConfig cfg;
  SeededRng rng(3);
  WorldState s = reset(cfg, rng);
  EXPECT_EQ(oracle_fall_prob(cfg, s, 0, 0), 0.0);
  s.piles[1].status = PileStatus::kSettled;
  EXPECT_EQ(oracle_fall_prob(cfg, s, 1, 0), 1.0);
  EXPECT_EQ(oracle_event_prob(cfg, s, 1, 3), 0.0);
}

TEST(Oracle, TwoStepSinglePileMatchesNinePathEnumeration) {
  EnvConfig cfg;
  cfg.piles = 1;
  cfg.grid = 6;
  cfg.fall_threshold = 3;
  cfg.distractors = 0;
  const WorldState s = single_pile(cfg, 2, 0);
  // Independent brute force over the 9 nudge pairs.
  int falling = 0;
  for (int a : kNudges)
    for (int b : kNudges) {
      const int o1 = a, o2 = a + b;
      falling += (std::abs(o1) * 2 > 3) || (std::abs(o2) * 2 > 3);
    }
  EXPECT_EQ(falling, 2);
  EXPECT_NEAR(oracle_fall_prob(cfg, s, 0, 2), 2.0 / 9.0, 1e-15);
}

TEST(Oracle, MonotoneInHorizon) {
  EnvConfig cfg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SeededRng rng(seed);
    const WorldState s = reset(cfg, rng);
    for (int p = 0; p < cfg.piles; ++p) {
      double prev = 0.0;
      for (int k = 0; k <= 6; ++k) {
        const double q = oracle_fall_prob(cfg, s, p, k);
        EXPECT_GE(q, prev - 1e-15);
        EXPECT_GE(q, 0.0);
        EXPECT_LE(q, 1.0);
        prev = q;
      }
    }
  }
}

TEST(Oracle, PathGuard) {
  EnvConfig cfg;
  SeededRng rng(1);
  const WorldState s = reset(cfg, rng);
  EXPECT_THROW(oracle_fall_prob(cfg, s, 0, 8), std::length_error);  // 9^8 > 1e7
  EXPECT_NO_THROW(oracle_fall_prob(cfg, s, 0, 7));
}

TEST(Oracle, AgreesWithMonteCarlo) {
  EnvConfig cfg;
  SeededRng states_rng(123), mc(456);
  const int rollouts = 20000;
  for (int i = 0; i < 5; ++i) {
    Trajectory traj = sample_trajectory(cfg, states_rng, 8);
    const WorldState& s = traj.states.back();
    for (int p = 0; p < cfg.piles; ++p) {
      const double exact = oracle_fall_prob(cfg, s, p, 5);
      const double freq = monte_carlo_fall(cfg, s, p, 5, rollouts, mc);
      EXPECT_LE(std::abs(exact - freq), 3.0 * std::sqrt(exact * (1 - exact) / rollouts) + 1e-3)
          << "state " << i << " pile " << p;
    }
  }
}

TEST(Trajectory, LengthAndEventConsistency) {
  EnvConfig cfg;
  SeededRng rng(10);
  Trajectory traj = sample_trajectory(cfg, rng, 50);
  EXPECT_EQ(traj.length(), 50u);
  EXPECT_EQ(traj.states.size(), 50u);
  for (const auto& e : traj.events) {
    ASSERT_GE(e.step, 1u);
    const auto& before = traj.states[e.step - 1].piles[static_cast<std::size_t>(e.pile)];
    const auto& after = traj.states[e.step].piles[static_cast<std::size_t>(e.pile)];
    EXPECT_EQ(before.status, PileStatus::kStanding);
    EXPECT_EQ(after.status, PileStatus::kScattering);
  }
  // Every standing-to-scattering transition is logged.
  for (std::size_t t = 1; t < traj.length(); ++t)
    for (int p = 0; p < cfg.piles; ++p) {
      const bool transitioned = traj.states[t - 1].piles[p].status == PileStatus::kStanding &&
                                traj.states[t].piles[p].status != PileStatus::kStanding;
      EXPECT_EQ(transitioned, traj.falls_within(t - 1, p, 1));
    }
}

TEST(Trajectory, DifferentSeedsGiveDifferentEventLogs) {
  EnvConfig cfg;
  int differing = 0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    SeededRng a(1000 + 2 * i), b(1001 + 2 * i);
    differing += sample_trajectory(cfg, a, 64).events != sample_trajectory(cfg, b, 64).events;
  }
  EXPECT_EQ(differing, 10);
}

TEST(Trajectory, JsonlDump) {
  EnvConfig cfg;
  SeededRng rng(2);
  Trajectory traj = sample_trajectory(cfg, rng, 5);
  const std::string dump = trajectory_jsonl(traj);
  std::size_t lines = 0, pos = 0;
  while ((pos = dump.find('\n', pos)) != std::string::npos) ++lines, ++pos;
  EXPECT_EQ(lines, 5u);
  auto first = nlohmann::json::parse(dump.substr(0, dump.find('\n')));
  EXPECT_EQ(first["t"], 0);
  EXPECT_EQ(first["obs"].size(), cfg.obs_dim());
  EXPECT_EQ(first["truth"]["piles"].size(), 3u);
}
