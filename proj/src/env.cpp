#include "cplab/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace cplab {

const char* status_name(PileStatus s) {
  switch (s) {
    case PileStatus::kStanding: return "standing";
    case PileStatus::kScattering: return "scattering";
    case PileStatus::kSettled: return "settled";
  }
  return "?";
}

void EnvConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("env config: " + m); };
  if (piles < 1) fail("piles must be >= 1");
  if (grid < 2 * piles + 2) fail("grid must be >= 2*piles + 2");
  if (max_height < 1 || max_height >= grid) fail("max_height must lie in [1, grid)");
  if (offset_bound < 0) fail("offset_bound must be >= 0");
  if (fall_threshold < 1) fail("fall_threshold must be >= 1");
  double total = 0.0;
  for (double p : nudge_probs) {
    if (p < 0.0) fail("nudge probabilities must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) fail("nudge probabilities must sum to 1");
  if (distractors < 0) fail("distractors must be >= 0");
  if (colors < 1) fail("colors must be >= 1");
  if (scatter_steps < 1) fail("scatter_steps must be >= 1");
  if (lean_threshold < 1) fail("lean_threshold must be >= 1");
}

bool pile_falls(const EnvConfig& cfg, int height, int offset) {
  return std::abs(offset) * height > cfg.fall_threshold;
}

namespace {

constexpr int kMaxAttempts = 1000;

// Cell occupancy: standing pile cells, fallen blocks and distractors.
std::vector<char> occupancy(const EnvConfig& cfg, const WorldState& s) {
  std::vector<char> occ(static_cast<std::size_t>(cfg.grid * cfg.grid), 0);
  auto mark = [&](Cell c) { occ[static_cast<std::size_t>(c.row * cfg.grid + c.col)] = 1; };
  for (const Pile& p : s.piles) {
    if (p.status == PileStatus::kStanding)
      for (int h = 0; h < p.height; ++h) mark({cfg.grid - 1 - h, p.column});
    else
      for (Cell c : p.blocks) mark(c);
  }
  for (const Distractor& d : s.distractors) mark(d.cell);
  return occ;
}

Cell random_empty_cell(const EnvConfig& cfg, std::vector<char>& occ, SeededRng& rng) {
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const int idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.grid * cfg.grid)));
    if (!occ[static_cast<std::size_t>(idx)]) {
      occ[static_cast<std::size_t>(idx)] = 1;
      return {idx / cfg.grid, idx % cfg.grid};
    }
  }
  throw std::runtime_error("env: no empty cell found after 1000 attempts");
}

}  // namespace

WorldState reset(const EnvConfig& cfg, SeededRng& rng) {
  cfg.validate();
  WorldState s;
  int attempts = 0;
  for (int i = 0; i < cfg.piles; ++i) {
    Pile p;
    p.column = cfg.pile_column(i);
    for (;;) {
      if (++attempts > kMaxAttempts)
        throw std::runtime_error("reset: could not place standing piles after 1000 attempts");
      p.height = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_height)));
      p.offset = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * cfg.offset_bound + 1))) -
                 cfg.offset_bound;
      if (!pile_falls(cfg, p.height, p.offset)) break;
    }
    s.piles.push_back(p);
  }
  auto occ = occupancy(cfg, s);
  for (int i = 0; i < cfg.distractors; ++i) {
    Distractor d;
    try {
      d.cell = random_empty_cell(cfg, occ, rng);
    } catch (const std::runtime_error&) {
      throw std::runtime_error("reset: could not place distractors after 1000 attempts");
    }
    d.color = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.colors)));
    s.distractors.push_back(d);
  }
  return s;
}

StepResult step(const EnvConfig& cfg, const WorldState& state, SeededRng& rng) {
  StepResult r{state, {}};
  WorldState& s = r.state;
  s.step += 1;

  // Piles already in the air keep scattering.
  for (Pile& p : s.piles) {
    if (p.status != PileStatus::kScattering) continue;
    p.blocks.clear();
    auto occ = occupancy(cfg, s);
    for (int b = 0; b < p.height; ++b) p.blocks.push_back(random_empty_cell(cfg, occ, rng));
    if (--p.t_remaining == 0) p.status = PileStatus::kSettled;
  }

  // Distractors: random walk over {stay, up, down, left, right}, blocked moves stay.
  static constexpr int kMoves[5][2] = {{0, 0}, {-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  for (std::size_t i = 0; i < s.distractors.size(); ++i) {
    const auto& mv = kMoves[rng.below(5)];
    const int delta = static_cast<int>(rng.below(3)) - 1;
    Distractor& d = s.distractors[i];
    d.color = ((d.color + delta) % cfg.colors + cfg.colors) % cfg.colors;
    const Cell to{d.cell.row + mv[0], d.cell.col + mv[1]};
    if (to.row < 0 || to.row >= cfg.grid || to.col < 0 || to.col >= cfg.grid) continue;
    if (to == d.cell) continue;
    auto occ = occupancy(cfg, s);
    if (occ[static_cast<std::size_t>(to.row * cfg.grid + to.col)]) continue;
    d.cell = to;
  }

  // One nudge to one pile.
  const int target = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.piles)));
  const int nudge = kNudges[rng.categorical(cfg.nudge_probs)];
  Pile& p = s.piles[static_cast<std::size_t>(target)];
  if (p.status == PileStatus::kStanding) {
    p.offset = std::clamp(p.offset + nudge, -cfg.offset_bound, cfg.offset_bound);
    if (pile_falls(cfg, p.height, p.offset)) {
      p.status = PileStatus::kScattering;
      p.t_remaining = cfg.scatter_steps;
      p.blocks.clear();
      auto occ = occupancy(cfg, s);
      for (int b = 0; b < p.height; ++b) p.blocks.push_back(random_empty_cell(cfg, occ, rng));
      r.events.push_back(EventRecord{s.step, target, "fell"});
    }
  }
  return r;
}

NdArray render(const EnvConfig& cfg, const WorldState& s) {
  const std::size_t g = static_cast<std::size_t>(cfg.grid), c = cfg.channels();
  std::vector<int> chan(g * g, kEmpty);
  for (const Pile& p : s.piles) {
    if (p.status == PileStatus::kStanding) {
      int ch = kBlock;
      if (p.offset <= -cfg.lean_threshold) ch = kLeanLeft;
      if (p.offset >= cfg.lean_threshold) ch = kLeanRight;
      for (int h = 0; h < p.height; ++h)
        chan[static_cast<std::size_t>((cfg.grid - 1 - h) * cfg.grid + p.column)] = ch;
    } else {
      for (Cell b : p.blocks) chan[static_cast<std::size_t>(b.row * cfg.grid + b.col)] = kBlock;
    }
  }
  for (const Distractor& d : s.distractors)
    chan[static_cast<std::size_t>(d.cell.row * cfg.grid + d.cell.col)] = kDistractor0 + d.color;
  NdArray obs(Shape{g, g, c}, 0.0);
  for (std::size_t i = 0; i < g * g; ++i) obs[i * c + static_cast<std::size_t>(chan[i])] = 1.0;
  return obs;
}

// ---- oracle --------------------------------------------------------------------

namespace {

struct Enumerator {
  const EnvConfig& cfg;
  int pile;
  int height;
  double choice_prob;

  // Probability mass of paths from (offset, depth) on which the pile falls.
  double run(int offset, int depth) const {
    if (depth == 0) return 0.0;
    double total = 0.0;
    for (int choice = 0; choice < cfg.piles; ++choice) {
      for (std::size_t n = 0; n < kNudges.size(); ++n) {
        const double w = choice_prob * cfg.nudge_probs[n];
        if (choice != pile) {
          total += w * run(offset, depth - 1);
          continue;
        }
        const int next = std::clamp(offset + kNudges[n], -cfg.offset_bound, cfg.offset_bound);
        total += w * (pile_falls(cfg, height, next) ? 1.0 : run(next, depth - 1));
      }
    }
    return total;
  }
};

}  // namespace

double oracle_fall_prob(const EnvConfig& cfg, const WorldState& state, int pile, int horizon) {
  if (pile < 0 || pile >= static_cast<int>(state.piles.size()))
    throw std::out_of_range("oracle: pile id " + std::to_string(pile) + " out of range");
  if (horizon < 0) throw std::invalid_argument("oracle: horizon must be >= 0");
  const double paths = std::pow(static_cast<double>(cfg.piles) * kNudges.size(), horizon);
  if (paths > kOraclePathLimit)
    throw std::length_error("oracle: " + std::to_string(paths) +
                            " paths exceed the enumeration limit; lower the horizon");
  const Pile& p = state.piles[static_cast<std::size_t>(pile)];
  if (p.status != PileStatus::kStanding) return 1.0;
  Enumerator e{cfg, pile, p.height, 1.0 / cfg.piles};
  return e.run(p.offset, horizon);
}

double oracle_event_prob(const EnvConfig& cfg, const WorldState& state, int pile, int horizon) {
  if (state.piles.at(static_cast<std::size_t>(pile)).status != PileStatus::kStanding) return 0.0;
  return oracle_fall_prob(cfg, state, pile, horizon);
}

// ---- trajectories -----------------------------------------------------------------

bool Trajectory::falls_within(std::size_t t, int pile, int horizon) const {
  const std::uint64_t lo = states.at(t).step;
  for (const auto& e : events)
    if (e.pile == pile && e.step > lo && e.step <= lo + static_cast<std::uint64_t>(horizon)) return true;
  return false;
}

Trajectory sample_trajectory(const EnvConfig& cfg, SeededRng& rng, std::size_t length) {
  if (length == 0) throw std::invalid_argument("sample_trajectory: length must be >= 1");
  Trajectory traj;
  WorldState s = reset(cfg, rng);
  const std::size_t dim = cfg.obs_dim();
  for (std::size_t t = 0; t < length; ++t) {
    if (t > 0) {
      StepResult r = step(cfg, s, rng);
      s = std::move(r.state);
      traj.events.insert(traj.events.end(), r.events.begin(), r.events.end());
    }
    traj.observations.push_back(render(cfg, s).reshaped({dim}));
    traj.states.push_back(s);
  }
  return traj;
}

nlohmann::json state_to_json(const WorldState& s) {
  nlohmann::json piles = nlohmann::json::array();
  for (const Pile& p : s.piles) {
    nlohmann::json blocks = nlohmann::json::array();
    for (Cell c : p.blocks) blocks.push_back({c.row, c.col});
    piles.push_back({{"column", p.column},
                     {"height", p.height},
                     {"offset", p.offset},
                     {"status", status_name(p.status)},
                     {"t_remaining", p.t_remaining},
                     {"blocks", blocks}});
  }
  nlohmann::json ds = nlohmann::json::array();
  for (const Distractor& d : s.distractors)
    ds.push_back({{"row", d.cell.row}, {"col", d.cell.col}, {"color", d.color}});
  return {{"step", s.step}, {"piles", piles}, {"distractors", ds}};
}

std::string trajectory_jsonl(const Trajectory& traj) {
  std::ostringstream os;
  for (std::size_t t = 0; t < traj.length(); ++t) {
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : traj.events)
      if (e.step == traj.states[t].step) events.push_back({{"pile", e.pile}, {"kind", e.kind}});
    nlohmann::json row = {{"t", t},
                          {"obs", traj.observations[t].values()},
                          {"events", events},
                          {"truth", state_to_json(traj.states[t])}};
    os << row.dump() << '\n';
  }
  return os.str();
}

}  // namespace cplab
