#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "cplab/ndarray.hpp"
#include "cplab/rng.hpp"

namespace cplab {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Nudges are -1, 0, +1 in that order.
inline constexpr std::array<int, 3> kNudges = {-1, 0, 1};

struct EnvConfig {
  int grid = 12;
  int piles = 3;
  int max_height = 4;
  int offset_bound = 3;
  int fall_threshold = 5;  // in height * |offset| units
  std::array<double, 3> nudge_probs = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  int distractors = 4;
  int colors = 4;
  int scatter_steps = 3;
  int lean_threshold = 2;

  void validate() const;  // throws ConfigError
  std::size_t channels() const { return 4 + static_cast<std::size_t>(colors); }
  std::size_t obs_dim() const {
    return static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid) * channels();
  }
  int pile_column(int pile) const { return (pile + 1) * grid / (piles + 1); }
};

// Observation channels per cell.
enum Channel : int { kEmpty = 0, kBlock = 1, kLeanLeft = 2, kLeanRight = 3, kDistractor0 = 4 };

enum class PileStatus { kStanding, kScattering, kSettled };
const char* status_name(PileStatus s);

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct Pile {
  int column = 0;
  int height = 1;
  int offset = 0;
  PileStatus status = PileStatus::kStanding;
  int t_remaining = 0;       // scatter steps left while scattering
  std::vector<Cell> blocks;  // positions once the pile has fallen
  friend bool operator==(const Pile&, const Pile&) = default;
};

struct Distractor {
  Cell cell;
  int color = 0;
  friend bool operator==(const Distractor&, const Distractor&) = default;
};

struct WorldState {
  std::vector<Pile> piles;
  std::vector<Distractor> distractors;
  std::uint64_t step = 0;
  friend bool operator==(const WorldState&, const WorldState&) = default;
};

struct EventRecord {
  std::uint64_t step = 0;  // step counter of the state the event produced
  int pile = 0;
  std::string kind = "fell";
  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct StepResult {
  WorldState state;
  std::vector<EventRecord> events;
};

bool pile_falls(const EnvConfig& cfg, int height, int offset);

WorldState reset(const EnvConfig& cfg, SeededRng& rng);
StepResult step(const EnvConfig& cfg, const WorldState& state, SeededRng& rng);
// One-hot tensor of shape [G, G, C]; flatten with reshaped({obs_dim}).
NdArray render(const EnvConfig& cfg, const WorldState& state);

inline constexpr double kOraclePathLimit = 1e7;

// P(pile is scattering or settled after at most K steps), by exhaustive
// enumeration of pile-choice x nudge sequences. Throws std::length_error
// when (P * |alphabet|)^K exceeds kOraclePathLimit.
double oracle_fall_prob(const EnvConfig& cfg, const WorldState& state, int pile, int horizon);
// P(a fell event for `pile` in the next K steps): zero for piles already down.
double oracle_event_prob(const EnvConfig& cfg, const WorldState& state, int pile, int horizon);

struct Trajectory {
  std::vector<NdArray> observations;  // flattened, obs_dim each
  std::vector<WorldState> states;
  std::vector<EventRecord> events;

  std::size_t length() const { return observations.size(); }
  // True if `pile` emits a fell event in steps (t, t + K].
  bool falls_within(std::size_t t, int pile, int horizon) const;
};

Trajectory sample_trajectory(const EnvConfig& cfg, SeededRng& rng, std::size_t length);

nlohmann::json state_to_json(const WorldState& state);
// One JSON object per line: {"t", "obs", "events", "truth"}.
std::string trajectory_jsonl(const Trajectory& traj);

}  // namespace cplab
