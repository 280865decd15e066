#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cplab/env.hpp"
#include "cplab/nets.hpp"

namespace cplab {

struct TrainConfig {
  int horizon = 5;             // K
  int window = 12;             // T_w
  std::size_t batch = 32;
  std::size_t negatives = 31;  // in-batch, at most batch - 1
  bool temporal_negatives = false;
  double lr = 3e-4;
  double entropy_weight = 0.01;    // beta
  double diversity_weight = 0.1;   // lambda
  double pred_weight = 1.0;
  double nce_weight = 1.0;
  double variance_weight = 0.01;
  double variance_floor = 0.1;     // target per-dimension std of slot values
  std::uint64_t steps = 20000;
  std::uint64_t seed = 0;
  double tau_start = 1.0;
  double tau_decay = 0.999;
  double tau_floor = 0.1;
  std::size_t buffer_episodes = 256;
  std::size_t episode_length = 64;
  std::size_t refresh_every = 4;   // steps between fresh episodes
  std::uint64_t checkpoint_every = 1000;
  std::uint64_t eval_every = 0;    // 0 disables the periodic hook
  bool adapt_readout_range = true;
  double readout_momentum = 0.99;
  int planted_slot = -1;           // < 0 disables
  double planted_value = 0.5;

  void validate() const;
  double tau_at(std::uint64_t step) const;
  // Step index in the window at which C runs.
  std::size_t conscious_index() const { return static_cast<std::size_t>(window - horizon - 1); }
};

struct EvalConfig {
  std::size_t episodes = 256;
  std::size_t episode_length = 64;
  std::uint64_t seed_offset = 1000003;  // evaluation episodes never overlap training ones
  std::size_t probe_epochs = 400;
  double probe_lr = 0.05;
  double probe_l2 = 1e-3;
  double probe_train_fraction = 0.7;
  std::size_t mi_bins = 16;
  std::size_t baseline_hidden = 64;
  std::uint64_t baseline_steps = 4000;
  std::size_t baseline_batch = 16;
  std::size_t baseline_rollouts = 32;
  double baseline_lr = 3e-3;

  void validate() const;
};

struct RunConfig {
  EnvConfig env;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  // Model observation size follows the environment.
  void sync();
  void validate() const;
  // key = value text that parses back to this config.
  std::string to_text() const;
};

// Flat key = value text ("train.lr = 3e-4"), '#' comments. Unknown keys,
// malformed lines and invalid values throw ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
// Applies one key = value assignment.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace cplab
