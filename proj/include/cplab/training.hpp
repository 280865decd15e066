#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "cplab/config.hpp"
#include "cplab/env.hpp"
#include "cplab/nets.hpp"
#include "cplab/params.hpp"

namespace cplab {

// ---- losses ------------------------------------------------------------------------

// Mean over rows of -log softmax(scores[r])[positive[r]]; scores is [N, 1 + negatives].
Var nce_loss(Var scores, std::span<const std::size_t> positive);
// Scalar form: one positive score against its negatives.
double nce_loss(double positive, std::span<const double> negatives);

inline constexpr double kProbClamp = 1e-12;

// Mean over rows of -log max(p[r, bin[r]], 1e-12).
Var prediction_loss(Var distribution, std::span<const std::size_t> bins);
// Mean row entropy of attention probabilities [N, M].
Var entropy_regularizer(Var attention);
// Entropy of a usage distribution [M] (sums to 1).
Var diversity_regularizer(Var usage);
// Batch usage frequencies [M] from selection weights [N, M] with k selected per row.
Var slot_usage(Var select_weight, std::size_t k);
// Mean over state dimensions of max(0, 1 - var / floor^2), variance taken over the batch.
Var variance_floor_penalty(Var h, double floor);

struct LossBreakdown {
  double total = 0.0;
  double nce = 0.0;
  double pred = 0.0;
  double ent = 0.0;   // attention entropy (maximized)
  double div = 0.0;   // usage entropy (maximized)
  double var = 0.0;   // variance floor penalty
  double tau = 0.0;
  double grad_norm = 0.0;
  std::vector<int> slot_usage;  // selections per slot in the batch
  std::vector<int> a_usage;     // A picks per slot in the batch

  // Weighted sum of the parts under `cfg`.
  double recomposed(const TrainConfig& cfg) const;
  nlohmann::ordered_json to_json(std::uint64_t step) const;
};

// ---- data --------------------------------------------------------------------------

// Episode `index` of the stream keyed by `seed`; identical for every consumer.
Trajectory make_episode(const EnvConfig& cfg, std::uint64_t seed, std::uint64_t index, std::size_t length);

struct Window {
  std::size_t slot = 0;        // buffer position
  std::uint64_t episode = 0;   // stream index of the episode
  std::size_t start = 0;
  std::size_t length = 0;
};

// Ring of episodes drawn from one deterministic stream.
class TrajectoryBuffer {
 public:
  TrajectoryBuffer(const EnvConfig& env, std::size_t capacity, std::size_t episode_length, std::uint64_t seed);

  // Replaces the oldest episode with the next one of the stream.
  void refresh();
  Window sample_window(std::size_t length, SeededRng& rng) const;
  const Trajectory& episode(std::size_t slot) const { return episodes_.at(slot); }
  std::uint64_t episode_index(std::size_t slot) const { return indices_.at(slot); }
  std::size_t size() const { return episodes_.size(); }
  std::uint64_t next_index() const { return next_; }

 private:
  EnvConfig env_;
  std::size_t length_;
  std::uint64_t seed_;
  std::vector<Trajectory> episodes_;
  std::vector<std::uint64_t> indices_;
  std::size_t oldest_ = 0;
  std::uint64_t next_ = 0;
};

// Observations [N, obs_dim] for each window step.
std::vector<NdArray> window_observations(const TrajectoryBuffer& buffer, std::span<const Window> windows);

// ---- one step ------------------------------------------------------------------------

inline constexpr double kRangeSigmas = 2.0;

// Per-slot readout bins over mean +- kRangeSigmas std of the batch [N, M*w].
std::vector<BinSpec> batch_readout_ranges(const ModelConfig& model, const NdArray& future);

struct StepGraph {
  Var total;
  LossBreakdown parts;
  ConsciousState c;
  Var prediction;
  std::vector<std::size_t> target_bins;
};

// Losses from an unrolled state sequence h_1..h_{T_w} (each [N, M*w]). C runs
// at conscious_index(), its context from one step earlier; the future is the
// last state.
StepGraph build_losses(Tape& tape, const ParameterStore& store, const ModelConfig& model, const TrainConfig& cfg,
                       const std::vector<Var>& states, double tau, SeededRng& rng);

class NumericalAbort : public std::runtime_error {
 public:
  NumericalAbort(const std::string& what, nlohmann::json dump) : std::runtime_error(what), dump_(std::move(dump)) {}
  const nlohmann::json& dump() const { return dump_; }

 private:
  nlohmann::json dump_;
};

// Unrolls F over the windows, builds the losses, backpropagates and applies
// one Adam update. Throws NumericalAbort on a non-finite loss or gradient.
LossBreakdown train_step(ParameterStore& store, const RunConfig& cfg, const std::vector<NdArray>& observations,
                         SeededRng& rng, double tau);
// Same update on given representation states (no encoder unroll).
LossBreakdown train_step_states(ParameterStore& store, const ModelConfig& model, const TrainConfig& cfg,
                                const std::vector<NdArray>& states, SeededRng& rng, double tau);

// ---- loop ------------------------------------------------------------------------------

struct TrainOutputs {
  std::filesystem::path metrics;      // metrics.jsonl
  std::filesystem::path loss_curve;   // loss_curve.csv
  std::filesystem::path final_checkpoint;
};

struct TrainHooks {
  // Called every eval_every steps and at the end with (completed steps, params).
  std::function<void(std::uint64_t, const ParameterStore&)> on_eval;
  // Called after every step.
  std::function<void(std::uint64_t, const LossBreakdown&)> on_step;
};

ParameterStore initial_params(const RunConfig& cfg);

// Full loop. Writes metrics.jsonl, loss_curve.csv and checkpoints
// (ckpt_<step>.bin every checkpoint_every steps, final.bin at the end) into out.
// On NumericalAbort the offending window is written to abort_dump.json first.
TrainOutputs train(const RunConfig& cfg, const std::filesystem::path& out, const TrainHooks& hooks = {});

}  // namespace cplab
