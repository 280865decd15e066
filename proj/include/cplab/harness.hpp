#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cplab/config.hpp"
#include "cplab/env.hpp"
#include "cplab/nets.hpp"
#include "cplab/params.hpp"

namespace cplab {

// ---- statistics ----------------------------------------------------------------------

// Rank AUC: P(score of a positive > score of a negative), ties count 1/2.
// Throws std::invalid_argument unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

// Uniform binning of x over [min, max] into `bins` levels.
std::vector<std::size_t> uniform_bins(std::span<const double> x, std::size_t bins);
// Plug-in entropy (nats) of discrete codes.
double plugin_entropy(std::span<const std::size_t> codes);
// Plug-in mutual information (nats) of two code sequences.
double mutual_information(std::span<const std::size_t> a, std::span<const std::size_t> b);
// MI of two real sequences binned uniformly to `bins` levels each. Needs >= 2000 samples.
double mutual_information(std::span<const double> x, std::span<const double> y, std::size_t bins = 16);

inline constexpr std::size_t kMinMiSamples = 2000;
inline constexpr std::size_t kMinProbeSamples = 500;
inline constexpr std::size_t kMinResolved = 200;

// ---- probes --------------------------------------------------------------------------

struct ProbeReport {
  std::string source;
  int pile = -1;
  double auc = 0.5;
  double accuracy = 0.0;  // at threshold 0.5
  std::size_t n = 0;      // all samples
  std::size_t n_test = 0;
  nlohmann::ordered_json to_json() const;
};

// Logistic regression on frozen standardized features [n, d], trained with
// Adam on the first fraction of rows and scored on the rest.
ProbeReport probe_outcome(const NdArray& features, std::span<const int> labels, const EvalConfig& cfg,
                          std::uint64_t seed, std::string source = "features", int pile = -1);

// ---- statements ------------------------------------------------------------------------

struct StatementRecord {
  std::uint64_t episode = 0;
  std::size_t t = 0;
  int horizon = 0;
  std::size_t a_slot = 0;
  std::size_t argmax = 0;
  double max_p = 0.0;
  std::vector<std::size_t> b_slots;
  double verifier_score = 0.0;  // V on the realized future
  std::optional<std::size_t> resolved_bin;
  std::string utterance;

  // t, K, A_id, argmax_bin, max_p, B_ids, verifier_score, resolved_bin, utterance
  std::string tsv() const;
};

struct StatementResolution {
  double auc = 0.5;
  std::size_t resolved = 0;
  std::size_t skipped = 0;
  std::size_t correct = 0;
};

// AUC of the verifier score against "resolved bin equals predicted argmax".
// Throws std::invalid_argument with fewer than kMinResolved resolved records.
StatementResolution resolve_statements(std::span<const StatementRecord> records);

// ---- evaluation samples ------------------------------------------------------------------

// Episode `index` of the evaluation stream for `seed`.
Trajectory eval_episode(const RunConfig& cfg, std::uint64_t seed, std::uint64_t index);

// One evaluation time step: F unrolled over the training window geometry
// ending K steps after t, C at t with zero noise and tau = 0.
struct EvalSample {
  std::uint64_t episode = 0;
  std::size_t t = 0;
  std::vector<double> h;               // [M*w] at t
  std::vector<std::size_t> selected;   // A first, then B
  std::vector<int> standing;           // per pile: standing at t
  std::vector<int> labels;             // per pile: fell event within (t, t+K]
  std::vector<double> oracle;          // per pile: exact event probability
  std::vector<double> heights;         // per pile
  std::vector<double> offsets;         // per pile
};

struct EvalData {
  std::vector<EvalSample> samples;
  std::vector<StatementRecord> statements;
};

EvalData collect_eval(const ParameterStore& store, const RunConfig& cfg, std::uint64_t seed);

// Probe features of the selected slots: each selected slot's value at its
// slot position plus a selection indicator, zeros elsewhere ([M*w + M]).
std::vector<double> slot_features(const ModelConfig& cfg, std::span<const double> h,
                                  std::span<const std::size_t> slots);

// ---- pixel baseline ----------------------------------------------------------------------

// Next-frame predictor: z_t = tanh(W_in [obs_t, z_{t-1}] + b), per-cell
// channel logits W_out z_t + b_out plus the cell's own one-hot times a shared
// channel matrix.
struct BaselineModel {
  ParameterStore params;
  std::size_t cells = 0;
  std::size_t channels = 0;
  std::size_t hidden = 0;
};

BaselineModel init_baseline(const RunConfig& cfg, SeededRng& rng);
// Per-cell channel probabilities [N, cells, channels] for observations [N, obs]
// and latents [N, hidden]; the new latent is written to `latent_out`.
NdArray baseline_forward(const BaselineModel& m, const NdArray& obs, const NdArray& latent, NdArray* latent_out);
// Trains on the training episode stream of `cfg.train.seed`. Returns the mean
// next-frame cross-entropy per step.
std::vector<double> train_baseline(BaselineModel& m, const RunConfig& cfg);
// Fraction of `rollouts` sampled K-step futures in which each pile's column
// shows no pile glyph at some step; 0 for piles already down at t.
std::vector<double> baseline_event_scores(const BaselineModel& m, const RunConfig& cfg, const Trajectory& ep,
                                          std::size_t t, SeededRng& rng);

// ---- reports -------------------------------------------------------------------------------

struct SourceAuc {
  std::string source;
  double auc = 0.5;            // mean over piles
  std::vector<double> per_pile;
  std::size_t n = 0;
};

struct MiTable {
  std::vector<std::string> factors;
  std::vector<std::vector<double>> mi;  // [slot][factor]
  std::size_t n = 0;
  std::vector<double> selection_frequency;  // per slot, sums to 1
  // Mean MI with the falling pile's height and offset over fall events:
  // selected slots versus all slots.
  double selected_mean = 0.0;
  double random_mean = 0.0;
  std::size_t events = 0;
};

// Baseline rollout scores on the held-out rows, as for the probes.
SourceAuc baseline_auc(const BaselineModel& model, const EvalData& data, const RunConfig& cfg, std::uint64_t seed);

MiTable mi_table(const ModelConfig& cfg, const EvalData& data, std::size_t bins);

struct EvalReport {
  std::uint64_t seed = 0;
  SourceAuc conscious, full_h, random_k, oracle, baseline;
  StatementResolution statements;
  MiTable mi;
  std::vector<ProbeReport> probes;
  double seconds = 0.0;
  nlohmann::ordered_json to_json() const;
};

struct EvalOptions {
  bool baseline = true;
  std::optional<BaselineModel> trained_baseline;
};

// Probes, oracle, baseline, statements and MI on the evaluation stream of
// `seed`. Per-pile AUCs use the rows where the pile stands at t; the last
// (1 - probe_train_fraction) of them, in episode order, are held out.
EvalReport evaluate(const ParameterStore& store, const RunConfig& cfg, std::uint64_t seed,
                    const EvalOptions& options = {}, EvalData* data_out = nullptr);

// report.json, auc_by_seed.csv, mi_matrix.csv, statements.tsv into `out`.
void write_report(const std::filesystem::path& out, std::span<const EvalReport> reports,
                  std::span<const StatementRecord> statements = {});

// ---- gradient suite ------------------------------------------------------------------------

struct GradSuiteEntry {
  std::string name;
  bool composite = false;
  double max_error = 0.0;
  std::size_t points = 0;
  bool pass(double primitive_tol = 1e-5, double composite_tol = 1e-4) const {
    return max_error < (composite ? composite_tol : primitive_tol);
  }
};

// grad_check over every primitive and the composed networks of `model` at
// `points` random points each. Parameter checks sample up to
// `coords_per_entry` coordinates of every entry.
std::vector<GradSuiteEntry> gradient_suite(const ModelConfig& model, std::uint64_t seed, std::size_t points = 20,
                                           std::size_t coords_per_entry = 12);

}  // namespace cplab
