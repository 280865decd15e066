#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cplab/autodiff.hpp"
#include "cplab/params.hpp"
#include "cplab/rng.hpp"

namespace cplab {

// Initial key-match sharpness applied to cosine similarities.
inline constexpr double kInitSharpness = 4.0;

struct ModelConfig {
  std::size_t obs_dim = 12 * 12 * 8;
  std::size_t slots = 16;       // M
  std::size_t width = 8;        // w
  std::size_t key_dim = 16;     // d_k
  std::size_t b_count = 3;      // k_B
  std::size_t bins = 16;        // V_bins
  std::size_t enc_hidden = 64;
  std::size_t enc_out = 64;
  std::size_t score_hidden = 32;
  std::size_t pred_hidden = 64;
  std::size_t verify_hidden = 64;

  void validate() const;
  std::size_t state_dim() const { return slots * width; }
  std::size_t content_dim() const { return key_dim + width; }
  std::size_t selected() const { return b_count + 1; }
  // Dimension of the flattened conscious content, (k_B+1)(d_k+w).
  std::size_t conscious_dim() const { return selected() * content_dim(); }
};

// Fresh parameters: Glorot-uniform weights, zero biases, update-gate bias +1.
ParameterStore init_params(const ModelConfig& cfg, SeededRng& rng);

// Parameter entries that are optimizer-free bookkeeping.
inline const std::string kReadoutRange = "stat.readout_range";
inline const std::string kStepCounter = "stat.step";
// Names of the entries the optimizer and gradient checks act on.
std::vector<std::string> trainable_names(const ParameterStore& store);

// Uniform binning of a slot readout (first coordinate of the slot value) over
// that slot's empirical range.
struct BinSpec {
  double lo = -1.0;
  double hi = 1.0;
  std::size_t bins = 16;

  std::size_t bin_of(double readout) const;
  double center(std::size_t b) const;
  double width() const { return (hi - lo) / static_cast<double>(bins); }
};

// Bins of one slot's readout; ranges are tracked per slot in kReadoutRange [M, 2].
BinSpec bin_spec(const ParameterStore& store, const ModelConfig& cfg, std::size_t slot);

// ---- F: representation RNN --------------------------------------------------

// Slot to pin to a constant after every recurrent update (test instrumentation).
struct PlantedSlot {
  std::size_t slot = 0;
  double value = 0.5;
};

// One GRU update on [N, obs_dim] observations and [N, M*w] state.
Var encode_step(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var obs, Var h_prev,
                const std::optional<PlantedSlot>& planted = std::nullopt);

// Unrolls F over obs[0..T-1] (each [N, obs_dim]) from h0. Returns h_1..h_T.
// The observation encoder runs once over all T*N rows.
std::vector<Var> encode_sequence(Tape& t, const ParameterStore& p, const ModelConfig& cfg,
                                 const std::vector<NdArray>& obs, Var h0,
                                 const std::optional<PlantedSlot>& planted = std::nullopt);

// ---- C: conscious bottleneck ------------------------------------------------------

// Batch of conscious states, one per row.
struct ConsciousState {
  std::size_t batch = 0;
  std::vector<std::size_t> a_slot;                 // predicted slot A per row
  std::vector<std::vector<std::size_t>> b_slots;   // B set per row, ascending
  NdArray selection;  // [N, M] hard 0/1
  NdArray noise;      // [N, M] Gumbel draws used for this step
  double tau = 0.0;

  Var scores;        // [N, M] slot scores
  Var attention;     // [N, M] softmax(scores)
  Var role;          // [N, M] softmax of role scores restricted to the selected set
  Var a_weight;      // straight-through one-hot of A
  Var select_weight; // straight-through 0/1 selection
  Var a_key;         // [N, d_k]
  Var a_value;       // [N, w]
  Var b_pooled;      // [N, d_k + w] mean of B key/value contents
  Var content;       // [N, (k_B+1)(d_k+w)] A first, then B in ascending slot order
  Var context;       // [N, d_k + w] mean over all selected contents

  // All selected slots per row: A first, then B.
  std::vector<std::size_t> selected_slots(std::size_t row) const;
};

// `context_prev` is the previous state's `context` (zeros for none). With
// straight_through=false selection weights are constants, which leaves the
// smooth fixed-selection path only.
ConsciousState conscious_step(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var h,
                              Var context_prev, const NdArray& noise, double tau,
                              bool straight_through = true);

// Per-slot key/value rows [N*M, d_k + w] for a state batch h [N, M*w].
Var slot_contents(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var h);

// ---- predictor and verifier -----------------------------------------------------

// Logits [N, V] over the A slot's future readout bins.
Var predict_logits(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var b_pooled, Var a_key);
Var predict(Tape& t, const ParameterStore& p, const ModelConfig& cfg, const ConsciousState& c);

// Key-matched retrieval: softmax over table rows of A's key similarity,
// applied to the future state's slots. Returns [N, w].
Var retrieve(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var a_key, Var h_future);

// Scores [N, 1] for matched rows (statement i against future i). `ranges`
// (one per slot) replaces the stored readout ranges when non-empty.
Var verify(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var h_future,
           const ConsciousState& c, Var prediction, std::span<const BinSpec> ranges = {});
// Scores [N, N]: entry (i, j) scores statement i against future j.
Var verify_all_pairs(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var h_future,
                     const ConsciousState& c, Var prediction, std::span<const BinSpec> ranges = {});

// ---- statements -------------------------------------------------------------------

struct StatementProjection {
  std::size_t a_slot = 0;
  std::size_t bin = 0;
  int horizon = 0;
  std::vector<std::size_t> b_slots;
  friend bool operator==(const StatementProjection&, const StatementProjection&) = default;
};

// Lowest bin among the maxima.
std::size_t argmax_bin(std::span<const double> distribution);

// "slot[<A>] in <K> steps: bin <b> (p=<p>) | given slots {<B>}"
std::string render_statement(std::size_t a_slot, std::span<const std::size_t> b_slots,
                             std::span<const double> prediction, int horizon);
std::optional<StatementProjection> parse_statement(const std::string& utterance);

}  // namespace cplab
