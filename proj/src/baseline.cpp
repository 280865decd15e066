#include <algorithm>
#include <cmath>

#include "cplab/autodiff.hpp"
#include "cplab/harness.hpp"
#include "cplab/training.hpp"

namespace cplab {

namespace {

Var baseline_latent(Tape& t, const BaselineModel& m, Var obs, Var latent) {
  return tanh(add(matmul(concat({obs, latent}, 1), t.param(m.params, "b.in.w")), t.param(m.params, "b.in.b")));
}

// Logits [N * cells, channels]: latent readout plus a per-cell path from the
// cell's current channel, shared across cells.
Var baseline_logits(Tape& t, const BaselineModel& m, Var obs, Var latent) {
  const std::size_t n = latent.shape()[0];
  Var flat = add(matmul(latent, t.param(m.params, "b.out.w")), t.param(m.params, "b.out.b"));
  Var cell = matmul(reshape(obs, Shape{n * m.cells, m.channels}), t.param(m.params, "b.cell.w"));
  return add(reshape(flat, Shape{n * m.cells, m.channels}), cell);
}

std::vector<std::size_t> cell_channels(const NdArray& obs, std::size_t row, std::size_t cells, std::size_t channels) {
  std::vector<std::size_t> out(cells);
  const double* base = obs.values().data() + row * cells * channels;
  for (std::size_t c = 0; c < cells; ++c)
    out[c] = static_cast<std::size_t>(std::max_element(base + c * channels, base + (c + 1) * channels) -
                                      (base + c * channels));
  return out;
}

}  // namespace

BaselineModel init_baseline(const RunConfig& cfg, SeededRng& rng) {
  BaselineModel m;
  m.cells = static_cast<std::size_t>(cfg.env.grid) * static_cast<std::size_t>(cfg.env.grid);
  m.channels = cfg.env.channels();
  m.hidden = cfg.eval.baseline_hidden;
  const std::size_t obs = cfg.env.obs_dim();
  m.params.add("b.in.w", glorot_uniform(obs + m.hidden, m.hidden, rng));
  m.params.add("b.in.b", NdArray(Shape{m.hidden}, 0.0));
  m.params.add("b.out.w", glorot_uniform(m.hidden, m.cells * m.channels, rng));
  m.params.add("b.out.b", NdArray(Shape{m.cells * m.channels}, 0.0));
  m.params.add("b.cell.w", glorot_uniform(m.channels, m.channels, rng));
  return m;
}

NdArray baseline_forward(const BaselineModel& m, const NdArray& obs, const NdArray& latent, NdArray* latent_out) {
  Tape t;
  Var o = t.constant(obs);
  Var z = baseline_latent(t, m, o, t.constant(latent));
  Var probs = softmax(baseline_logits(t, m, o, z), 1);
  if (latent_out) *latent_out = z.value();
  return probs.value().reshaped(Shape{obs.dim(0), m.cells, m.channels});
}

std::vector<double> train_baseline(BaselineModel& m, const RunConfig& cfg) {
  const TrainConfig& tc = cfg.train;
  TrajectoryBuffer buffer(cfg.env, tc.buffer_episodes, tc.episode_length, tc.seed);
  SeededRng batch_rng = SeededRng(tc.seed).fork("baseline-batch");
  const AdamHyper hyper{.lr = cfg.eval.baseline_lr};
  const std::size_t n = cfg.eval.baseline_batch, len = static_cast<std::size_t>(tc.window);
  std::vector<double> losses;
  std::vector<Window> windows(n);
  for (std::uint64_t step = 0; step < cfg.eval.baseline_steps; ++step) {
    if (step > 0 && step % tc.refresh_every == 0) buffer.refresh();
    for (auto& w : windows) w = buffer.sample_window(len, batch_rng);
    const auto obs = window_observations(buffer, windows);
    Tape t;
    Var z = t.constant(NdArray(Shape{n, m.hidden}, 0.0));
    std::vector<Var> terms;
    for (std::size_t s = 0; s + 1 < len; ++s) {
      Var o = t.constant(obs[s]);
      z = baseline_latent(t, m, o, z);
      std::vector<std::size_t> target;
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = cell_channels(obs[s + 1], i, m.cells, m.channels);
        target.insert(target.end(), c.begin(), c.end());
      }
      terms.push_back(cross_entropy_logits(baseline_logits(t, m, o, z), target));
    }
    Var loss = scale(sum_all(concat(terms, 0)), 1.0 / static_cast<double>(terms.size()));
    t.backward(loss);
    adam_step(m.params, t.parameter_grads(), hyper);
    losses.push_back(loss.item());
  }
  return losses;
}

std::vector<double> baseline_event_scores(const BaselineModel& m, const RunConfig& cfg, const Trajectory& ep,
                                          std::size_t t, SeededRng& rng) {
  const std::size_t piles = static_cast<std::size_t>(cfg.env.piles);
  const std::size_t tc = cfg.train.conscious_index(), rollouts = cfg.eval.baseline_rollouts;
  const int horizon = cfg.train.horizon;
  std::vector<double> scores(piles, 0.0);
  bool any_standing = false;
  for (const Pile& p : ep.states.at(t).piles) any_standing |= p.status == PileStatus::kStanding;
  if (!any_standing) return scores;

  // Context over the same frames the conscious model sees.
  NdArray z(Shape{1, m.hidden}, 0.0);
  const std::size_t obs_dim = m.cells * m.channels;
  for (std::size_t s = t - std::min(t, tc); s < t; ++s)
    baseline_forward(m, ep.observations[s].reshaped(Shape{1, obs_dim}), z, &z);
  NdArray latent(Shape{rollouts, m.hidden});
  NdArray frame(Shape{rollouts, obs_dim});
  for (std::size_t r = 0; r < rollouts; ++r) {
    std::copy(z.values().begin(), z.values().end(), latent.values().begin() + r * m.hidden);
    const auto& src = ep.observations[t].values();
    std::copy(src.begin(), src.end(), frame.values().begin() + r * obs_dim);
  }
  // A pile renders as fallen when no cell of its column shows a pile glyph.
  const std::size_t grid = static_cast<std::size_t>(cfg.env.grid);
  std::vector<std::size_t> column(piles);
  for (std::size_t p = 0; p < piles; ++p) column[p] = static_cast<std::size_t>(cfg.env.pile_column(static_cast<int>(p)));
  std::vector<std::vector<bool>> fell(rollouts, std::vector<bool>(piles, false));
  for (int k = 0; k < horizon; ++k) {
    NdArray next_latent;
    const NdArray probs = baseline_forward(m, frame, latent, &next_latent);
    latent = std::move(next_latent);
    frame.fill(0.0);
    for (std::size_t r = 0; r < rollouts; ++r) {
      for (std::size_t c = 0; c < m.cells; ++c) {
        const std::span<const double> dist(probs.values().data() + (r * m.cells + c) * m.channels, m.channels);
        frame[r * obs_dim + c * m.channels + rng.categorical(dist)] = 1.0;
      }
      for (std::size_t p = 0; p < piles; ++p) {
        bool shown = false;
        for (std::size_t row = 0; row < grid && !shown; ++row) {
          const std::size_t cell = row * grid + column[p];
          const double* one_hot = frame.values().data() + r * obs_dim + cell * m.channels;
          shown = one_hot[kBlock] > 0.0 || one_hot[kLeanLeft] > 0.0 || one_hot[kLeanRight] > 0.0;
        }
        if (!shown) fell[r][p] = true;
      }
    }
  }
  for (std::size_t p = 0; p < piles; ++p) {
    if (ep.states[t].piles[p].status != PileStatus::kStanding) continue;
    for (std::size_t r = 0; r < rollouts; ++r) scores[p] += fell[r][p] ? 1.0 / static_cast<double>(rollouts) : 0.0;
  }
  return scores;
}

}  // namespace cplab
