#include "cplab/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace cplab {

// ---- losses ------------------------------------------------------------------------

Var nce_loss(Var scores, std::span<const std::size_t> positive) { return cross_entropy_logits(scores, positive); }

double nce_loss(double positive, std::span<const double> negatives) {
  double mx = positive;
  for (double s : negatives) mx = std::max(mx, s);
  double z = std::exp(positive - mx);
  for (double s : negatives) z += std::exp(s - mx);
  return -(positive - mx - std::log(z));
}

Var prediction_loss(Var distribution, std::span<const std::size_t> bins) {
  return scale(mean_all(log(clamp_min(pick(distribution, bins), kProbClamp))), -1.0);
}

Var entropy_regularizer(Var attention) {
  Var plogp = mul(attention, log(clamp_min(attention, kProbClamp)));
  return scale(mean(sum(plogp, 1), 0), -1.0);
}

Var diversity_regularizer(Var usage) {
  return scale(sum_all(mul(usage, log(clamp_min(usage, kProbClamp)))), -1.0);
}

Var slot_usage(Var select_weight, std::size_t k) {
  const double rows = static_cast<double>(select_weight.value().dim(0));
  return scale(sum(select_weight, 0), 1.0 / (rows * static_cast<double>(k)));
}

Var variance_floor_penalty(Var h, double floor) {
  Var centered = sub(h, mean(h, 0));
  Var var = mean(mul(centered, centered), 0);
  return mean_all(relu(add_scalar(scale(var, -1.0 / (floor * floor)), 1.0)));
}

double LossBreakdown::recomposed(const TrainConfig& cfg) const {
  return cfg.nce_weight * nce + cfg.pred_weight * pred - cfg.entropy_weight * ent - cfg.diversity_weight * div +
         cfg.variance_weight * var;
}

nlohmann::ordered_json LossBreakdown::to_json(std::uint64_t step) const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["total"] = total;
  j["nce"] = nce;
  j["pred"] = pred;
  j["ent"] = ent;
  j["div"] = div;
  j["tau"] = tau;
  j["slot_usage"] = slot_usage;
  j["var"] = var;
  j["grad_norm"] = grad_norm;
  return j;
}

// ---- data --------------------------------------------------------------------------

Trajectory make_episode(const EnvConfig& cfg, std::uint64_t seed, std::uint64_t index, std::size_t length) {
  SeededRng rng = SeededRng(seed).fork("episode:" + std::to_string(index));
  return sample_trajectory(cfg, rng, length);
}

TrajectoryBuffer::TrajectoryBuffer(const EnvConfig& env, std::size_t capacity, std::size_t episode_length,
                                   std::uint64_t seed)
    : env_(env), length_(episode_length), seed_(seed) {
  for (std::size_t i = 0; i < capacity; ++i) {
    episodes_.push_back(make_episode(env_, seed_, next_, length_));
    indices_.push_back(next_++);
  }
}

void TrajectoryBuffer::refresh() {
  episodes_[oldest_] = make_episode(env_, seed_, next_, length_);
  indices_[oldest_] = next_++;
  oldest_ = (oldest_ + 1) % episodes_.size();
}

Window TrajectoryBuffer::sample_window(std::size_t length, SeededRng& rng) const {
  if (length > length_) throw std::invalid_argument("sample_window: window longer than episodes");
  Window w;
  w.slot = static_cast<std::size_t>(rng.below(episodes_.size()));
  w.episode = indices_[w.slot];
  w.start = static_cast<std::size_t>(rng.below(length_ - length + 1));
  w.length = length;
  return w;
}

std::vector<NdArray> window_observations(const TrajectoryBuffer& buffer, std::span<const Window> windows) {
  if (windows.empty()) return {};
  const std::size_t len = windows[0].length, n = windows.size();
  const std::size_t dim = buffer.episode(windows[0].slot).observations[0].size();
  std::vector<NdArray> out;
  for (std::size_t s = 0; s < len; ++s) {
    NdArray block(Shape{n, dim});
    for (std::size_t i = 0; i < n; ++i) {
      const auto& src = buffer.episode(windows[i].slot).observations.at(windows[i].start + s).values();
      std::copy(src.begin(), src.end(), block.values().begin() + i * dim);
    }
    out.push_back(std::move(block));
  }
  return out;
}

// ---- one step ------------------------------------------------------------------------

std::vector<BinSpec> batch_readout_ranges(const ModelConfig& model, const NdArray& future) {
  const std::size_t n = future.dim(0);
  std::vector<BinSpec> out;
  for (std::size_t s = 0; s < model.slots; ++s) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += future.at(i, s * model.width);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) sq += std::pow(future.at(i, s * model.width) - mean, 2);
    const double spread = std::max(kRangeSigmas * std::sqrt(sq / static_cast<double>(n)), 5e-7);
    out.push_back(BinSpec{mean - spread, mean + spread, model.bins});
  }
  return out;
}

StepGraph build_losses(Tape& t, const ParameterStore& p, const ModelConfig& model, const TrainConfig& cfg,
                       const std::vector<Var>& states, double tau, SeededRng& rng) {
  if (states.size() != static_cast<std::size_t>(cfg.window))
    throw std::invalid_argument("build_losses: expected " + std::to_string(cfg.window) + " states, got " +
                                std::to_string(states.size()));
  const std::size_t n = states[0].value().dim(0), m = model.slots, tc = cfg.conscious_index();
  if (cfg.negatives > n - 1) throw std::invalid_argument("build_losses: more negatives than batch rows");

  StepGraph g;
  const NdArray noise_prev = gumbel_sample(rng, {n, m});
  const NdArray noise = gumbel_sample(rng, {n, m});
  Var context = t.constant(NdArray(Shape{n, model.content_dim()}, 0.0));
  if (tc >= 1) context = conscious_step(t, p, model, states[tc - 1], context, noise_prev, tau).context;
  g.c = conscious_step(t, p, model, states[tc], context, noise, tau);
  g.prediction = predict(t, p, model, g.c);

  const Var future = states.back();
  std::vector<BinSpec> ranges;
  if (cfg.adapt_readout_range) ranges = batch_readout_ranges(model, future.value());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = g.c.a_slot[i];
    const BinSpec bins = ranges.empty() ? bin_spec(p, model, a) : ranges[a];
    g.target_bins.push_back(bins.bin_of(future.value().at(i, a * model.width)));
  }
  Var pred = prediction_loss(g.prediction, g.target_bins);

  std::vector<Var> columns{verify_all_pairs(t, p, model, future, g.c, g.prediction, ranges)};
  if (cfg.negatives < n - 1) {
    NdArray excluded(Shape{n, n}, -1e9);
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < n; ++i) {
      excluded.at(i, i) = 0.0;
      others.clear();
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) others.push_back(j);
      for (std::size_t r = 0; r < cfg.negatives; ++r) {
        std::swap(others[r], others[r + rng.below(others.size() - r)]);
        excluded.at(i, others[r]) = 0.0;
      }
    }
    columns[0] = add(columns[0], t.constant(excluded));
  }
  if (cfg.temporal_negatives)
    for (std::size_t j = tc + 1; j + 1 < states.size(); ++j)
      columns.push_back(verify(t, p, model, states[j], g.c, g.prediction, ranges));
  std::vector<std::size_t> positive(n);
  std::iota(positive.begin(), positive.end(), 0);
  Var nce = nce_loss(columns.size() == 1 ? columns[0] : concat(columns, 1), positive);

  Var ent = entropy_regularizer(g.c.attention);
  Var div = diversity_regularizer(slot_usage(g.c.select_weight, model.selected()));
  Var var = variance_floor_penalty(states[tc], cfg.variance_floor);

  g.total = add(add(add(scale(nce, cfg.nce_weight), scale(pred, cfg.pred_weight)),
                    add(scale(ent, -cfg.entropy_weight), scale(div, -cfg.diversity_weight))),
                scale(var, cfg.variance_weight));

  LossBreakdown& b = g.parts;
  b.total = g.total.item();
  b.nce = nce.item();
  b.pred = pred.item();
  b.ent = ent.item();
  b.div = div.item();
  b.var = var.item();
  b.tau = tau;
  b.slot_usage.assign(m, 0);
  b.a_usage.assign(m, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto s : g.c.selected_slots(i)) ++b.slot_usage[s];
    ++b.a_usage[g.c.a_slot[i]];
  }
  return g;
}

namespace {

// Half-width of a slot's readout range in batch standard deviations.

nlohmann::json breakdown_dump(const LossBreakdown& b) {
  return {{"total", b.total}, {"nce", b.nce}, {"pred", b.pred}, {"ent", b.ent},
          {"div", b.div},     {"var", b.var}, {"tau", b.tau},   {"grad_norm", b.grad_norm}};
}

void update_readout_range(ParameterStore& store, const ModelConfig& model, const TrainConfig& cfg,
                          const NdArray& future) {
  auto range = store.mutable_values(kReadoutRange);
  const bool first = store.value(kStepCounter)[0] == 0.0;
  const double mom = first ? 0.0 : cfg.readout_momentum;
  const std::vector<BinSpec> batch = batch_readout_ranges(model, future);
  for (std::size_t s = 0; s < model.slots; ++s) {
    range[2 * s] = mom * range[2 * s] + (1.0 - mom) * batch[s].lo;
    range[2 * s + 1] = mom * range[2 * s + 1] + (1.0 - mom) * batch[s].hi;
  }
}

LossBreakdown finish_step(ParameterStore& store, const ModelConfig& model, const TrainConfig& cfg, Tape& tape,
                          StepGraph& g, const std::vector<Var>& states) {
  if (!std::isfinite(g.parts.total))
    throw NumericalAbort("non-finite loss", {{"parts", breakdown_dump(g.parts)}});
  tape.backward(g.total);
  const GradMap grads = tape.parameter_grads();
  g.parts.grad_norm = grad_norm(grads);
  if (!std::isfinite(g.parts.grad_norm))
    throw NumericalAbort("non-finite gradient", {{"parts", breakdown_dump(g.parts)}});
  adam_step(store, grads, AdamHyper{.lr = cfg.lr});
  if (cfg.adapt_readout_range) update_readout_range(store, model, cfg, states.back().value());
  store.mutable_values(kStepCounter)[0] += 1.0;
  return g.parts;
}

}  // namespace

LossBreakdown train_step(ParameterStore& store, const RunConfig& cfg, const std::vector<NdArray>& observations,
                         SeededRng& rng, double tau) {
  if (observations.size() != static_cast<std::size_t>(cfg.train.window))
    throw std::invalid_argument("train_step: window length mismatch");
  const std::size_t n = observations[0].dim(0);
  std::optional<PlantedSlot> planted;
  if (cfg.train.planted_slot >= 0)
    planted = PlantedSlot{static_cast<std::size_t>(cfg.train.planted_slot), cfg.train.planted_value};
  Tape tape;
  auto states = encode_sequence(tape, store, cfg.model, observations,
                                tape.constant(NdArray(Shape{n, cfg.model.state_dim()}, 0.0)), planted);
  StepGraph g = build_losses(tape, store, cfg.model, cfg.train, states, tau, rng);
  return finish_step(store, cfg.model, cfg.train, tape, g, states);
}

LossBreakdown train_step_states(ParameterStore& store, const ModelConfig& model, const TrainConfig& cfg,
                                const std::vector<NdArray>& states, SeededRng& rng, double tau) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& s : states) vars.push_back(tape.constant(s));
  StepGraph g = build_losses(tape, store, model, cfg, vars, tau, rng);
  return finish_step(store, model, cfg, tape, g, vars);
}

// ---- loop ------------------------------------------------------------------------------

ParameterStore initial_params(const RunConfig& cfg) {
  SeededRng init = SeededRng(cfg.train.seed).fork("init");
  return init_params(cfg.model, init);
}

TrainOutputs train(const RunConfig& cfg, const std::filesystem::path& out, const TrainHooks& hooks) {
  cfg.validate();
  std::filesystem::create_directories(out);
  TrainOutputs paths{out / "metrics.jsonl", out / "loss_curve.csv", out / "final.bin"};
  std::ofstream metrics(paths.metrics, std::ios::binary), curve(paths.loss_curve, std::ios::binary);
  if (!metrics || !curve) throw std::runtime_error("train: cannot write into " + out.string());
  curve << "step,total,nce,pred\n";

  const TrainConfig& tc = cfg.train;
  ParameterStore store = initial_params(cfg);
  const SeededRng root(tc.seed);
  SeededRng batch_rng = root.fork("batch"), noise_rng = root.fork("noise");
  TrajectoryBuffer buffer(cfg.env, tc.buffer_episodes, tc.episode_length, tc.seed);

  std::vector<Window> windows(tc.batch);
  for (std::uint64_t step = 0; step < tc.steps; ++step) {
    if (step > 0 && step % tc.refresh_every == 0) buffer.refresh();
    for (auto& w : windows) w = buffer.sample_window(static_cast<std::size_t>(tc.window), batch_rng);
    const double tau = tc.tau_at(step);
    LossBreakdown parts;
    try {
      parts = train_step(store, cfg, window_observations(buffer, windows), noise_rng, tau);
    } catch (const NumericalAbort& e) {
      nlohmann::json dump = e.dump();
      dump["step"] = step;
      dump["reason"] = e.what();
      for (const auto& w : windows) {
        const Trajectory& ep = buffer.episode(w.slot);
        nlohmann::json states = nlohmann::json::array();
        for (std::size_t s = 0; s < w.length; ++s) states.push_back(state_to_json(ep.states[w.start + s]));
        dump["windows"].push_back({{"episode", w.episode}, {"start", w.start}, {"states", states}});
      }
      std::ofstream(out / "abort_dump.json") << dump.dump(1) << '\n';
      throw;
    }
    metrics << parts.to_json(step).dump() << '\n';
    char row[160];
    std::snprintf(row, sizeof row, "%llu,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(step), parts.total,
                  parts.nce, parts.pred);
    curve << row;
    if (hooks.on_step) hooks.on_step(step, parts);
    const std::uint64_t done = step + 1;
    if (tc.checkpoint_every > 0 && done % tc.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "ckpt_%06llu.bin", static_cast<unsigned long long>(done));
      save_checkpoint(store, out / name);
    }
    if (hooks.on_eval && tc.eval_every > 0 && done % tc.eval_every == 0 && done != tc.steps)
      hooks.on_eval(done, store);
  }
  metrics.flush();
  curve.flush();
  save_checkpoint(store, paths.final_checkpoint);
  if (hooks.on_eval) hooks.on_eval(tc.steps, store);
  return paths;
}

}  // namespace cplab
