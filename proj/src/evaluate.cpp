#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <unordered_map>

#include "cplab/autodiff.hpp"
#include "cplab/harness.hpp"
#include "cplab/training.hpp"

namespace cplab {

Trajectory eval_episode(const RunConfig& cfg, std::uint64_t seed, std::uint64_t index) {
  return make_episode(cfg.env, seed + cfg.eval.seed_offset, index, cfg.eval.episode_length);
}

EvalData collect_eval(const ParameterStore& store, const RunConfig& cfg, std::uint64_t seed) {
  const ModelConfig& m = cfg.model;
  const std::size_t episodes = cfg.eval.episodes, len = cfg.eval.episode_length;
  const std::size_t tc = cfg.train.conscious_index(), window = static_cast<std::size_t>(cfg.train.window);
  const int horizon = cfg.train.horizon;
  const std::size_t piles = static_cast<std::size_t>(cfg.env.piles);
  std::vector<Trajectory> eps;
  for (std::size_t e = 0; e < episodes; ++e) eps.push_back(eval_episode(cfg, seed, e));

  EvalData data;
  std::vector<std::vector<EvalSample>> by_episode(episodes);
  std::vector<std::vector<StatementRecord>> statements(episodes);
  const NdArray zero_noise(Shape{episodes, m.slots}, 0.0);
  for (std::size_t t = tc; t + window - tc <= len; ++t) {
    std::vector<NdArray> obs;
    for (std::size_t s = 0; s < window; ++s) {
      NdArray block(Shape{episodes, m.obs_dim});
      for (std::size_t e = 0; e < episodes; ++e) {
        const auto& src = eps[e].observations[t - tc + s].values();
        std::copy(src.begin(), src.end(), block.values().begin() + e * m.obs_dim);
      }
      obs.push_back(std::move(block));
    }
    Tape tape;
    auto states = encode_sequence(tape, store, m, obs, tape.constant(NdArray(Shape{episodes, m.state_dim()}, 0.0)));
    Var context = tape.constant(NdArray(Shape{episodes, m.content_dim()}, 0.0));
    if (tc >= 1) context = conscious_step(tape, store, m, states[tc - 1], context, zero_noise, 0.0).context;
    const ConsciousState c = conscious_step(tape, store, m, states[tc], context, zero_noise, 0.0);
    Var pred = predict(tape, store, m, c);
    const Var future = states.back();
    // Truth bins and verifier scores use the ranges of the evaluation futures
    // at this t, as training does per batch.
    const auto ranges = batch_readout_ranges(m, future.value());
    const NdArray scores = verify(tape, store, m, future, c, pred, ranges).value();
    const NdArray& h = states[tc].value();
    for (std::size_t e = 0; e < episodes; ++e) {
      EvalSample s;
      s.episode = e;
      s.t = t;
      s.h.assign(h.values().begin() + e * m.state_dim(), h.values().begin() + (e + 1) * m.state_dim());
      s.selected = c.selected_slots(e);
      const WorldState& ws = eps[e].states[t];
      for (std::size_t p = 0; p < piles; ++p) {
        const Pile& pile = ws.piles[p];
        s.standing.push_back(pile.status == PileStatus::kStanding);
        s.labels.push_back(eps[e].falls_within(t, static_cast<int>(p), horizon));
        s.oracle.push_back(oracle_event_prob(cfg.env, ws, static_cast<int>(p), horizon));
        s.heights.push_back(pile.height);
        s.offsets.push_back(pile.offset);
      }
      by_episode[e].push_back(std::move(s));

      StatementRecord r;
      r.episode = e;
      r.t = t;
      r.horizon = horizon;
      r.a_slot = c.a_slot[e];
      r.b_slots = c.b_slots[e];
      const std::span<const double> dist(pred.value().values().data() + e * m.bins, m.bins);
      r.argmax = argmax_bin(dist);
      r.max_p = dist[r.argmax];
      r.verifier_score = scores[e];
      r.resolved_bin = ranges[r.a_slot].bin_of(future.value().at(e, r.a_slot * m.width));
      r.utterance = render_statement(r.a_slot, r.b_slots, dist, horizon);
      statements[e].push_back(std::move(r));
    }
  }
  for (std::size_t e = 0; e < episodes; ++e) {
    std::move(by_episode[e].begin(), by_episode[e].end(), std::back_inserter(data.samples));
    std::move(statements[e].begin(), statements[e].end(), std::back_inserter(data.statements));
  }
  return data;
}

namespace {

// Rows of one pile's evaluation population and where its test part starts.
struct PileSplit {
  std::vector<std::size_t> rows;
  std::size_t n_train = 0;
};

PileSplit split_for(const EvalData& data, std::size_t pile, double train_fraction) {
  PileSplit s;
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    if (data.samples[i].standing[pile]) s.rows.push_back(i);
  s.n_train = static_cast<std::size_t>(train_fraction * static_cast<double>(s.rows.size()));
  return s;
}

SourceAuc probe_source(const std::string& name, const EvalData& data, const RunConfig& cfg, std::uint64_t seed,
                       const std::function<std::vector<double>(const EvalSample&)>& featurize,
                       std::vector<ProbeReport>& probes) {
  SourceAuc out;
  out.source = name;
  const std::size_t piles = data.samples.front().labels.size();
  for (std::size_t p = 0; p < piles; ++p) {
    const PileSplit split = split_for(data, p, cfg.eval.probe_train_fraction);
    const std::size_t d = featurize(data.samples.front()).size();
    NdArray x(Shape{split.rows.size(), d});
    std::vector<int> y;
    for (std::size_t i = 0; i < split.rows.size(); ++i) {
      const auto f = featurize(data.samples[split.rows[i]]);
      std::copy(f.begin(), f.end(), x.values().begin() + i * d);
      y.push_back(data.samples[split.rows[i]].labels[p]);
    }
    ProbeReport r = probe_outcome(x, y, cfg.eval, seed, name, static_cast<int>(p));
    out.per_pile.push_back(r.auc);
    out.n += r.n_test;
    probes.push_back(std::move(r));
  }
  out.auc = std::accumulate(out.per_pile.begin(), out.per_pile.end(), 0.0) / static_cast<double>(piles);
  return out;
}

// AUC of given per-row scores on each pile's held-out rows.
SourceAuc score_source(const std::string& name, const EvalData& data, const RunConfig& cfg,
                       const std::function<double(std::size_t row, std::size_t pile)>& score) {
  SourceAuc out;
  out.source = name;
  const std::size_t piles = data.samples.front().labels.size();
  for (std::size_t p = 0; p < piles; ++p) {
    const PileSplit split = split_for(data, p, cfg.eval.probe_train_fraction);
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i = split.n_train; i < split.rows.size(); ++i) {
      s.push_back(score(split.rows[i], p));
      y.push_back(data.samples[split.rows[i]].labels[p]);
    }
    out.per_pile.push_back(auc(s, y));
    out.n += s.size();
  }
  out.auc = std::accumulate(out.per_pile.begin(), out.per_pile.end(), 0.0) / static_cast<double>(piles);
  return out;
}

}  // namespace

SourceAuc baseline_auc(const BaselineModel& model, const EvalData& data, const RunConfig& cfg, std::uint64_t seed) {
  // Rollout scores for every held-out row of any pile.
  std::map<std::size_t, std::vector<double>> cache;
  std::map<std::uint64_t, Trajectory> episodes;
  auto score = [&](std::size_t r, std::size_t p) {
    auto it = cache.find(r);
    if (it == cache.end()) {
      const EvalSample& s = data.samples[r];
      auto ep = episodes.find(s.episode);
      if (ep == episodes.end()) ep = episodes.emplace(s.episode, eval_episode(cfg, seed, s.episode)).first;
      SeededRng rng = SeededRng(seed).fork("rollout:" + std::to_string(s.episode) + ":" + std::to_string(s.t));
      it = cache.emplace(r, baseline_event_scores(model, cfg, ep->second, s.t, rng)).first;
    }
    return it->second[p];
  };
  return score_source("baseline", data, cfg, score);
}

EvalReport evaluate(const ParameterStore& store, const RunConfig& cfg, std::uint64_t seed,
                    const EvalOptions& options, EvalData* data_out) {
  const auto started = std::chrono::steady_clock::now();
  EvalReport report;
  report.seed = seed;
  EvalData data = collect_eval(store, cfg, seed);
  const ModelConfig& m = cfg.model;

  report.conscious = probe_source("conscious", data, cfg, seed,
                                  [&](const EvalSample& s) { return slot_features(m, s.h, s.selected); },
                                  report.probes);
  report.full_h = probe_source("full_h", data, cfg, seed, [](const EvalSample& s) { return s.h; }, report.probes);
  // Fixed random slot sets per row, same count as the conscious selection.
  std::vector<std::vector<std::size_t>> random_sets;
  SeededRng pick = SeededRng(seed).fork("random-k");
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    std::vector<std::size_t> all(m.slots);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t j = 0; j < m.selected(); ++j) std::swap(all[j], all[j + pick.below(m.slots - j)]);
    all.resize(m.selected());
    random_sets.push_back(std::move(all));
  }
  std::size_t row = 0;
  std::unordered_map<const EvalSample*, std::size_t> index;
  for (const auto& s : data.samples) index[&s] = row++;
  report.random_k = probe_source("random_k", data, cfg, seed,
                                 [&](const EvalSample& s) { return slot_features(m, s.h, random_sets[index[&s]]); },
                                 report.probes);
  report.oracle = score_source("oracle", data, cfg,
                               [&](std::size_t r, std::size_t p) { return data.samples[r].oracle[p]; });

  if (options.baseline) {
    BaselineModel model;
    if (options.trained_baseline) {
      model = *options.trained_baseline;
    } else {
      SeededRng init = SeededRng(cfg.train.seed).fork("baseline-init");
      model = init_baseline(cfg, init);
      train_baseline(model, cfg);
    }
    report.baseline = baseline_auc(model, data, cfg, seed);
  }

  report.statements = resolve_statements(data.statements);
  report.mi = mi_table(m, data, cfg.eval.mi_bins);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (data_out) *data_out = std::move(data);
  return report;
}

}  // namespace cplab
