#include "cplab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cplab/autodiff.hpp"

namespace cplab {

// ---- statistics ----------------------------------------------------------------------

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mid-ranks over tied groups.
  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j + 1);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) pos_rank_sum += mid, ++pos;
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("auc: labels must contain both classes");
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

std::vector<std::size_t> uniform_bins(std::span<const double> x, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("uniform_bins: bins must be positive");
  std::vector<std::size_t> out(x.size(), 0);
  if (x.empty()) return out;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double width = (*hi - *lo) / static_cast<double>(bins);
  if (!(width > 0.0)) return out;
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = std::min(bins - 1, static_cast<std::size_t>((x[i] - *lo) / width));
  return out;
}

double plugin_entropy(std::span<const std::size_t> codes) {
  if (codes.empty()) return 0.0;
  std::vector<std::size_t> sorted(codes.begin(), codes.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double h = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double p = static_cast<double>(j - i) / n;
    h -= p * std::log(p);
    i = j;
  }
  return h;
}

double mutual_information(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) throw std::invalid_argument("mutual_information: length mismatch");
  const std::size_t na = a.empty() ? 0 : *std::max_element(a.begin(), a.end()) + 1;
  const std::size_t nb = b.empty() ? 0 : *std::max_element(b.begin(), b.end()) + 1;
  std::vector<double> joint(na * nb, 0.0), pa(na, 0.0), pb(nb, 0.0);
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[a[i] * nb + b[i]] += 1.0 / n;
    pa[a[i]] += 1.0 / n;
    pb[b[i]] += 1.0 / n;
  }
  double mi = 0.0;
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      const double pij = joint[i * nb + j];
      if (pij > 0.0) mi += pij * std::log(pij / (pa[i] * pb[j]));
    }
  return std::max(0.0, mi);
}

double mutual_information(std::span<const double> x, std::span<const double> y, std::size_t bins) {
  if (x.size() < kMinMiSamples)
    throw std::invalid_argument("mutual_information: needs at least " + std::to_string(kMinMiSamples) + " samples");
  const auto a = uniform_bins(x, bins), b = uniform_bins(y, bins);
  return mutual_information(a, b);
}

// ---- probes --------------------------------------------------------------------------

nlohmann::ordered_json ProbeReport::to_json() const {
  nlohmann::ordered_json j;
  j["source"] = source;
  j["pile"] = pile;
  j["auc"] = auc;
  j["accuracy"] = accuracy;
  j["n"] = n;
  j["n_test"] = n_test;
  return j;
}

ProbeReport probe_outcome(const NdArray& features, std::span<const int> labels, const EvalConfig& cfg,
                          std::uint64_t seed, std::string source, int pile) {
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (labels.size() != n) throw std::invalid_argument("probe_outcome: one label per feature row required");
  if (n < kMinProbeSamples)
    throw std::invalid_argument("probe_outcome: needs at least " + std::to_string(kMinProbeSamples) + " samples");
  const std::size_t n_train = static_cast<std::size_t>(cfg.probe_train_fraction * static_cast<double>(n));
  auto has_both = [&](std::size_t lo, std::size_t hi) {
    const auto pos = std::count(labels.begin() + lo, labels.begin() + hi, 1);
    return pos > 0 && pos < static_cast<std::ptrdiff_t>(hi - lo);
  };
  if (!has_both(0, n_train) || !has_both(n_train, n))
    throw std::invalid_argument("probe_outcome: both classes required in the train and test parts");

  // Standardize with training statistics.
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t k = 0; k < d; ++k) mu[k] += features.at(i, k) / static_cast<double>(n_train);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t k = 0; k < d; ++k) sd[k] += std::pow(features.at(i, k) - mu[k], 2) / static_cast<double>(n_train);
  for (double& s : sd) s = s > 1e-18 ? std::sqrt(s) : 1.0;
  auto standardized = [&](std::size_t lo, std::size_t hi) {
    NdArray x(Shape{hi - lo, d});
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t k = 0; k < d; ++k) x.at(i - lo, k) = (features.at(i, k) - mu[k]) / sd[k];
    return x;
  };
  const NdArray x_train = standardized(0, n_train), x_test = standardized(n_train, n);
  std::vector<std::size_t> y_train(labels.begin(), labels.begin() + n_train);

  SeededRng init = SeededRng(seed).fork("probe");
  ParameterStore store;
  NdArray w0(Shape{d, 1});
  for (auto& v : w0.values()) v = 0.01 * (init.uniform() - 0.5);
  store.add("w", w0);
  store.add("b", NdArray(Shape{1}, 0.0));
  auto logits_of = [&](Tape& t, const NdArray& x) {
    return add(matmul(t.constant(x), t.param(store, "w")), t.param(store, "b"));
  };
  const AdamHyper hyper{.lr = cfg.probe_lr};
  for (std::size_t epoch = 0; epoch < cfg.probe_epochs; ++epoch) {
    Tape t;
    Var z = logits_of(t, x_train);
    Var two = concat({t.constant(NdArray(Shape{n_train, 1}, 0.0)), z}, 1);
    Var w = t.param(store, "w");
    Var loss = add(cross_entropy_logits(two, y_train), scale(sum_all(mul(w, w)), cfg.probe_l2));
    t.backward(loss);
    adam_step(store, t.parameter_grads(), hyper);
  }
  Tape t;
  const NdArray z = logits_of(t, x_test).value();
  std::vector<double> scores(z.values().begin(), z.values().end());
  const std::span<const int> test_labels = labels.subspan(n_train);
  ProbeReport r;
  r.source = std::move(source);
  r.pile = pile;
  r.auc = auc(scores, test_labels);
  std::size_t right = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) right += (scores[i] > 0.0) == (test_labels[i] == 1);
  r.accuracy = static_cast<double>(right) / static_cast<double>(scores.size());
  r.n = n;
  r.n_test = n - n_train;
  return r;
}

std::vector<double> slot_features(const ModelConfig& cfg, std::span<const double> h,
                                  std::span<const std::size_t> slots) {
  const std::size_t w = cfg.width, m = cfg.slots;
  std::vector<double> f(m * w + m, 0.0);
  for (std::size_t s : slots) {
    for (std::size_t k = 0; k < w; ++k) f[s * w + k] = h[s * w + k];
    f[m * w + s] = 1.0;
  }
  return f;
}

// ---- statements ------------------------------------------------------------------------

std::string StatementRecord::tsv() const {
  std::ostringstream os;
  char p[32], v[32];
  std::snprintf(p, sizeof p, "%.3f", max_p);
  std::snprintf(v, sizeof v, "%.6g", verifier_score);
  os << t << '\t' << horizon << '\t' << a_slot << '\t' << argmax << '\t' << p << '\t';
  for (std::size_t i = 0; i < b_slots.size(); ++i) os << (i ? "," : "") << b_slots[i];
  os << '\t' << v << '\t';
  if (resolved_bin) os << *resolved_bin;
  else os << "NA";
  os << '\t' << utterance;
  return os.str();
}

StatementResolution resolve_statements(std::span<const StatementRecord> records) {
  StatementResolution r;
  std::vector<double> scores;
  std::vector<int> truth;
  for (const auto& s : records) {
    if (!s.resolved_bin) {
      ++r.skipped;
      continue;
    }
    scores.push_back(s.verifier_score);
    truth.push_back(*s.resolved_bin == s.argmax ? 1 : 0);
  }
  r.resolved = scores.size();
  r.correct = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), 1));
  if (r.resolved < kMinResolved)
    throw std::invalid_argument("resolve_statements: needs at least " + std::to_string(kMinResolved) +
                                " resolved statements, got " + std::to_string(r.resolved));
  // A single outcome class carries no ranking information.
  r.auc = (r.correct == 0 || r.correct == r.resolved) ? 0.5 : auc(scores, truth);
  return r;
}

// ---- reports -------------------------------------------------------------------------------

MiTable mi_table(const ModelConfig& cfg, const EvalData& data, std::size_t bins) {
  MiTable t;
  const std::size_t n = data.samples.size();
  if (n < kMinMiSamples)
    throw std::invalid_argument("mi_table: needs at least " + std::to_string(kMinMiSamples) + " samples");
  const std::size_t piles = data.samples[0].heights.size();
  std::vector<std::vector<double>> factors;
  for (std::size_t p = 0; p < piles; ++p) {
    t.factors.push_back("pile" + std::to_string(p) + ".height");
    t.factors.push_back("pile" + std::to_string(p) + ".offset");
    std::vector<double> hgt, off;
    for (const auto& s : data.samples) hgt.push_back(s.heights[p]), off.push_back(s.offsets[p]);
    factors.push_back(std::move(hgt));
    factors.push_back(std::move(off));
  }
  std::vector<std::vector<std::size_t>> factor_codes;
  for (const auto& f : factors) {
    // Factors are small integers; one code per distinct value.
    std::vector<double> sorted(f);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<std::size_t> codes;
    if (sorted.size() <= bins) {
      for (double v : f)
        codes.push_back(static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin()));
    } else {
      codes = uniform_bins(f, bins);
    }
    factor_codes.push_back(std::move(codes));
  }
  t.n = n;
  t.mi.assign(cfg.slots, std::vector<double>(factors.size(), 0.0));
  std::vector<double> counts(cfg.slots, 0.0);
  for (const auto& s : data.samples)
    for (std::size_t slot : s.selected) counts[slot] += 1.0;
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  t.selection_frequency.resize(cfg.slots);
  for (std::size_t slot = 0; slot < cfg.slots; ++slot) {
    t.selection_frequency[slot] = counts[slot] / total;
    std::vector<double> readout;
    for (const auto& s : data.samples) readout.push_back(s.h[slot * cfg.width]);
    const auto codes = uniform_bins(readout, bins);
    for (std::size_t f = 0; f < factors.size(); ++f) t.mi[slot][f] = mutual_information(codes, factor_codes[f]);
  }
  // Each (sample, pile) with a fall within the horizon contributes the mean MI
  // of its selected slots with that pile's height and offset; the random
  // reference is the same mean over all slots.
  double events = 0.0;
  for (const auto& s : data.samples)
    for (std::size_t p = 0; p < piles; ++p) {
      if (!s.labels[p]) continue;
      auto relevance = [&](std::size_t slot) { return 0.5 * (t.mi[slot][2 * p] + t.mi[slot][2 * p + 1]); };
      double sel = 0.0, all = 0.0;
      for (std::size_t slot : s.selected) sel += relevance(slot) / static_cast<double>(s.selected.size());
      for (std::size_t slot = 0; slot < cfg.slots; ++slot) all += relevance(slot) / static_cast<double>(cfg.slots);
      t.selected_mean += sel;
      t.random_mean += all;
      events += 1.0;
    }
  t.events = static_cast<std::size_t>(events);
  if (events > 0) {
    t.selected_mean /= events;
    t.random_mean /= events;
  }
  return t;
}

namespace {

nlohmann::ordered_json source_json(const SourceAuc& s) {
  nlohmann::ordered_json j;
  j["auc"] = s.auc;
  j["per_pile"] = s.per_pile;
  j["n"] = s.n;
  return j;
}

}  // namespace

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["conscious_auc"] = source_json(conscious);
  j["full_h_auc"] = source_json(full_h);
  j["random_slot_auc"] = source_json(random_k);
  j["oracle_auc"] = source_json(oracle);
  j["baseline_auc"] = source_json(baseline);
  j["verifier_statement_auc"] = {{"auc", statements.auc},
                                 {"resolved", statements.resolved},
                                 {"skipped", statements.skipped},
                                 {"correct", statements.correct}};
  nlohmann::ordered_json mi_json;
  mi_json["factors"] = mi.factors;
  mi_json["n"] = mi.n;
  mi_json["selection_frequency"] = mi.selection_frequency;
  mi_json["selected_mean"] = mi.selected_mean;
  mi_json["random_mean"] = mi.random_mean;
  mi_json["fall_events"] = mi.events;
  mi_json["matrix"] = mi.mi;
  j["mi"] = mi_json;
  nlohmann::ordered_json probe_json = nlohmann::ordered_json::array();
  for (const auto& p : probes) probe_json.push_back(p.to_json());
  j["probes"] = probe_json;
  j["seconds"] = seconds;
  return j;
}

void write_report(const std::filesystem::path& out, std::span<const EvalReport> reports,
                  std::span<const StatementRecord> statements) {
  std::filesystem::create_directories(out);
  nlohmann::ordered_json j;
  nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
  double conscious = 0, baseline = 0, oracle = 0, random_k = 0, verifier = 0;
  for (const auto& r : reports) {
    per_seed.push_back(r.to_json());
    conscious += r.conscious.auc;
    baseline += r.baseline.auc;
    oracle += r.oracle.auc;
    random_k += r.random_k.auc;
    verifier += r.statements.auc;
  }
  const double k = reports.empty() ? 1.0 : static_cast<double>(reports.size());
  j["seeds"] = reports.size();
  j["mean"] = {{"conscious_auc", conscious / k},
               {"baseline_auc", baseline / k},
               {"oracle_auc", oracle / k},
               {"random_slot_auc", random_k / k},
               {"verifier_statement_auc", verifier / k}};
  j["reports"] = per_seed;
  std::ofstream(out / "report.json") << j.dump(2) << '\n';

  std::ofstream auc_csv(out / "auc_by_seed.csv");
  auc_csv << "seed,source,auc\n";
  for (const auto& r : reports) {
    for (const auto* s : {&r.conscious, &r.full_h, &r.random_k, &r.oracle, &r.baseline})
      if (!s->source.empty()) auc_csv << r.seed << ',' << s->source << ',' << s->auc << '\n';
    auc_csv << r.seed << ",verifier," << r.statements.auc << '\n';
  }
  std::ofstream mi_csv(out / "mi_matrix.csv");
  mi_csv << "slot,factor,mi,n\n";
  if (!reports.empty()) {
    const MiTable& t = reports.front().mi;
    for (std::size_t s = 0; s < t.mi.size(); ++s)
      for (std::size_t f = 0; f < t.factors.size(); ++f)
        mi_csv << s << ',' << t.factors[f] << ',' << t.mi[s][f] << ',' << t.n << '\n';
  }
  if (!statements.empty()) {
    std::ofstream tsv(out / "statements.tsv");
    for (const auto& s : statements) tsv << s.tsv() << '\n';
  }
}

}  // namespace cplab
