#include "cplab/nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <regex>
#include <sstream>

namespace cplab {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (obs_dim == 0 || slots == 0 || width == 0 || key_dim == 0 || bins < 2) fail("dimensions must be positive (bins >= 2)");
  if (b_count == 0) fail("b_count must be >= 1");
  if (b_count + 1 > slots) fail("b_count + 1 must not exceed slots");
}

namespace {

NdArray zeros(std::size_t n) { return NdArray(Shape{n}, 0.0); }

// Column blocks of Glorot matrices stacked side by side.
NdArray glorot_blocks(std::size_t fan_in, std::size_t block, std::size_t count, SeededRng& rng) {
  NdArray out(Shape{fan_in, block * count});
  for (std::size_t b = 0; b < count; ++b) {
    NdArray w = glorot_uniform(fan_in, block, rng);
    for (std::size_t i = 0; i < fan_in; ++i)
      for (std::size_t j = 0; j < block; ++j) out.at(i, b * block + j) = w.at(i, j);
  }
  return out;
}

Var dense(Tape& t, const ParameterStore& p, const std::string& prefix, Var x) {
  return add(matmul(x, t.param(p, prefix + ".w")), t.param(p, prefix + ".b"));
}

void add_dense(ParameterStore& s, const std::string& prefix, std::size_t in, std::size_t out, SeededRng& rng) {
  s.add(prefix + ".w", glorot_uniform(in, out, rng));
  s.add(prefix + ".b", zeros(out));
}

std::vector<std::size_t> iota_rows(std::size_t begin, std::size_t count) {
  std::vector<std::size_t> r(count);
  for (std::size_t i = 0; i < count; ++i) r[i] = begin + i;
  return r;
}

// out[n] = sum_m weights[n, m] * rows[n*M + m]; rows is [N*M, C], weights [N, M].
Var weighted_slot_sum(Var rows, Var weights) {
  const std::size_t n = weights.value().dim(0), m = weights.value().dim(1);
  const std::size_t c = rows.value().dim(1);
  Var scaled = mul(rows, reshape(weights, Shape{n * m, 1}));
  return sum(reshape(scaled, Shape{n, m, c}), 1);
}

Var gru_update(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var xp, Var h_prev,
               const std::optional<PlantedSlot>& planted) {
  const std::size_t d = cfg.state_dim();
  Var hz_r = matmul(h_prev, t.param(p, "f.gru.u_zr"));
  Var z = sigmoid(add(slice_cols(xp, 0, d), slice_cols(hz_r, 0, d)));
  Var r = sigmoid(add(slice_cols(xp, d, 2 * d), slice_cols(hz_r, d, 2 * d)));
  Var cand = tanh(add(slice_cols(xp, 2 * d, 3 * d), matmul(mul(r, h_prev), t.param(p, "f.gru.u_n"))));
  // h = (1 - z) * cand + z * h_prev = cand + z * (h_prev - cand)
  Var h = add(cand, mul(z, sub(h_prev, cand)));
  if (!planted) return h;
  if (planted->slot >= cfg.slots) throw std::out_of_range("planted slot out of range");
  const std::size_t n = h.value().dim(0);
  NdArray keep(h.value().shape(), 1.0), fixed(Shape{d}, 0.0);
  for (std::size_t j = 0; j < cfg.width; ++j) {
    fixed[planted->slot * cfg.width + j] = planted->value;
    for (std::size_t i = 0; i < n; ++i) keep.at(i, planted->slot * cfg.width + j) = 0.0;
  }
  return add(mask(h, keep), t.constant(fixed));
}

Var encode_obs(Tape& t, const ParameterStore& p, Var obs) {
  Var hidden = relu(dense(t, p, "f.enc.l1", obs));
  Var e = tanh(dense(t, p, "f.enc.l2", hidden));
  return add(matmul(e, t.param(p, "f.gru.w_x")), t.param(p, "f.gru.b"));
}

}  // namespace

ParameterStore init_params(const ModelConfig& cfg, SeededRng& rng) {
  cfg.validate();
  const std::size_t d = cfg.state_dim(), content = cfg.content_dim();
  ParameterStore s;
  add_dense(s, "f.enc.l1", cfg.obs_dim, cfg.enc_hidden, rng);
  add_dense(s, "f.enc.l2", cfg.enc_hidden, cfg.enc_out, rng);
  s.add("f.gru.w_x", glorot_blocks(cfg.enc_out, d, 3, rng));
  s.add("f.gru.u_zr", glorot_blocks(d, d, 2, rng));
  s.add("f.gru.u_n", glorot_uniform(d, d, rng));
  NdArray bias(Shape{3 * d}, 0.0);
  for (std::size_t i = 0; i < d; ++i) bias[i] = 1.0;  // update gate
  s.add("f.gru.b", bias);

  NdArray keys = glorot_uniform(cfg.slots, cfg.key_dim, rng);
  for (std::size_t m = 0; m < cfg.slots; ++m) {
    bool nonzero = false;
    for (std::size_t j = 0; j < cfg.key_dim; ++j) nonzero = nonzero || keys.at(m, j) != 0.0;
    if (!nonzero) keys.at(m, 0) = 1e-3;
  }
  s.add("c.keys", keys);
  add_dense(s, "c.score.l1", cfg.width + cfg.key_dim + content, cfg.score_hidden, rng);
  add_dense(s, "c.score.l2", cfg.score_hidden, 1, rng);
  add_dense(s, "c.role.l1", cfg.width + cfg.key_dim, cfg.score_hidden, rng);
  add_dense(s, "c.role.l2", cfg.score_hidden, 1, rng);

  add_dense(s, "p.l1", content + cfg.key_dim, cfg.pred_hidden, rng);
  add_dense(s, "p.l2", cfg.pred_hidden, cfg.bins, rng);

  s.add("v.log_sharpness", NdArray::scalar(std::log(kInitSharpness)));
  add_dense(s, "v.l1", cfg.width + cfg.bins + content + 1, cfg.verify_hidden, rng);
  add_dense(s, "v.l2", cfg.verify_hidden, 1, rng);
  s.add("v.gain", NdArray::scalar(1.0));

  NdArray range(Shape{cfg.slots, 2});
  for (std::size_t m = 0; m < cfg.slots; ++m) range.at(m, 0) = -1.0, range.at(m, 1) = 1.0;
  s.add(kReadoutRange, range);
  s.add(kStepCounter, NdArray::scalar(0.0));
  return s;
}

std::vector<std::string> trainable_names(const ParameterStore& store) {
  std::vector<std::string> out;
  for (const auto& [name, entry] : store.entries())
    if (name.rfind("stat.", 0) != 0) out.push_back(name);
  return out;
}

std::size_t BinSpec::bin_of(double readout) const {
  if (!(hi > lo)) return 0;
  const double x = (readout - lo) / (hi - lo) * static_cast<double>(bins);
  if (!(x > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(x), bins - 1);
}

double BinSpec::center(std::size_t b) const { return lo + (static_cast<double>(b) + 0.5) * width(); }

BinSpec bin_spec(const ParameterStore& store, const ModelConfig& cfg, std::size_t slot) {
  const NdArray& r = store.value(kReadoutRange);
  return BinSpec{r.at(slot, 0), r.at(slot, 1), cfg.bins};
}

// ---- F ---------------------------------------------------------------------------

Var encode_step(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var obs, Var h_prev,
                const std::optional<PlantedSlot>& planted) {
  const NdArray& o = obs.value();
  if (o.rank() != 2 || o.dim(1) != cfg.obs_dim)
    throw ShapeError("encode_step: observation shape " + shape_str(o.shape()) + " does not match obs_dim " +
                     std::to_string(cfg.obs_dim));
  if (h_prev.value().rank() != 2 || h_prev.value().dim(1) != cfg.state_dim() || h_prev.value().dim(0) != o.dim(0))
    throw ShapeError("encode_step: state shape " + shape_str(h_prev.value().shape()));
  return gru_update(t, p, cfg, encode_obs(t, p, obs), h_prev, planted);
}

std::vector<Var> encode_sequence(Tape& t, const ParameterStore& p, const ModelConfig& cfg,
                                 const std::vector<NdArray>& obs, Var h0,
                                 const std::optional<PlantedSlot>& planted) {
  if (obs.empty()) return {};
  const std::size_t n = h0.value().dim(0), steps = obs.size();
  NdArray stacked(Shape{steps * n, cfg.obs_dim});
  for (std::size_t s = 0; s < steps; ++s) {
    if (obs[s].size() != n * cfg.obs_dim)
      throw ShapeError("encode_sequence: observation block " + shape_str(obs[s].shape()) +
                       " does not match obs_dim " + std::to_string(cfg.obs_dim));
    std::copy(obs[s].values().begin(), obs[s].values().end(), stacked.values().begin() + s * n * cfg.obs_dim);
  }
  Var xp = encode_obs(t, p, t.constant(std::move(stacked)));
  std::vector<Var> out;
  Var h = h0;
  for (std::size_t s = 0; s < steps; ++s) {
    const auto rows = iota_rows(s * n, n);
    h = gru_update(t, p, cfg, gather_rows(xp, rows), h, planted);
    out.push_back(h);
  }
  return out;
}

// ---- C -----------------------------------------------------------------------------

std::vector<std::size_t> ConsciousState::selected_slots(std::size_t row) const {
  std::vector<std::size_t> s{a_slot.at(row)};
  s.insert(s.end(), b_slots.at(row).begin(), b_slots.at(row).end());
  return s;
}

Var slot_contents(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var h) {
  const std::size_t n = h.value().dim(0), m = cfg.slots;
  std::vector<std::size_t> key_rows(n * m);
  for (std::size_t i = 0; i < n * m; ++i) key_rows[i] = i % m;
  Var keys = gather_rows(t.param(p, "c.keys"), key_rows);
  return concat({keys, reshape(h, Shape{n * m, cfg.width})}, 1);
}

ConsciousState conscious_step(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var h,
                              Var context_prev, const NdArray& noise, double tau, bool straight_through) {
  const std::size_t n = h.value().dim(0), m = cfg.slots, k = cfg.selected();
  if (noise.shape() != Shape{n, m})
    throw ShapeError("conscious_step: noise shape " + shape_str(noise.shape()) + " expected " +
                     shape_str(Shape{n, m}));
  ConsciousState c;
  c.batch = n;
  c.noise = noise;
  c.tau = tau;

  Var contents = slot_contents(t, p, cfg, h);  // [N*M, d_k + w]
  Var keys = slice_cols(contents, 0, cfg.key_dim);
  Var values = slice_cols(contents, cfg.key_dim, cfg.content_dim());
  std::vector<std::size_t> row_of(n * m);
  for (std::size_t i = 0; i < n * m; ++i) row_of[i] = i / m;
  Var ctx = gather_rows(context_prev, row_of);

  Var score_hidden = relu(dense(t, p, "c.score.l1", concat({values, keys, ctx}, 1)));
  c.scores = reshape(dense(t, p, "c.score.l2", score_hidden), Shape{n, m});
  c.attention = softmax(c.scores, 1);
  Var role_hidden = relu(dense(t, p, "c.role.l1", concat({values, keys}, 1)));
  Var role_scores = reshape(dense(t, p, "c.role.l2", role_hidden), Shape{n, m});

  c.selection = NdArray(Shape{n, m}, 0.0);
  NdArray a_hot(Shape{n, m}, 0.0), outside(Shape{n, m}, -1e9);
  std::vector<double> noisy(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) noisy[j] = c.scores.value().at(i, j) + tau * noise.at(i, j);
    auto chosen = top_k(noisy, k);
    std::size_t a = chosen[0];
    for (auto s : chosen) {
      c.selection.at(i, s) = 1.0;
      outside.at(i, s) = 0.0;
      const double rs = role_scores.value().at(i, s), ra = role_scores.value().at(i, a);
      if (rs > ra || (rs == ra && s < a)) a = s;
    }
    a_hot.at(i, a) = 1.0;
    c.a_slot.push_back(a);
    std::vector<std::size_t> b;
    for (auto s : chosen)
      if (s != a) b.push_back(s);
    std::sort(b.begin(), b.end());
    c.b_slots.push_back(std::move(b));
  }
  c.role = softmax(add(role_scores, t.constant(outside)), 1);

  if (straight_through) {
    c.select_weight = add(t.constant(c.selection), sub(c.attention, detach(c.attention)));
    c.a_weight = add(t.constant(a_hot), sub(c.role, detach(c.role)));
  } else {
    c.select_weight = t.constant(c.selection);
    c.a_weight = t.constant(a_hot);
  }
  Var b_weight = sub(c.select_weight, c.a_weight);

  Var a_content = weighted_slot_sum(contents, c.a_weight);
  c.a_key = slice_cols(a_content, 0, cfg.key_dim);
  c.a_value = slice_cols(a_content, cfg.key_dim, cfg.content_dim());
  c.b_pooled = scale(weighted_slot_sum(contents, b_weight), 1.0 / static_cast<double>(cfg.b_count));
  c.context = scale(weighted_slot_sum(contents, c.select_weight), 1.0 / static_cast<double>(k));

  std::vector<Var> parts{a_content};
  for (std::size_t j = 0; j < cfg.b_count; ++j) {
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i * m + c.b_slots[i][j];
    parts.push_back(gather_rows(contents, rows));
  }
  c.content = concat(parts, 1);
  return c;
}

// ---- predictor / verifier -------------------------------------------------------------

Var predict_logits(Tape& t, const ParameterStore& p, const ModelConfig&, Var b_pooled, Var a_key) {
  Var hidden = relu(dense(t, p, "p.l1", concat({b_pooled, a_key}, 1)));
  return dense(t, p, "p.l2", hidden);
}

Var predict(Tape& t, const ParameterStore& p, const ModelConfig& cfg, const ConsciousState& c) {
  return softmax(predict_logits(t, p, cfg, c.b_pooled, c.a_key), 1);
}

namespace {

// Soft key-match weights [N, M] of each A key against the table.
// Rows scaled to unit length.
Var unit_rows(Var x) {
  const std::size_t r = x.shape()[0];
  Var norm2 = reshape(sum(mul(x, x), 1), Shape{r, 1});
  return mul(x, exp(scale(log(add_scalar(norm2, 1e-12)), -0.5)));
}

Var key_match(Tape& t, const ParameterStore& p, Var a_key) {
  Var sim = matmul(unit_rows(a_key), transpose(unit_rows(t.param(p, "c.keys"))));
  return softmax(mul(sim, exp(t.param(p, "v.log_sharpness"))), 1);
}

// Scores [R, 1] from retrieved values [R, w], predictions [R, V] and B pools
// [R, d_k + w]; row r is binned under the range of slot a_slots[r].
Var verify_rows(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var retrieved, Var prediction,
                Var b_pooled, std::span<const std::size_t> a_slots, std::span<const BinSpec> ranges) {
  const std::size_t r = retrieved.value().dim(0);
  NdArray centers(Shape{r, cfg.bins}), inv_width(Shape{r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    const BinSpec bins = ranges.empty() ? bin_spec(p, cfg, a_slots[i]) : ranges[a_slots[i]];
    for (std::size_t b = 0; b < cfg.bins; ++b) centers.at(i, b) = bins.center(b);
    inv_width[i] = 1.0 / std::max(bins.width(), 1e-6);
  }
  Var readout = slice_cols(retrieved, 0, 1);
  Var spread = matmul(readout, t.constant(NdArray(Shape{1, cfg.bins}, 1.0)));
  Var z = mul(sub(spread, t.constant(centers)), t.constant(inv_width));
  Var soft_bin = softmax(scale(mul(z, z), -0.5), 1);
  Var agree = reshape(sum(mul(prediction, soft_bin), 1), Shape{r, 1});
  Var consistency = log(clamp_min(agree, 1e-12));
  Var hidden = relu(dense(t, p, "v.l1", concat({retrieved, prediction, b_pooled, consistency}, 1)));
  return add(dense(t, p, "v.l2", hidden), mul(consistency, t.param(p, "v.gain")));
}

}  // namespace

Var retrieve(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var a_key, Var h_future) {
  const std::size_t n = h_future.value().dim(0);
  Var w = key_match(t, p, a_key);
  return weighted_slot_sum(reshape(h_future, Shape{n * cfg.slots, cfg.width}), w);
}

Var verify(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var h_future, const ConsciousState& c,
           Var prediction, std::span<const BinSpec> ranges) {
  return verify_rows(t, p, cfg, retrieve(t, p, cfg, c.a_key, h_future), prediction, c.b_pooled, c.a_slot,
                     ranges);
}

Var verify_all_pairs(Tape& t, const ParameterStore& p, const ModelConfig& cfg, Var h_future,
                     const ConsciousState& c, Var prediction, std::span<const BinSpec> ranges) {
  const std::size_t n = h_future.value().dim(0), m = cfg.slots, w = cfg.width;
  Var weights = key_match(t, p, c.a_key);  // [N, M]
  // Slot-major layout [M, N*w] so one matmul retrieves every (statement, future) pair.
  std::vector<std::size_t> perm(n * m);
  for (std::size_t s = 0; s < m; ++s)
    for (std::size_t j = 0; j < n; ++j) perm[s * n + j] = j * m + s;
  Var slot_major = reshape(gather_rows(reshape(h_future, Shape{n * m, w}), perm), Shape{m, n * w});
  Var retrieved = reshape(matmul(weights, slot_major), Shape{n * n, w});
  std::vector<std::size_t> rep(n * n), a_rep(n * n);
  for (std::size_t i = 0; i < n * n; ++i) rep[i] = i / n, a_rep[i] = c.a_slot[i / n];
  Var scores =
      verify_rows(t, p, cfg, retrieved, gather_rows(prediction, rep), gather_rows(c.b_pooled, rep), a_rep, ranges);
  return reshape(scores, Shape{n, n});
}

// ---- statements -------------------------------------------------------------------------

std::size_t argmax_bin(std::span<const double> d) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < d.size(); ++i)
    if (d[i] > d[best]) best = i;
  return best;
}

std::string render_statement(std::size_t a_slot, std::span<const std::size_t> b_slots,
                             std::span<const double> prediction, int horizon) {
  const std::size_t bin = argmax_bin(prediction);
  char prob[32];
  std::snprintf(prob, sizeof prob, "%.3f", prediction[bin]);
  std::ostringstream os;
  os << "slot[" << a_slot << "] in " << horizon << " steps: bin " << bin << " (p=" << prob << ") | given slots {";
  for (std::size_t i = 0; i < b_slots.size(); ++i) os << (i ? "," : "") << b_slots[i];
  os << '}';
  return os.str();
}

std::optional<StatementProjection> parse_statement(const std::string& u) {
  static const std::regex re(R"(^slot\[(\d+)\] in (-?\d+) steps: bin (\d+) \(p=([0-9.]+)\) \| given slots \{([0-9,]*)\}$)");
  std::smatch mt;
  if (!std::regex_match(u, mt, re)) return std::nullopt;
  StatementProjection s;
  s.a_slot = std::stoul(mt[1]);
  s.horizon = std::stoi(mt[2]);
  s.bin = std::stoul(mt[3]);
  std::stringstream ss(mt[5]);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) s.b_slots.push_back(std::stoul(item));
  return s;
}

}  // namespace cplab
