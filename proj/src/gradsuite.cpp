#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cplab/autodiff.hpp"
#include "cplab/gradcheck.hpp"
#include "cplab/harness.hpp"

namespace cplab {

namespace {

constexpr double kStep = 1e-6;
// Skip points closer than this to a relu kink.
constexpr double kMinReluMargin = 1e-4;

NdArray random_array(SeededRng& rng, const Shape& shape, double lo, double hi) {
  NdArray a(shape);
  for (auto& x : a.values()) x = lo + (hi - lo) * rng.uniform();
  return a;
}

NdArray away_from_zero(NdArray a, double gap = 1e-2) {
  for (auto& x : a.values())
    if (std::abs(x) < gap) x = x < 0 ? -gap : gap;
  return a;
}

struct PrimitiveCase {
  const char* name;
  ScalarFn f;
  std::vector<Shape> shapes;
  double lo, hi;
  bool kink;
};

std::vector<GradSuiteEntry> primitive_suite(SeededRng& rng, std::size_t points) {
  static const std::vector<std::size_t> rows = {2, 0, 1};
  static const std::vector<std::size_t> cols = {1, 2, 0, 2};
  NdArray keep(Shape{3, 4}, 1.0);
  keep[1] = keep[6] = 0.0;
  // A fixed random readout turns every output into a scalar.
  const NdArray weights = random_array(rng, Shape{64}, -1.0, 1.0);
  auto readout = [weights](Tape& t, Var y) {
    NdArray w(y.shape());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = weights[i % weights.size()];
    return sum_all(mul(y, t.constant(w)));
  };
  const std::vector<PrimitiveCase> cases = {
      {"matmul", [=](Tape& t, auto in) { return readout(t, matmul(in[0], in[1])); }, {{3, 4}, {4, 2}}, -1, 1, false},
      {"transpose", [=](Tape& t, auto in) { return readout(t, transpose(in[0])); }, {{3, 4}}, -1, 1, false},
      {"add", [=](Tape& t, auto in) { return readout(t, add(in[0], in[1])); }, {{3, 4}, {3, 4}}, -1, 1, false},
      {"add_row", [=](Tape& t, auto in) { return readout(t, add(in[0], in[1])); }, {{3, 4}, {4}}, -1, 1, false},
      {"sub_col", [=](Tape& t, auto in) { return readout(t, sub(in[0], in[1])); }, {{3, 4}, {3, 1}}, -1, 1, false},
      {"mul", [=](Tape& t, auto in) { return readout(t, mul(in[0], in[1])); }, {{3, 4}, {3, 4}}, -1, 1, false},
      {"mul_scalar", [=](Tape& t, auto in) { return readout(t, mul(in[0], in[1])); }, {{3, 4}, {1}}, -1, 1, false},
      {"scale", [=](Tape& t, auto in) { return readout(t, scale(in[0], -2.5)); }, {{3, 4}}, -1, 1, false},
      {"add_scalar", [=](Tape& t, auto in) { return readout(t, add_scalar(in[0], 0.3)); }, {{3, 4}}, -1, 1, false},
      {"tanh", [=](Tape& t, auto in) { return readout(t, tanh(in[0])); }, {{3, 4}}, -2, 2, false},
      {"sigmoid", [=](Tape& t, auto in) { return readout(t, sigmoid(in[0])); }, {{3, 4}}, -3, 3, false},
      {"relu", [=](Tape& t, auto in) { return readout(t, relu(in[0])); }, {{3, 4}}, -1, 1, true},
      {"exp", [=](Tape& t, auto in) { return readout(t, exp(in[0])); }, {{3, 4}}, -1, 1, false},
      {"log", [=](Tape& t, auto in) { return readout(t, log(in[0])); }, {{3, 4}}, 0.5, 2, false},
      {"clamp_min", [=](Tape& t, auto in) { return readout(t, clamp_min(in[0], 0.0)); }, {{3, 4}}, -1, 1, true},
      {"sum0", [=](Tape& t, auto in) { return readout(t, sum(in[0], 0)); }, {{3, 4}}, -1, 1, false},
      {"mean1", [=](Tape& t, auto in) { return readout(t, mean(in[0], 1)); }, {{3, 4}}, -1, 1, false},
      {"sum_all", [=](Tape&, auto in) { return sum_all(mul(in[0], in[0])); }, {{3, 4}}, -1, 1, false},
      {"mean_all", [=](Tape&, auto in) { return mean_all(mul(in[0], in[0])); }, {{3, 4}}, -1, 1, false},
      {"softmax0", [=](Tape& t, auto in) { return readout(t, softmax(in[0], 0)); }, {{3, 4}}, -2, 2, false},
      {"softmax1", [=](Tape& t, auto in) { return readout(t, softmax(in[0], 1)); }, {{3, 4}}, -2, 2, false},
      {"concat", [=](Tape& t, auto in) { return readout(t, concat({in[0], in[1]}, 1)); }, {{3, 4}, {3, 2}}, -1, 1,
       false},
      {"gather_rows", [=](Tape& t, auto in) { return readout(t, gather_rows(in[0], rows)); }, {{3, 4}}, -1, 1, false},
      {"slice_cols", [=](Tape& t, auto in) { return readout(t, slice_cols(in[0], 1, 3)); }, {{3, 4}}, -1, 1, false},
      {"mask", [=](Tape& t, auto in) { return readout(t, mask(in[0], keep)); }, {{3, 4}}, -1, 1, false},
      {"reshape", [=](Tape& t, auto in) { return readout(t, reshape(in[0], {2, 6})); }, {{3, 4}}, -1, 1, false},
      {"pick", [=](Tape& t, auto in) { return readout(t, pick(transpose(in[0]), cols)); }, {{3, 4}}, -1, 1, false},
      {"squared_error", [=](Tape&, auto in) { return squared_error(in[0], in[1]); }, {{3, 4}, {3, 4}}, -1, 1, false},
      {"cross_entropy", [=](Tape&, auto in) { return cross_entropy_logits(in[0], rows); }, {{3, 4}}, -3, 3, false},
  };
  std::vector<GradSuiteEntry> out;
  for (const auto& c : cases) {
    GradSuiteEntry e{std::string("primitive/") + c.name, false, 0.0, 0};
    for (std::size_t point = 0; point < points; ++point) {
      std::vector<NdArray> at;
      for (const auto& s : c.shapes) {
        NdArray a = random_array(rng, s, c.lo, c.hi);
        at.push_back(c.kink ? away_from_zero(std::move(a)) : std::move(a));
      }
      e.max_error = std::max(e.max_error, grad_check(c.f, at, kStep).max_error);
      ++e.points;
    }
    out.push_back(std::move(e));
  }
  return out;
}

// Fresh initialization with small random biases so relu units are spread
// around their kinks.
ParameterStore random_params(const ModelConfig& cfg, SeededRng& rng) {
  ParameterStore p = init_params(cfg, rng);
  for (auto& [name, e] : p.entries())
    if (name.size() > 2 && name.substr(name.size() - 2) == ".b")
      for (auto& x : e.value.values()) x = 0.2 * (rng.uniform() - 0.5);
  return p;
}

using PointLoss = std::function<StoreLossFn(SeededRng&)>;

GradSuiteEntry composite(const std::string& name, const ModelConfig& cfg, SeededRng& rng, std::size_t points,
                         std::size_t coords, const PointLoss& make_loss, const std::vector<std::string>& only) {
  GradSuiteEntry e{"network/" + name, true, 0.0, 0};
  for (std::size_t attempt = 0; e.points < points && attempt < 50 * points; ++attempt) {
    ParameterStore p = random_params(cfg, rng);
    const StoreLossFn loss = make_loss(rng);
    if (relu_margin(p, loss) < kMinReluMargin) continue;
    const auto names = only.empty() ? trainable_names(p) : only;
    e.max_error = std::max(e.max_error, grad_check_params(p, loss, kStep, coords, &rng, names).max_error);
    ++e.points;
  }
  if (e.points < points) e.max_error = std::numeric_limits<double>::infinity();
  return e;
}

}  // namespace

std::vector<GradSuiteEntry> gradient_suite(const ModelConfig& cfg, std::uint64_t seed, std::size_t points,
                                           std::size_t coords) {
  SeededRng rng = SeededRng(seed).fork("gradient-suite");
  std::vector<GradSuiteEntry> out = primitive_suite(rng, points);
  const std::size_t n = 2, steps = 3;
  auto obs_batch = [&](SeededRng& r) {
    std::vector<NdArray> obs;
    for (std::size_t s = 0; s < steps; ++s) obs.push_back(random_array(r, Shape{n, cfg.obs_dim}, 0.0, 1.0));
    return obs;
  };
  auto zeros = [](Shape s) { return NdArray(std::move(s), 0.0); };

  out.push_back(composite("representation_rnn", cfg, rng, points, coords, [&](SeededRng& r) -> StoreLossFn {
    const auto obs = obs_batch(r);
    const NdArray proj = random_array(r, Shape{n, cfg.state_dim()}, -1.0, 1.0);
    return [=](Tape& t, const ParameterStore& s) {
      auto seq = encode_sequence(t, s, cfg, obs, t.constant(zeros({n, cfg.state_dim()})));
      return sum_all(mul(seq.back(), t.constant(proj)));
    };
  }, {}));

  out.push_back(composite("predictor", cfg, rng, points, coords, [&](SeededRng& r) -> StoreLossFn {
    const NdArray bp = random_array(r, Shape{n, cfg.content_dim()}, -1.0, 1.0);
    const NdArray ak = random_array(r, Shape{n, cfg.key_dim}, -1.0, 1.0);
    std::vector<std::size_t> target(n);
    for (auto& b : target) b = r.below(cfg.bins);
    return [=](Tape& t, const ParameterStore& s) {
      return cross_entropy_logits(predict_logits(t, s, cfg, t.constant(bp), t.constant(ak)), target);
    };
  }, {"p.l1.w", "p.l1.b", "p.l2.w", "p.l2.b"}));

  out.push_back(composite("verifier", cfg, rng, points, coords, [&](SeededRng& r) -> StoreLossFn {
    const NdArray h = random_array(r, Shape{n, cfg.state_dim()}, -1.0, 1.0);
    const NdArray future = random_array(r, Shape{n, cfg.state_dim()}, -1.0, 1.0);
    const NdArray noise = gumbel_sample(r, Shape{n, cfg.slots});
    return [=](Tape& t, const ParameterStore& s) {
      ConsciousState c = conscious_step(t, s, cfg, t.constant(h), t.constant(zeros({n, cfg.content_dim()})), noise,
                                        1.0, false);
      Var pred = predict(t, s, cfg, c);
      std::vector<std::size_t> diag(n);
      std::iota(diag.begin(), diag.end(), 0);
      return cross_entropy_logits(verify_all_pairs(t, s, cfg, t.constant(future), c, pred), diag);
    };
  }, {"v.l1.w", "v.l1.b", "v.l2.w", "v.l2.b", "v.gain", "v.log_sharpness", "c.keys"}));

  out.push_back(composite("conscious_fixed_selection", cfg, rng, points, coords, [&](SeededRng& r) -> StoreLossFn {
    const auto obs = obs_batch(r);
    const NdArray noise = gumbel_sample(r, Shape{n, cfg.slots});
    return [=](Tape& t, const ParameterStore& s) {
      auto seq = encode_sequence(t, s, cfg, obs, t.constant(zeros({n, cfg.state_dim()})));
      ConsciousState c = conscious_step(t, s, cfg, seq[0], t.constant(zeros({n, cfg.content_dim()})), noise, 1.0,
                                        false);
      Var pred = predict(t, s, cfg, c);
      std::vector<std::size_t> diag(n);
      std::iota(diag.begin(), diag.end(), 0);
      return add(cross_entropy_logits(verify_all_pairs(t, s, cfg, seq.back(), c, pred), diag),
                 add(sum_all(mul(pred, pred)), sum_all(mul(c.context, c.context))));
    };
  }, {}));
  return out;
}

}  // namespace cplab
