#include "cplab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cplab {

namespace {

void check_step(double step) {
  if (!(step > 0.0 && step <= 1e-3))
    throw std::invalid_argument("grad_check: step must lie in (0, 1e-3], got " + std::to_string(step));
}

double rel_error(double analytic, double numeric) {
  if (!std::isfinite(analytic)) return std::numeric_limits<double>::infinity();
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

void note(GradCheckResult& r, double err, const std::string& where) {
  ++r.coords;
  if (err > r.max_error || (std::isinf(err) && !std::isinf(r.max_error))) {
    r.max_error = err;
    r.worst = where;
  }
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<NdArray>& point, double step) {
  check_step(step);
  auto eval = [&](const std::vector<NdArray>& at) {
    Tape t;
    std::vector<Var> in;
    for (const auto& a : at) in.push_back(t.constant(a));
    return f(t, in).item();
  };

  Tape tape;
  std::vector<Var> inputs;
  for (std::size_t i = 0; i < point.size(); ++i) inputs.push_back(tape.input(point[i], "x" + std::to_string(i)));
  Var out = f(tape, inputs);
  tape.backward(out);

  GradCheckResult r;
  std::vector<NdArray> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const NdArray analytic = tape.grad(inputs[i]);
    for (std::size_t j = 0; j < point[i].size(); ++j) {
      const double x0 = point[i][j];
      probe[i][j] = x0 + step;
      const double fp = eval(probe);
      probe[i][j] = x0 - step;
      const double fm = eval(probe);
      probe[i][j] = x0;
      note(r, rel_error(analytic[j], (fp - fm) / (2.0 * step)),
           "x" + std::to_string(i) + "[" + std::to_string(j) + "]");
    }
  }
  return r;
}

GradCheckResult grad_check_params(const ParameterStore& store, const StoreLossFn& loss, double step,
                                  std::size_t max_coords, SeededRng* rng,
                                  const std::vector<std::string>& only) {
  check_step(step);
  Tape tape;
  Var out = loss(tape, store);
  tape.backward(out);
  const auto grads = tape.parameter_grads();

  ParameterStore probe = store;
  auto eval = [&]() {
    Tape t;
    return loss(t, probe).item();
  };

  GradCheckResult r;
  for (const auto& [name, entry] : store.entries()) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    auto git = grads.find(name);
    const std::size_t n = entry.value.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords > 0 && n > max_coords) {
      if (rng == nullptr) throw std::invalid_argument("grad_check_params: sampling needs an rng");
      for (std::size_t i = 0; i < max_coords; ++i)
        std::swap(coords[i], coords[i + rng->below(n - i)]);
      coords.resize(max_coords);
    }
    auto values = probe.mutable_values(name);
    for (auto j : coords) {
      const double analytic = git == grads.end() ? 0.0 : git->second[j];
      const double x0 = values[j];
      values[j] = x0 + step;
      const double fp = eval();
      values[j] = x0 - step;
      const double fm = eval();
      values[j] = x0;
      note(r, rel_error(analytic, (fp - fm) / (2.0 * step)), name + "[" + std::to_string(j) + "]");
    }
  }
  return r;
}

double relu_margin(const Tape& tape) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t id = 0; id < tape.size(); ++id) {
    const Node& n = tape.node(id);
    if (n.op != OpKind::kRelu) continue;
    for (double x : tape.node(n.parents[0]).value.values()) margin = std::min(margin, std::abs(x));
  }
  return margin;
}

double relu_margin(const ParameterStore& store, const StoreLossFn& loss) {
  Tape t;
  loss(t, store);
  return relu_margin(t);
}

}  // namespace cplab
