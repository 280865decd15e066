#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cplab/autodiff.hpp"
#include "cplab/params.hpp"
#include "cplab/rng.hpp"

namespace cplab {

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;
using StoreLossFn = std::function<Var(Tape&, const ParameterStore&)>;

struct GradCheckResult {
  double max_error = 0.0;
  std::string worst;  // "<input or parameter>[<flat index>]"
  std::size_t coords = 0;
};

// Max over coordinates of |analytic - central| / max(1, |analytic|, |central|).
// A non-finite analytic gradient reports +inf.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<NdArray>& point, double step);

// Same check against every entry of a parameter store. With max_coords > 0,
// at most that many coordinates per entry are sampled with `rng`.
GradCheckResult grad_check_params(const ParameterStore& store, const StoreLossFn& loss, double step,
                                  std::size_t max_coords = 0, SeededRng* rng = nullptr,
                                  const std::vector<std::string>& only = {});

// Smallest |input| over every relu node on the tape (+inf without relus).
// Points closer than the check step to a kink give meaningless differences.
double relu_margin(const Tape& tape);
double relu_margin(const ParameterStore& store, const StoreLossFn& loss);

}  // namespace cplab
