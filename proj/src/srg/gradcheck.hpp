#pragma once

#include <functional>
#include <string>
#include <vector>

#include "srg/tape.hpp"

namespace srg {

// Worst finite-difference mismatch within one parameter block.
struct BlockError {
  std::string name;
  real rel_err = 0;   // |analytic - numeric| / max(1, |analytic|, |numeric|)
  int index = -1;     // flat coordinate of the worst entry
  real analytic = 0;
  real numeric = 0;
};

// Central-difference check of a scalar function of one tensor input.
// `f` must rebuild its graph from the given leaf each call and return a scalar.
// Returns the worst relative error over all coordinates of x.
real finite_diff_check(const std::function<Var(Tape&, Var)>& f, Tensor x, real eps = real(1e-5));

// Central-difference check of a scalar loss against every listed parameter.
// `run(with_grad)` must recompute the loss from current parameter values and,
// when with_grad is true, accumulate gradients into each Parameter::grad.
// Checks at most max_coords coordinates per block (all if numel <= max_coords),
// chosen deterministically from `seed`. One entry per block, worst first.
std::vector<BlockError> finite_diff_check_params(const std::function<real(bool)>& run,
                                                 const std::vector<Parameter*>& params,
                                                 real eps = real(1e-5), int max_coords = 0,
                                                 std::uint64_t seed = 0);

}  // namespace srg
