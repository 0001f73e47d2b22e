#include "srg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "srg/rng.hpp"

namespace srg {

namespace {
real rel_error(real a, real n) {
  const real scale = std::max(real(1), std::max(std::abs(a), std::abs(n)));
  return std::abs(a - n) / scale;
}
}  // namespace

real finite_diff_check(const std::function<Var(Tape&, Var)>& f, Tensor x, real eps) {
  Parameter px{"x", std::move(x)};
  auto eval = [&](bool with_grad) -> real {
    Tape tape;
    Var loss = f(tape, tape.leaf(px));
    const real v = tape.val(loss).item();
    if (with_grad) tape.backward(loss);
    return v;
  };
  px.zero_grad();
  eval(true);
  const Tensor analytic = px.grad;
  real worst = 0;
  for (size_t i = 0; i < px.value.data.size(); ++i) {
    const real keep = px.value.data[i];
    px.value.data[i] = keep + eps;
    const real lp = eval(false);
    px.value.data[i] = keep - eps;
    const real lm = eval(false);
    px.value.data[i] = keep;
    if (!std::isfinite(lp) || !std::isfinite(lm))
      fail_numeric("finite_diff_check: non-finite evaluation at coordinate " + std::to_string(i));
    const real numeric = (lp - lm) / (2 * eps);
    worst = std::max(worst, rel_error(analytic.data[i], numeric));
  }
  return worst;
}

std::vector<BlockError> finite_diff_check_params(const std::function<real(bool)>& run,
                                                 const std::vector<Parameter*>& params,
                                                 real eps, int max_coords, std::uint64_t seed) {
  for (Parameter* p : params) p->zero_grad();
  run(true);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  std::vector<BlockError> report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    const int n = int(p.value.numel());
    std::vector<int> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords > 0 && n > max_coords) {
      Rng rng(Rng::mix(seed, fnv1a64(p.name)));
      for (int i = 0; i < max_coords; ++i)  // partial Fisher-Yates
        std::swap(coords[size_t(i)], coords[size_t(i) + size_t(rng.uniform_int(n - i))]);
      coords.resize(size_t(max_coords));
    }
    BlockError be;
    be.name = p.name;
    for (int ci : coords) {
      const real keep = p.value.data[size_t(ci)];
      p.value.data[size_t(ci)] = keep + eps;
      const real lp = run(false);
      p.value.data[size_t(ci)] = keep - eps;
      const real lm = run(false);
      p.value.data[size_t(ci)] = keep;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        fail_numeric("finite_diff_check_params: non-finite evaluation in block '" + p.name +
                     "' at coordinate " + std::to_string(ci));
      const real numeric = (lp - lm) / (2 * eps);
      const real a = analytic[pi].data[size_t(ci)];
      const real e = rel_error(a, numeric);
      if (e >= be.rel_err) {
        be.rel_err = e;
        be.index = ci;
        be.analytic = a;
        be.numeric = numeric;
      }
    }
    report.push_back(std::move(be));
  }
  std::sort(report.begin(), report.end(),
            [](const BlockError& a, const BlockError& b) { return a.rel_err > b.rel_err; });
  return report;
}

}  // namespace srg
