#include "pedkd/optim.hpp"

#include <cmath>

#include "pedkd/error.hpp"

namespace pedkd {

double LrSchedule::lr(std::uint64_t step) const {
  require(lr0 > 0.0 && total_steps > 0, "LrSchedule: lr0 and total_steps must be positive");
  const double t = static_cast<double>(std::min(step, total_steps));
  return lr0 * (1.0 - t / (static_cast<double>(total_steps) + 1.0));
}

void adam_step(const ParameterList& params, const Gradients& grads, AdamState& state,
               const LrSchedule& sched) {
  for (const Parameter* p : params) {
    if (auto it = grads.find(p); it != grads.end())
      require(it->second.same_shape(p->value), "adam_step: gradient shape mismatch for " + p->name);
    if (auto it = state.m.find(p); it != state.m.end())
      require(it->second.same_shape(p->value), "adam_step: moment shape mismatch for " + p->name);
  }
  const double lr = sched.lr(state.step);
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (Parameter* p : params) {
    auto [mi, fresh_m] = state.m.try_emplace(p, p->value.shape());
    auto [vi, fresh_v] = state.v.try_emplace(p, p->value.shape());
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    const auto git = grads.find(p);
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double g = git == grads.end() ? 0.0 : git->second[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p->value[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
  ++state.step;
}

}  // namespace pedkd
