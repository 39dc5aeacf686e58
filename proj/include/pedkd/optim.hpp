#pragma once

#include <cstdint>
#include <unordered_map>

#include "pedkd/autodiff.hpp"

namespace pedkd {

/// lr(t) = lr0 * (1 - t / (total_steps + 1)); positive for every t <= total_steps.
struct LrSchedule {
  double lr0 = 1e-4;
  std::uint64_t total_steps = 1;

  double lr(std::uint64_t step) const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::unordered_map<const Parameter*, Tensor> m;
  std::unordered_map<const Parameter*, Tensor> v;
};

/// One bias-corrected Adam update at rate sched.lr(state.step). Parameters
/// absent from grads are treated as having zero gradient.
void adam_step(const ParameterList& params, const Gradients& grads, AdamState& state,
               const LrSchedule& sched);

}  // namespace pedkd
