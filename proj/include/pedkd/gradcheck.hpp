#pragma once

#include <functional>
#include <string>

#include "pedkd/autodiff.hpp"

namespace pedkd {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // parameter name and coordinate of the worst error
};

/// Builds a graph and returns its scalar output. Trainable tensors must be
/// registered through Graph::param.
using ScalarGraphFn = std::function<Var(Graph&)>;

/// Compares autodiff gradients with central differences of step eps.
/// Error per coordinate is |analytic - numeric| / max(1, |analytic|).
/// max_coords_per_param > 0 checks an evenly spaced subset of each tensor.
GradCheckReport grad_check(const ScalarGraphFn& f, const ParameterList& params, double eps,
                           std::size_t max_coords_per_param = 0);

/// Same check for a function of a single input tensor x.
GradCheckReport grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x, double eps);

}  // namespace pedkd
