#pragma once

#include "pedkd/tensor.hpp"

namespace pedkd {

/// Mean over elements of 0.5 d^2 / beta for |d| < beta, else |d| - 0.5 beta.
double smooth_l1(const Tensor& pred, const Tensor& target, double beta = 1.0);

}  // namespace pedkd
