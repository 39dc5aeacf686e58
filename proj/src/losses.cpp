#include "pedkd/losses.hpp"

#include "pedkd/autodiff.hpp"

namespace pedkd {

double smooth_l1(const Tensor& pred, const Tensor& target, double beta) {
  Graph g;
  return g.value(g.smooth_l1(g.constant(pred), g.constant(target), beta)).item();
}

}  // namespace pedkd
