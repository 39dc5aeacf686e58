#include "pedkd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "pedkd/error.hpp"

namespace pedkd {

namespace {

double evaluate(const ScalarGraphFn& f) {
  Graph g;
  const Var out = f(g);
  require(g.value(out).is_scalar(), "grad_check: function must return a scalar");
  return g.value(out).item();
}

}  // namespace

GradCheckReport grad_check(const ScalarGraphFn& f, const ParameterList& params, double eps,
                           std::size_t max_coords_per_param) {
  require(eps > 0.0 && eps <= 1e-2, "grad_check: eps must lie in (0, 1e-2]");
  Gradients analytic;
  {
    Graph g;
    const Var out = f(g);
    require(g.value(out).is_scalar(), "grad_check: function must return a scalar");
    analytic = g.backward(out);
  }
  GradCheckReport report;
  for (Parameter* p : params) {
    const auto it = analytic.find(p);
    const Tensor zero(p->value.shape());
    const Tensor& grad = it == analytic.end() ? zero : it->second;
    const std::size_t n = p->value.numel();
    const std::size_t count = max_coords_per_param == 0 ? n : std::min(n, max_coords_per_param);
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t i = count == n ? c : (c * n) / count;
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = evaluate(f);
      p->value[i] = saved - eps;
      const double down = evaluate(f);
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(grad[i] - numeric) / std::max(1.0, std::abs(grad[i]));
      ++report.coords_checked;
      if (err >= report.max_rel_error) {
        report.max_rel_error = err;
        report.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

GradCheckReport grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x, double eps) {
  Parameter input{"x", x};
  return grad_check([&](Graph& g) { return f(g, g.param(input)); }, {&input}, eps);
}

}  // namespace pedkd
