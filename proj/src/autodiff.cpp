#include "pedkd/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"
#include "pedkd/error.hpp"

namespace pedkd {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Rows/cols view of a tensor whose last axis is the column axis.
std::size_t last_dim(const Shape& s) { return s.back(); }
std::size_t leading(const Shape& s) { return shape_numel(s) / s.back(); }

// col[(c*k*k + ky*k + kx), y*w + x] = img[c, y+ky-pad, x+kx-pad]
void im2col(const double* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            double* col) {
  const auto pad = static_cast<long>(k / 2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col + ((ch * k + ky) * k + kx) * h * w;
        const double* plane = img + ch * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - pad;
          double* out = row + y * w;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(out, out + w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sy) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - pad;
            out[x] = (sx < 0 || sx >= static_cast<long>(w)) ? 0.0 : src[sx];
          }
        }
      }
}

void col2im_add(const double* col, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                double* img) {
  const auto pad = static_cast<long>(k / 2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((ch * k + ky) * k + kx) * h * w;
        double* plane = img + ch * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - pad;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          double* dst = plane + static_cast<std::size_t>(sy) * w;
          const double* in = row + y * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - pad;
            if (sx >= 0 && sx < static_cast<long>(w)) dst[sx] += in[x];
          }
        }
      }
}

}  // namespace

Graph::Node& Graph::node(Var v) {
  require(v.id >= 0 && static_cast<std::size_t>(v.id) < nodes_.size(), "invalid graph variable");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Graph::Node& Graph::node(Var v) const {
  require(v.id >= 0 && static_cast<std::size_t>(v.id) < nodes_.size(), "invalid graph variable");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

Tensor& Graph::grad_of(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.numel() == 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Var Graph::push(const char* op, Tensor value, std::vector<int> inputs, BackwardFn fn) {
  require(!consumed_, "graph already consumed by backward()");
  if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](int i) { return needs(i); });
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor value) { return push("constant", std::move(value), {}, nullptr); }

Var Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
  Var v = push("param", p.value, {}, nullptr);
  nodes_.back().param = &p;
  nodes_.back().requires_grad = true;
  param_nodes_[&p] = v.id;
  return v;
}

Var Graph::frozen(const Parameter& p) { return constant(p.value); }

Var Graph::add(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  require(x.same_shape(y), "add: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += y[i];
  return push("add", std::move(out), {a.id, b.id}, [](Graph& g, int self) {
    const Node& n = g.nodes_[self];
    for (int in : n.inputs) {
      if (!g.needs(in)) continue;
      Tensor& gi = g.grad_of(in);
      for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += n.grad[i];
    }
  });
}

Var Graph::sub(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  require(x.same_shape(y), "sub: shape mismatch");
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= y[i];
  return push("sub", std::move(out), {a.id, b.id}, [](Graph& g, int self) {
    const Node& n = g.nodes_[self];
    if (g.needs(n.inputs[0])) {
      Tensor& ga = g.grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += n.grad[i];
    }
    if (g.needs(n.inputs[1])) {
      Tensor& gb = g.grad_of(n.inputs[1]);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= n.grad[i];
    }
  });
}

Var Graph::mul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  require(x.same_shape(y), "mul: shape mismatch");
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= y[i];
  return push("mul", std::move(out), {a.id, b.id}, [](Graph& g, int self) {
    const Node& n = g.nodes_[self];
    const int ia = n.inputs[0], ib = n.inputs[1];
    if (g.needs(ia)) {
      const Tensor& yb = g.nodes_[ib].value;
      Tensor& ga = g.grad_of(ia);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += n.grad[i] * yb[i];
    }
    if (g.needs(ib)) {
      const Tensor& xa = g.nodes_[ia].value;
      Tensor& gb = g.grad_of(ib);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += n.grad[i] * xa[i];
    }
  });
}

Var Graph::scale(Var a, double s) { return affine(a, s, 0.0); }

Var Graph::affine(Var a, double s, double shift) {
  Tensor out = value(a);
  for (auto& v : out.data()) v = s * v + shift;
  return push("affine", std::move(out), {a.id}, [s](Graph& g, int self) {
    const Node& n = g.nodes_[self];
    Tensor& ga = g.grad_of(n.inputs[0]);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += s * n.grad[i];
  });
}

Var Graph::add_bias(Var x, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  require(bv.rank() == 1 && bv.dim(0) == last_dim(xv.shape()),
          "add_bias: bias " + shape_str(bv.shape()) + " vs input " + shape_str(xv.shape()));
  Tensor out = xv;
  const std::size_t n = bv.numel(), rows = leading(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  return push("add_bias", std::move(out), {x.id, bias.id}, [n, rows](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    if (g.needs(nd.inputs[0])) {
      Tensor& gx = g.grad_of(nd.inputs[0]);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += nd.grad[i];
    }
    if (g.needs(nd.inputs[1])) {
      Tensor& gb = g.grad_of(nd.inputs[1]);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += nd.grad[r * n + j];
    }
  });
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require(av.rank() >= 2 && bv.rank() == 2 && last_dim(av.shape()) == bv.dim(0),
          "matmul: incompatible shapes " + shape_str(av.shape()) + " @ " + shape_str(bv.shape()));
  const std::size_t m = leading(av.shape()), k = bv.dim(0), n = bv.dim(1);
  Shape os = av.shape();
  os.back() = n;
  Tensor out(os);
  kernels::gemm_nn(m, n, k, av.ptr(), bv.ptr(), out.ptr());
  return push("matmul", std::move(out), {a.id, b.id}, [m, n, k](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    const int ia = nd.inputs[0], ib = nd.inputs[1];
    if (g.needs(ia)) {
      const double* bp = g.nodes_[ib].value.ptr();
      kernels::gemm_nt(m, k, n, nd.grad.ptr(), bp, g.grad_of(ia).ptr());
    }
    if (g.needs(ib)) {
      const double* ap = g.nodes_[ia].value.ptr();
      kernels::gemm_tn(k, n, m, ap, nd.grad.ptr(), g.grad_of(ib).ptr());
    }
  });
}

Var Graph::bmm(Var a, Var b, bool transpose_b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require(av.rank() == 3 && bv.rank() == 3 && av.dim(0) == bv.dim(0), "bmm: need [B,m,k] and [B,.,.]");
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2);
  const std::size_t n = transpose_b ? bv.dim(1) : bv.dim(2);
  require((transpose_b ? bv.dim(2) : bv.dim(1)) == k,
          "bmm: inner dimension mismatch " + shape_str(av.shape()) + " @ " + shape_str(bv.shape()));
  Tensor out({batch, m, n});
  for (std::size_t t = 0; t < batch; ++t) {
    const double* ap = av.ptr() + t * m * k;
    const double* bp = bv.ptr() + t * k * n;
    double* cp = out.ptr() + t * m * n;
    if (transpose_b)
      kernels::gemm_nt(m, n, k, ap, bp, cp);
    else
      kernels::gemm_nn(m, n, k, ap, bp, cp);
  }
  return push("bmm", std::move(out), {a.id, b.id},
              [batch, m, n, k, transpose_b](Graph& g, int self) {
                const Node& nd = g.nodes_[self];
                const int ia = nd.inputs[0], ib = nd.inputs[1];
                const double* ap = g.nodes_[ia].value.ptr();
                const double* bp = g.nodes_[ib].value.ptr();
                double* ga = g.needs(ia) ? g.grad_of(ia).ptr() : nullptr;
                double* gb = g.needs(ib) ? g.grad_of(ib).ptr() : nullptr;
                for (std::size_t t = 0; t < batch; ++t) {
                  const double* dc = nd.grad.ptr() + t * m * n;
                  const double* at = ap + t * m * k;
                  const double* bt = bp + t * k * n;
                  if (transpose_b) {
                    // c = a b^T with b [n,k]: da = dc b, db = dc^T a
                    if (ga) kernels::gemm_nn(m, k, n, dc, bt, ga + t * m * k);
                    if (gb) kernels::gemm_tn(n, k, m, dc, at, gb + t * k * n);
                  } else {
                    if (ga) kernels::gemm_nt(m, k, n, dc, bt, ga + t * m * k);
                    if (gb) kernels::gemm_tn(k, n, m, at, dc, gb + t * k * n);
                  }
                }
              });
}

Var Graph::reshape(Var a, Shape shape) {
  Tensor out = value(a).reshaped(std::move(shape));
  return push("reshape", std::move(out), {a.id}, [](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    Tensor& ga = g.grad_of(nd.inputs[0]);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += nd.grad[i];
  });
}

Var Graph::sigmoid(Var a) {
  Tensor out = value(a);
  for (auto& v : out.data()) v = stable_sigmoid(v);
  return push("sigmoid", std::move(out), {a.id}, [](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    Tensor& ga = g.grad_of(nd.inputs[0]);
    for (std::size_t i = 0; i < ga.numel(); ++i) {
      const double s = nd.value[i];
      ga[i] += nd.grad[i] * s * (1.0 - s);
    }
  });
}

Var Graph::tanh(Var a) {
  Tensor out = value(a);
  for (auto& v : out.data()) v = std::tanh(v);
  return push("tanh", std::move(out), {a.id}, [](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    Tensor& ga = g.grad_of(nd.inputs[0]);
    for (std::size_t i = 0; i < ga.numel(); ++i) {
      const double t = nd.value[i];
      ga[i] += nd.grad[i] * (1.0 - t * t);
    }
  });
}

Var Graph::relu(Var a) {
  Tensor out = value(a);
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return push("relu", std::move(out), {a.id}, [](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    Tensor& ga = g.grad_of(nd.inputs[0]);
    for (std::size_t i = 0; i < ga.numel(); ++i)
      if (nd.value[i] > 0.0) ga[i] += nd.grad[i];
  });
}

Var Graph::softmax(Var a) {
  Tensor out = value(a);
  const std::size_t n = last_dim(out.shape()), rows = leading(out.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.ptr() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) row[j] /= z;
  }
  return push("softmax", std::move(out), {a.id}, [n, rows](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    Tensor& ga = g.grad_of(nd.inputs[0]);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = nd.value.ptr() + r * n;
      const double* dy = nd.grad.ptr() + r * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += dy[j] * y[j];
      double* dx = ga.ptr() + r * n;
      for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - s);
    }
  });
}

Var Graph::log(Var a, double floor) {
  Tensor out = value(a);
  const Tensor& in = value(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::log(std::max(in[i], floor));
  return push("log", std::move(out), {a.id}, [floor](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    const Tensor& x = g.nodes_[nd.inputs[0]].value;
    Tensor& ga = g.grad_of(nd.inputs[0]);
    for (std::size_t i = 0; i < ga.numel(); ++i)
      if (x[i] > floor) ga[i] += nd.grad[i] / x[i];
  });
}

Var Graph::concat(std::span<const Var> parts) {
  require(!parts.empty(), "concat of zero tensors");
  const Shape& s0 = shape(parts[0]);
  const std::size_t rows = leading(s0);
  std::vector<std::size_t> widths;
  std::vector<int> ids;
  std::size_t total = 0;
  for (Var p : parts) {
    const Shape& s = shape(p);
    require(s.size() == s0.size() && std::equal(s.begin(), s.end() - 1, s0.begin()),
            "concat: leading dimensions differ");
    widths.push_back(s.back());
    ids.push_back(p.id);
    total += s.back();
  }
  Shape os = s0;
  os.back() = total;
  Tensor out(os);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = value(parts[k]);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.ptr() + r * widths[k], widths[k], out.ptr() + r * total + off);
    off += widths[k];
  }
  return push("concat", std::move(out), ids, [widths, rows, total](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    std::size_t off = 0;
    for (std::size_t k = 0; k < nd.inputs.size(); ++k) {
      if (g.needs(nd.inputs[k])) {
        Tensor& gk = g.grad_of(nd.inputs[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j)
            gk[r * widths[k] + j] += nd.grad[r * total + off + j];
      }
      off += widths[k];
    }
  });
}

Var Graph::sum(Var a) {
  const Tensor& v = value(a);
  double s = 0.0;
  for (double x : v.data()) s += x;
  return push("sum", Tensor::scalar(s), {a.id}, [](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    Tensor& ga = g.grad_of(nd.inputs[0]);
    const double d = nd.grad[0];
    for (auto& x : ga.data()) x += d;
  });
}

Var Graph::mean(Var a) {
  const double n = static_cast<double>(value(a).numel());
  return scale(sum(a), 1.0 / n);
}

Var Graph::mean_axis(Var a, std::size_t axis) {
  const Shape& s = shape(a);
  require(axis < s.size(), "mean_axis: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) os.push_back(s[i]);
  if (os.empty()) os.push_back(1);
  Tensor out(os);
  const Tensor& in = value(a);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += in[(o * n + j) * inner + i];
  for (auto& v : out.data()) v *= inv;
  return push("mean_axis", std::move(out), {a.id}, [outer, n, inner, inv](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    Tensor& ga = g.grad_of(nd.inputs[0]);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < inner; ++i)
          ga[(o * n + j) * inner + i] += inv * nd.grad[o * inner + i];
  });
}

Var Graph::conv2d(Var x, Var w, Var b) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(b);
  require(xv.rank() == 4 && wv.rank() == 4, "conv2d: expected [B,C,H,W] input and [O,C,k,k] kernel");
  const std::size_t batch = xv.dim(0), c = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const std::size_t o = wv.dim(0), k = wv.dim(2);
  require(wv.dim(1) == c && wv.dim(3) == k && k % 2 == 1,
          "conv2d: kernel " + shape_str(wv.shape()) + " incompatible with input " + shape_str(xv.shape()));
  require(bv.rank() == 1 && bv.dim(0) == o, "conv2d: bias must be [O]");
  const std::size_t hw = h * wd, ckk = c * k * k;
  Tensor out({batch, o, h, wd});
  std::vector<double> col(ckk * hw);
  for (std::size_t t = 0; t < batch; ++t) {
    im2col(xv.ptr() + t * c * hw, c, h, wd, k, col.data());
    double* ot = out.ptr() + t * o * hw;
    for (std::size_t oc = 0; oc < o; ++oc) std::fill(ot + oc * hw, ot + (oc + 1) * hw, bv[oc]);
    kernels::gemm_nn(o, hw, ckk, wv.ptr(), col.data(), ot);
  }
  return push("conv2d", std::move(out), {x.id, w.id, b.id},
              [batch, c, h, wd, o, k, hw, ckk](Graph& g, int self) {
                const Node& nd = g.nodes_[self];
                const int ix = nd.inputs[0], iw = nd.inputs[1], ib = nd.inputs[2];
                const Tensor& xv = g.nodes_[ix].value;
                const Tensor& wv = g.nodes_[iw].value;
                double* gx = g.needs(ix) ? g.grad_of(ix).ptr() : nullptr;
                double* gw = g.needs(iw) ? g.grad_of(iw).ptr() : nullptr;
                double* gb = g.needs(ib) ? g.grad_of(ib).ptr() : nullptr;
                std::vector<double> col(ckk * hw);
                for (std::size_t t = 0; t < batch; ++t) {
                  const double* dy = nd.grad.ptr() + t * o * hw;
                  if (gb)
                    for (std::size_t oc = 0; oc < o; ++oc) {
                      double s = 0.0;
                      for (std::size_t i = 0; i < hw; ++i) s += dy[oc * hw + i];
                      gb[oc] += s;
                    }
                  if (gw) {
                    im2col(xv.ptr() + t * c * hw, c, h, wd, k, col.data());
                    kernels::gemm_nt(o, ckk, hw, dy, col.data(), gw);
                  }
                  if (gx) {
                    std::fill(col.begin(), col.end(), 0.0);
                    kernels::gemm_tn(ckk, hw, o, wv.ptr(), dy, col.data());
                    col2im_add(col.data(), c, h, wd, k, gx + t * c * hw);
                  }
                }
              });
}

Var Graph::avg_pool2(Var x) {
  const Tensor& xv = value(x);
  require(xv.rank() == 4 && xv.dim(2) % 2 == 0 && xv.dim(3) % 2 == 0,
          "avg_pool2: expected [B,C,H,W] with even H, W");
  const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({xv.dim(0), xv.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p) {
    const double* in = xv.ptr() + p * h * w;
    double* o = out.ptr() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* r0 = in + (2 * y) * w + 2 * xx;
        const double* r1 = r0 + w;
        o[y * ow + xx] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
  return push("avg_pool2", std::move(out), {x.id}, [planes, h, w, oh, ow](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    Tensor& gx = g.grad_of(nd.inputs[0]);
    for (std::size_t p = 0; p < planes; ++p) {
      double* gi = gx.ptr() + p * h * w;
      const double* go = nd.grad.ptr() + p * oh * ow;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double d = 0.25 * go[y * ow + xx];
          double* r0 = gi + (2 * y) * w + 2 * xx;
          r0[0] += d;
          r0[1] += d;
          r0[w] += d;
          r0[w + 1] += d;
        }
    }
  });
}

Var Graph::global_avg_pool(Var x) {
  const Tensor& xv = value(x);
  require(xv.rank() == 4, "global_avg_pool: expected [B,C,H,W]");
  return mean_axis(reshape(x, {xv.dim(0), xv.dim(1), xv.dim(2) * xv.dim(3)}), 2);
}

Var Graph::global_max_pool(Var x) {
  const Tensor& xv = value(x);
  require(xv.rank() == 4, "global_max_pool: expected [B,C,H,W]");
  const std::size_t rows = xv.dim(0) * xv.dim(1), n = xv.dim(2) * xv.dim(3);
  Tensor out({xv.dim(0), xv.dim(1)});
  std::vector<std::size_t> arg(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = xv.ptr() + r * n;
    arg[r] = static_cast<std::size_t>(std::max_element(p, p + n) - p);
    out[r] = p[arg[r]];
  }
  return push("global_max_pool", std::move(out), {x.id}, [arg = std::move(arg), n](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    Tensor& gx = g.grad_of(nd.inputs[0]);
    for (std::size_t r = 0; r < arg.size(); ++r) gx[r * n + arg[r]] += nd.grad[r];
  });
}

Var Graph::patchify(Var x, std::size_t p) {
  const Tensor& xv = value(x);
  require(xv.rank() == 4 && p > 0 && xv.dim(2) % p == 0 && xv.dim(3) % p == 0,
          "patchify: image dims must be divisible by patch size");
  const std::size_t batch = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t ph = h / p, pw = w / p, feat = c * p * p;
  // Index map from output position to input position, shared by both passes.
  auto src_index = [=](std::size_t t, std::size_t token, std::size_t f) {
    const std::size_t py = token / pw, px = token % pw;
    const std::size_t ch = f / (p * p), dy = (f / p) % p, dx = f % p;
    return ((t * c + ch) * h + py * p + dy) * w + px * p + dx;
  };
  Tensor out({batch, ph * pw, feat});
  std::size_t i = 0;
  for (std::size_t t = 0; t < batch; ++t)
    for (std::size_t token = 0; token < ph * pw; ++token)
      for (std::size_t f = 0; f < feat; ++f) out[i++] = xv[src_index(t, token, f)];
  return push("patchify", std::move(out), {x.id}, [=](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    Tensor& gx = g.grad_of(nd.inputs[0]);
    std::size_t j = 0;
    for (std::size_t t = 0; t < batch; ++t)
      for (std::size_t token = 0; token < ph * pw; ++token)
        for (std::size_t f = 0; f < feat; ++f) gx[src_index(t, token, f)] += nd.grad[j++];
  });
}

namespace {
// [B, T, H, d] <-> [B, H, T, d]; forward=true maps the first layout to the second.
void permute_heads(const double* in, double* out, std::size_t b, std::size_t t, std::size_t heads,
                   std::size_t d, bool forward, bool accumulate) {
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ti = 0; ti < t; ++ti)
      for (std::size_t hi = 0; hi < heads; ++hi) {
        const std::size_t a = ((bi * t + ti) * heads + hi) * d;
        const std::size_t s = ((bi * heads + hi) * t + ti) * d;
        const double* src = in + (forward ? a : s);
        double* dst = out + (forward ? s : a);
        for (std::size_t k = 0; k < d; ++k) {
          if (accumulate)
            dst[k] += src[k];
          else
            dst[k] = src[k];
        }
      }
}
}  // namespace

Var Graph::split_heads(Var x, std::size_t heads) {
  const Tensor& xv = value(x);
  require(xv.rank() == 3 && heads > 0 && xv.dim(2) % heads == 0, "split_heads: width not divisible by heads");
  const std::size_t b = xv.dim(0), t = xv.dim(1), d = xv.dim(2) / heads;
  Tensor out({b * heads, t, d});
  permute_heads(xv.ptr(), out.ptr(), b, t, heads, d, true, false);
  return push("split_heads", std::move(out), {x.id}, [=](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    permute_heads(nd.grad.ptr(), g.grad_of(nd.inputs[0]).ptr(), b, t, heads, d, false, true);
  });
}

Var Graph::merge_heads(Var x, std::size_t heads) {
  const Tensor& xv = value(x);
  require(xv.rank() == 3 && heads > 0 && xv.dim(0) % heads == 0, "merge_heads: batch not divisible by heads");
  const std::size_t b = xv.dim(0) / heads, t = xv.dim(1), d = xv.dim(2);
  Tensor out({b, t, heads * d});
  permute_heads(xv.ptr(), out.ptr(), b, t, heads, d, false, false);
  return push("merge_heads", std::move(out), {x.id}, [=](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    permute_heads(nd.grad.ptr(), g.grad_of(nd.inputs[0]).ptr(), b, t, heads, d, true, true);
  });
}

Var Graph::smooth_l1(Var pred, Var target, double beta) {
  require(beta > 0.0, "smooth_l1: beta must be positive");
  const Tensor& p = value(pred);
  const Tensor& y = value(target);
  require(p.same_shape(y), "smooth_l1: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(y.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double d = std::abs(p[i] - y[i]);
    s += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
  }
  const double n = static_cast<double>(p.numel());
  return push("smooth_l1", Tensor::scalar(s / n), {pred.id, target.id}, [beta, n](Graph& g, int self) {
    const Node& nd = g.nodes_[self];
    const int ip = nd.inputs[0], iy = nd.inputs[1];
    const Tensor& p = g.nodes_[ip].value;
    const Tensor& y = g.nodes_[iy].value;
    const double scale = nd.grad[0] / n;
    double* gp = g.needs(ip) ? g.grad_of(ip).ptr() : nullptr;
    double* gy = g.needs(iy) ? g.grad_of(iy).ptr() : nullptr;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double d = p[i] - y[i];
      const double slope = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
      if (gp) gp[i] += scale * slope;
      if (gy) gy[i] -= scale * slope;
    }
  });
}

Gradients Graph::backward(Var output) {
  require(!consumed_, "graph already consumed by backward()");
  const Tensor& out = value(output);
  require(out.is_scalar(), "backward: output must be a scalar, got " + shape_str(out.shape()));
  consumed_ = true;
  if (needs(output.id)) {
    grad_of(output.id)[0] = 1.0;
    for (int i = output.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.numel() == 0 || !n.backward) continue;
      n.backward(*this, i);
    }
  }
  Gradients grads;
  for (const auto& [p, id] : param_nodes_) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    grads.emplace(p, n.grad.numel() ? std::move(n.grad) : Tensor(n.value.shape()));
  }
  return grads;
}

}  // namespace pedkd
