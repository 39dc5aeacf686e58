#include "pedkd/grad_suite.hpp"

#include "pedkd/distillation.hpp"
#include "pedkd/ensemble.hpp"
#include "pedkd/rng.hpp"
#include "pedkd/trajectory.hpp"

namespace pedkd {

namespace {

constexpr double kEps = 1e-6;

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor random_targets(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (auto& v : t.data()) v = rng.uniform(0.0, 1.0) < 0.4 ? 1.0 : 0.0;
  return t;
}

StudentConfig small_student(Backbone b) {
  StudentConfig c;
  c.backbone = b;
  c.height = 8;
  c.width = 8;
  c.embed_dim = 5;
  c.num_classes = 4;
  c.conv_channels = {3, 4, 5};
  c.patch = 4;
  c.token_dim = 4;
  c.heads = 2;
  c.blocks = 1;
  return c;
}

GradCheckReport check_student(Backbone b, std::uint64_t seed, Rng& rng) {
  StudentEncoder enc(small_student(b), seed);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
  const Tensor y = random_targets(2, 4, rng);
  return grad_check(
      [&](Graph& g) { return bce_loss(g, enc.forward(g, g.constant(x), ParamMode::trainable).logits, y); },
      enc.parameters(), kEps);
}

}  // namespace

std::vector<GradSuiteEntry> gradient_suite(std::uint64_t seed) {
  Rng rng = Rng(seed).split("gradient-suite");
  std::vector<GradSuiteEntry> out;
  out.push_back({"student.conv", check_student(Backbone::conv, seed, rng)});
  out.push_back({"student.attention", check_student(Backbone::attention, seed, rng)});

  {
    MlpHead head("head", 5, 6, 4, seed, false);
    const Tensor x = random_tensor({3, 5}, rng, -1.0, 1.0);
    const Tensor y = random_targets(3, 4, rng);
    out.push_back({"mlp_head", grad_check([&](Graph& g) {
                     return bce_loss(g, head.forward(g, g.constant(x), ParamMode::trainable), y);
                   },
                                          head.parameters(), kEps)});
  }

  {
    GateNetwork gate(3, seed, 3, 4);
    const Tensor img = random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
    std::vector<Tensor> experts;
    for (int i = 0; i < 3; ++i) experts.push_back(random_tensor({2, 5}, rng, -1.0, 1.0));
    const Tensor w = random_tensor({5, 1}, rng, -1.0, 1.0);
    // Random weights everywhere, including the zero-initialised output layer.
    for (auto* p : gate.parameters()) p->value = random_tensor(p->value.shape(), rng, -0.5, 0.5);
    out.push_back({"moe_gate", grad_check([&](Graph& g) {
                     std::vector<Var> es;
                     for (const auto& e : experts) es.push_back(g.constant(e));
                     auto mixed = moe_combine(g, es, gate.logits(g, g.constant(img), ParamMode::trainable));
                     return g.sum(g.tanh(g.matmul(mixed.combined, g.constant(w))));
                   },
                                        gate.parameters(), kEps)});
  }

  {
    QueryEnsembleParams q(5, 4, 3, seed);
    std::vector<Tensor> experts;
    for (int i = 0; i < 3; ++i) experts.push_back(random_tensor({2, 5}, rng, -1.0, 1.0));
    const Tensor w = random_tensor({3, 1}, rng, -1.0, 1.0);
    out.push_back({"query_ensemble", grad_check([&](Graph& g) {
                     std::vector<Var> es;
                     for (const auto& e : experts) es.push_back(g.constant(e));
                     auto mixed = query_combine(g, es, q, ParamMode::trainable);
                     return g.sum(g.tanh(g.matmul(mixed.combined, g.constant(w))));
                   },
                                              q.parameters(), kEps)});
  }

  {
    RnnPredictor rnn({2, 4, 3}, seed);
    const Tensor hist = random_tensor({2, kHistoryLen, 2}, rng, -0.5, 0.5);
    const Tensor emb = random_tensor({2, 3}, rng, 0.0, 1.0);
    const Tensor fut = random_tensor({2, kFutureLen, 2}, rng, -2.0, 2.0);
    out.push_back({"rnn.rollout40", grad_check([&](Graph& g) {
                     Var y = rnn.rollout(g, hist, &emb, ParamMode::trainable);
                     return g.smooth_l1(y, g.constant(fut));
                   },
                                             rnn.parameters(), kEps)});
  }
  return out;
}

bool suite_passes(const std::vector<GradSuiteEntry>& entries, double tolerance) {
  for (const auto& e : entries)
    if (!(e.report.max_rel_error < tolerance)) return false;
  return !entries.empty();
}

}  // namespace pedkd
