#include <gtest/gtest.h>

#include <cmath>

#include "pedkd/autodiff.hpp"
#include "pedkd/error.hpp"
#include "pedkd/gradcheck.hpp"
#include "pedkd/losses.hpp"
#include "pedkd/optim.hpp"
#include "pedkd/rng.hpp"

using namespace pedkd;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ContractError);
  EXPECT_THROW(Tensor(Shape{0}), ContractError);
}

TEST(Backward, SquareAtThree) {
  Parameter x{"x", Tensor::scalar(3.0)};
  Graph g;
  Var v = g.param(x);
  auto grads = g.backward(g.mul(v, v));
  EXPECT_EQ(grads.at(&x).item(), 6.0);
}

TEST(Backward, SigmoidAtZero) {
  Parameter x{"x", Tensor::scalar(0.0)};
  Graph g;
  auto grads = g.backward(g.sigmoid(g.param(x)));
  EXPECT_DOUBLE_EQ(grads.at(&x).item(), 0.25);
}

TEST(Backward, NonScalarOutputIsContractViolation) {
  Parameter x{"x", Tensor({3}, 1.0)};
  Graph g;
  Var v = g.tanh(g.param(x));
  EXPECT_THROW(g.backward(v), ContractError);
}

TEST(Backward, UntouchedLeafGetsZeroGradient) {
  Parameter used{"used", Tensor::scalar(2.0)};
  Parameter unused{"unused", Tensor({2, 2}, 1.0)};
  Graph g;
  g.param(unused);
  auto grads = g.backward(g.scale(g.param(used), 3.0));
  EXPECT_EQ(grads.at(&used).item(), 3.0);
  EXPECT_EQ(grads.at(&unused), Tensor({2, 2}, 0.0));
}

TEST(Backward, GraphIsSingleUse) {
  Parameter x{"x", Tensor::scalar(1.0)};
  Graph g;
  Var out = g.tanh(g.param(x));
  g.backward(out);
  EXPECT_THROW(g.backward(out), ContractError);
}

TEST(Backward, NonFiniteValuesAreRejected) {
  Graph g;
  Var a = g.constant(Tensor::scalar(-1.0));
  EXPECT_THROW(g.log(a), NumericError);
}

TEST(GradCheck, SquareIsExactToMicro) {
  auto report = grad_check([](Graph& g, Var x) { return g.mul(x, x); }, Tensor::scalar(3.0), 1e-5);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(GradCheck, RejectsBadEpsAndNonScalar) {
  auto sq = [](Graph& g, Var x) { return g.mul(x, x); };
  EXPECT_THROW(grad_check(sq, Tensor::scalar(1.0), 0.0), ContractError);
  EXPECT_THROW(grad_check(sq, Tensor::scalar(1.0), 0.1), ContractError);
  EXPECT_THROW(grad_check(sq, Tensor({2}, 1.0), 1e-5), ContractError);
}

TEST(GradCheck, EveryPrimitiveMatchesFiniteDifferences) {
  Rng rng(7);
  Parameter a{"a", random_tensor({2, 3, 4}, rng)};
  Parameter b{"b", random_tensor({4, 5}, rng)};
  Parameter bias{"bias", random_tensor({5}, rng)};
  Parameter c{"c", random_tensor({2, 5, 4}, rng)};
  Parameter img{"img", random_tensor({2, 2, 4, 4}, rng)};
  Parameter w{"w", random_tensor({3, 2, 3, 3}, rng, 0.3)};
  Parameter wb{"wb", random_tensor({3}, rng)};
  Parameter tgt{"tgt", random_tensor({2, 3, 5}, rng)};
  auto f = [&](Graph& g) {
    Var x = g.tanh(g.add_bias(g.matmul(g.param(a), g.param(b)), g.param(bias)));  // [2,3,5]
    Var y = g.bmm(x, g.param(c));                                                  // [2,3,4]
    Var heads = g.merge_heads(g.split_heads(y, 2), 2);
    Var att = g.softmax(g.bmm(heads, g.param(a), true));  // [2,3,3]
    Var cat = g.concat(std::vector<Var>{att, g.sigmoid(y)});
    Var conv = g.avg_pool2(g.tanh(g.conv2d(g.param(img), g.param(w), g.param(wb))));
    Var patches = g.patchify(conv, 1);
    Var pooled = g.global_avg_pool(conv);
    Var l1 = g.smooth_l1(x, g.param(tgt), 0.7);
    Var logs = g.log(g.affine(g.sigmoid(cat), 0.5, 0.25), 1e-12);
    Var total = g.add(g.mean(logs), g.mean(g.mean_axis(patches, 1)));
    total = g.add(total, g.sum(g.mul(pooled, pooled)));
    return g.add(total, l1);
  };
  auto report = grad_check(f, {&a, &b, &bias, &c, &img, &w, &wb, &tgt}, 1e-5);
  EXPECT_LT(report.max_rel_error, 1e-7) << report.worst;
}

TEST(Softmax, SumsToOneAndIsShiftInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor logits = random_tensor({4, 6}, rng, 5.0);
    Tensor shifted = logits;
    const double c = rng.uniform(-100, 100);
    for (auto& v : shifted.data()) v += c;
    Graph g;
    const Tensor& p = g.value(g.softmax(g.constant(logits)));
    const Tensor& q = g.value(g.softmax(g.constant(shifted)));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_GE(p[r * 6 + j], 0.0);
        s += p[r * 6 + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
    EXPECT_LT(max_abs_diff(p, q), 1e-9);
  }
}

TEST(SmoothL1, CornerValues) {
  EXPECT_EQ(smooth_l1(Tensor::from({1, 2, 3}), Tensor::from({1, 2, 3})), 0.0);
  EXPECT_DOUBLE_EQ(smooth_l1(Tensor::from({0.5}), Tensor::from({0.0})), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(Tensor::from({2.0}), Tensor::from({0.0})), 1.5);
  EXPECT_THROW(smooth_l1(Tensor::from({1, 2}), Tensor::from({1})), ContractError);
  EXPECT_THROW(smooth_l1(Tensor::from({1}), Tensor::from({1}), 0.0), ContractError);
}

TEST(SmoothL1, NonNegativeZeroOnlyAtEquality) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor p = random_tensor({5}, rng, 2.0);
    Tensor t = random_tensor({5}, rng, 2.0);
    const double beta = rng.uniform(0.1, 3.0);
    EXPECT_GT(smooth_l1(p, t, beta), 0.0);
    EXPECT_EQ(smooth_l1(p, p, beta), 0.0);
  }
}

TEST(SmoothL1, ContinuouslyDifferentiableAtBeta) {
  for (double beta : {0.5, 1.0, 2.0}) {
    const double h = 1e-7;
    auto f = [&](double d) { return smooth_l1(Tensor::from({d}), Tensor::from({0.0}), beta); };
    const double left = (f(beta) - f(beta - h)) / h;
    const double right = (f(beta + h) - f(beta)) / h;
    EXPECT_NEAR(f(beta - 1e-12), f(beta + 1e-12), 1e-9);
    EXPECT_NEAR(left, right, 1e-6);  // forward differences carry O(h/beta) error
    // The analytic one-sided slopes agree exactly at the corner.
    Parameter at{"d", Tensor::from({beta})};
    Graph g;
    auto grads = g.backward(g.smooth_l1(g.param(at), g.constant(Tensor::from({0.0})), beta));
    EXPECT_NEAR(grads.at(&at).item(), 1.0, 1e-9);
  }
}

TEST(Schedule, LinearDecayStaysPositive) {
  LrSchedule s{1e-4, 100};
  EXPECT_DOUBLE_EQ(s.lr(0), 1e-4);
  EXPECT_DOUBLE_EQ(s.lr(100), 1e-4 / 101.0);
  for (std::uint64_t t = 0; t <= 100; ++t) {
    EXPECT_GT(s.lr(t), 0.0);
    if (t) {
      EXPECT_LT(s.lr(t), s.lr(t - 1));
    }
  }
}

TEST(Adam, ZeroGradientIsIdentity) {
  Rng rng(5);
  Parameter p{"p", random_tensor({3, 4}, rng)};
  const Tensor before = p.value;
  AdamState st;
  Gradients grads{{&p, Tensor({3, 4})}};
  for (int i = 0; i < 5; ++i) adam_step({&p}, grads, st, LrSchedule{1e-2, 10});
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(st.step, 5u);
}

TEST(Adam, FirstStepMovesBySignedRate) {
  Parameter p{"p", Tensor::from({1.0, -2.0, 0.5})};
  const Tensor before = p.value;
  const Tensor g = Tensor::from({0.3, -4.0, 1e-3});
  AdamState st;
  const LrSchedule sched{1e-3, 10};
  adam_step({&p}, {{&p, g}}, st, sched);
  for (std::size_t i = 0; i < 3; ++i) {
    // Closed form for step one: m_hat = g, v_hat = g^2.
    const double expected = sched.lr(0) * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(before[i] - p.value[i], expected, 1e-15);
  }
}

TEST(Adam, ShapeMismatchIsRejected) {
  Parameter p{"p", Tensor({2}, 0.0)};
  AdamState st;
  EXPECT_THROW(adam_step({&p}, {{&p, Tensor({3}, 1.0)}}, st, LrSchedule{}), ContractError);
}

TEST(Rng, StreamsAreReproducibleAndIndependent) {
  Rng a(42), b(42);
  Rng sa = a.split("scenes"), sb = b.split("scenes"), other = a.split("weights");
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sa.next_u64(), sb.next_u64());
  EXPECT_NE(a.split("scenes").next_u64(), other.next_u64());
  EXPECT_NE(a.split(1).next_u64(), a.split(2).next_u64());
}
