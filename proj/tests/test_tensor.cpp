#include <gtest/gtest.h>

#include "support.hpp"

using namespace p2ex;

TEST(Tensor, ShapeAndSizeAgree) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.dim(2), 4u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3, 0.0)), DimensionError);
}

TEST(Tensor, ItemRequiresScalar) {
  EXPECT_DOUBLE_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor({2}).item(), DimensionError);
}

TEST(Tape, SumGradientIsOnes) {
  Tape tape;
  Var x = tape.leaf(Tensor({3}, {1.0, -2.0, 5.0}), true);
  tape.backward(sum(x));
  ASSERT_TRUE(tape.grad(x));
  for (double g : *tape.grad(x)) EXPECT_EQ(g, 1.0);
}

TEST(Tape, DistanceToOriginGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {3.0, 4.0}), true);
  Var zero = tape.constant(Tensor({2}));
  tape.backward(l2_distance(x, zero));
  const auto& g = *tape.grad(x);
  EXPECT_NEAR(g[0], 0.6, 1e-15);
  EXPECT_NEAR(g[1], 0.8, 1e-15);
}

TEST(Tape, ConstantsGetNoGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.0, 2.0}), true);
  Var c = tape.constant(Tensor({2}, {3.0, 4.0}));
  tape.backward(sum(mul(x, c)));
  EXPECT_TRUE(tape.grad(x));
  EXPECT_FALSE(tape.grad(c));
  EXPECT_EQ((*tape.grad(x))[1], 4.0);
}

TEST(Tape, SharedValueAccumulates) {
  Tape tape;
  Var x = tape.leaf(Tensor({1}, {3.0}), true);
  tape.backward(sum(mul(x, x)));
  EXPECT_EQ((*tape.grad(x))[0], 6.0);
}

TEST(Tape, SecondBackwardThrows) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.0, 2.0}), true);
  Var loss = sum(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), PreconditionError);
  EXPECT_EQ((*tape.grad(x))[0], 1.0);
}

TEST(Tape, NonScalarLossThrows) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.0, 2.0}), true);
  EXPECT_THROW(tape.backward(x), PreconditionError);
}

TEST(Tape, OperandsFromAnotherTapeRejected) {
  Tape a, b;
  Var x = a.leaf(Tensor({1}, {1.0}), true);
  Var y = b.leaf(Tensor({1}, {1.0}), true);
  EXPECT_THROW(add(x, y), PreconditionError);
}

TEST(Rng, CounterStreamsAreReproducibleAndDistinct) {
  CounterRng a(7, Stream::init, 0), b(7, Stream::init, 0), c(7, Stream::init, 1), d(7, Stream::shuffle, 0);
  for (int i = 0; i < 16; ++i) {
    const auto va = a.next();
    EXPECT_EQ(va, b.next());
    EXPECT_NE(va, c.next());
    EXPECT_NE(va, d.next());
  }
}

TEST(Rng, UniformStaysInRange) {
  CounterRng r(1, Stream::data);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.below(5), 5u);
  }
}

TEST(Rng, NormalMomentsRoughlyStandard) {
  CounterRng r(3, Stream::data);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}
