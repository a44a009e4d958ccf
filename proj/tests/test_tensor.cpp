#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "tinyalign/optim.hpp"
#include "tinyalign/tensor.hpp"

namespace tinyalign {
namespace {

using testing::DTensor;
using testing::gradcheck;
using testing::random_tensor;

TEST(Elementwise, Fixtures) {
  EXPECT_DOUBLE_EQ(sigmoid(DTensor::scalar(0.0)).item(), 0.5);
  EXPECT_DOUBLE_EQ(relu6(DTensor::scalar(7.2)).item(), 6.0);
  DTensor a({2}, {1.0, 2.0}), b({2}, {3.0, 4.0});
  DTensor c = elementwise(Elementwise::add, a, b);
  EXPECT_EQ(c[0], 4.0);
  EXPECT_EQ(c[1], 6.0);
}

TEST(Elementwise, ShapeMismatchThrows) {
  DTensor a({2, 3}), b({2, 2});
  EXPECT_THROW(add(a, b), Error);
}

TEST(Elementwise, NonFiniteIsAnError) {
  DTensor a({1}, {1.0}), z({1}, {0.0});
  try {
    div(a, z);
    FAIL() << "expected numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
  }
  EXPECT_THROW(log(DTensor({1}, {-1.0})), Error);
  // The guard keeps log(0) finite.
  EXPECT_NEAR(log(DTensor({1}, {0.0})).item(), std::log(1e-12), 1e-9);
}

TEST(Reduce, Fixtures) {
  DTensor m({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(sum(m).item(), 10.0);
  DTensor rows = mean(m, {0});
  ASSERT_EQ(rows.shape(), Shape{2});
  EXPECT_EQ(rows[0], 2.0);
  EXPECT_EQ(rows[1], 3.0);
  EXPECT_EQ(sum(DTensor(Shape{0})).item(), 0.0);
  EXPECT_EQ(reduce(Reduce::max, m, {1})[1], 4.0);
  EXPECT_THROW(sum(m, {2}), Error);
}

TEST(Backward, AnalyticFixtures) {
  DTensor x = DTensor::scalar(3.0, true);
  {
    Tape<double> tape;
    tape.backward(mul(x, x));
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);

  DTensor y = DTensor::scalar(0.0, true);
  {
    Tape<double> tape;
    tape.backward(sigmoid(y));
  }
  EXPECT_DOUBLE_EQ(y.grad()[0], 0.25);
}

TEST(Backward, NonScalarLossThrows) {
  DTensor x({2}, {1.0, 2.0}, true);
  Tape<double> tape;
  DTensor y = mul(x, x);
  EXPECT_THROW(tape.backward(y), Error);
}

TEST(Backward, UnreachedParameterGradIsZero) {
  DTensor used = DTensor::scalar(2.0, true), unused({3}, 1.0, true);
  {
    Tape<double> tape;
    tape.backward(mul(used, used));
  }
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, GradAccumulatesAcrossUses) {
  DTensor x = DTensor::scalar(1.5, true);
  {
    Tape<double> tape;
    tape.backward(add(mul(x, DTensor::scalar(2.0)), mul(x, DTensor::scalar(3.0))));
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 5.0);
}

TEST(Backward, TapeReplaysInReverseOrder) {
  // A later op that reads an intermediate must run its backward before the
  // op that produced the intermediate.
  DTensor x = DTensor::scalar(2.0, true);
  Tape<double> tape;
  DTensor a = exp(x);
  DTensor b = mul(a, a);
  EXPECT_EQ(tape.size(), 2u);
  tape.backward(b);
  EXPECT_NEAR(x.grad()[0], 2.0 * std::exp(4.0), 1e-9);
}

// Every elementwise and reduce op against central differences, 20 seeds.
TEST(GradCheck, ElementwiseAndReduce) {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    DTensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng, 0.5, 2.0);
    DTensor row = random_tensor({3}, rng, 0.5, 2.0);
    DTensor pos = random_tensor({2, 3}, rng, 0.2, 3.0);
    DTensor r6 = random_tensor({2, 3}, rng, 0.1, 5.9);
    auto check = [&](auto fn, std::vector<DTensor> in) {
      EXPECT_LT(gradcheck(fn, in).max_relative_error, 1e-4) << "seed " << seed;
    };
    check([](const auto& v) { return sum(add(v[0], v[1])); }, {a, b});
    check([](const auto& v) { return sum(sub(v[0], v[1])); }, {a, b});
    check([](const auto& v) { return sum(mul(mul(v[0], v[1]), v[0])); }, {a, b});
    check([](const auto& v) { return sum(div(v[0], v[1])); }, {a, b});
    check([](const auto& v) { return sum(mul(v[0], v[1])); }, {a, row});  // broadcast
    check([](const auto& v) { return sum(div(v[0], v[1])); }, {a, row});
    check([](const auto& v) { return sum(exp(v[0])); }, {a});
    check([](const auto& v) { return sum(log(v[0])); }, {pos});
    check([](const auto& v) { return sum(mul(sigmoid(v[0]), v[0])); }, {a});
    check([](const auto& v) { return sum(mul(relu6(v[0]), v[0])); }, {r6});
    check([](const auto& v) { return sum(mul(clamp(v[0], 0.0, 1.0), v[0])); }, {random_tensor({2, 3}, rng, 0.05, 0.95)});
    check([](const auto& v) { return sum(mul(mean(v[0], {1}), sum(v[0], {1}))); }, {a});
    check([](const auto& v) { return sum(mul(reshape(v[0], {3, 2}), reshape(v[0], {3, 2}))); }, {a});
  }
}

// Gradient of a broadcast operand equals the gradient against an explicitly
// tiled copy, summed over the tiled axis.
TEST(GradCheck, BroadcastMatchesExplicitTile) {
  std::mt19937_64 rng(7);
  DTensor a = random_tensor({4, 3}, rng);
  DTensor row = random_tensor({3}, rng);
  DTensor tiled({4, 3}, 0.0, true);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) tiled[r * 3 + c] = row[c];
  {
    Tape<double> tape;
    tape.backward(sum(mul(exp(mul(a, row)), a)));
  }
  {
    Tape<double> tape;
    tape.backward(sum(mul(exp(mul(a, tiled)), a)));
  }
  for (std::size_t c = 0; c < 3; ++c) {
    double expect = 0.0;
    for (std::size_t r = 0; r < 4; ++r) expect += tiled.grad()[r * 3 + c];
    EXPECT_NEAR(row.grad()[c], expect, 1e-12);
  }
}

TEST(Determinism, BitIdenticalForwardBackward) {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tensor<float> a({8, 8}, 0.0f, true);
    std::normal_distribution<float> n;
    for (auto& v : a.data()) v = n(rng);
    Tape<float> tape;
    auto loss = sum(mul(sigmoid(a), exp(a * 0.1f)));
    tape.backward(loss);
    return std::make_pair(loss.item(), std::vector<float>(a.grad().begin(), a.grad().end()));
  };
  EXPECT_EQ(run(), run());
}

TEST(Sgd, StepFixtures) {
  Tensor<double> w({1}, {1.0}, true);
  w.grad()[0] = 0.5;
  Sgd<double> opt({w}, {0.1, 0.0});
  opt.step();
  EXPECT_DOUBLE_EQ(w[0], 0.95);
  EXPECT_EQ(w.grad()[0], 0.0);

  Tensor<double> m({1}, {1.0}, true);
  Sgd<double> mom({m}, {0.1, 0.9});
  m.grad()[0] = 0.5;
  mom.step();
  m.grad()[0] = 0.5;
  mom.step();
  EXPECT_DOUBLE_EQ(mom.velocity()[0][0], 0.95);

  Tensor<double> f({1}, {1.0}, true);
  Sgd<double> frozen({f}, {0.0, 0.9});
  f.grad()[0] = 3.0;
  frozen.step();
  EXPECT_EQ(f[0], 1.0);
}

TEST(Sgd, MissingGradThrows) {
  Tensor<double> w({1}, {1.0}, false);
  Sgd<double> opt({w}, {});
  EXPECT_THROW(opt.step(), Error);
}

}  // namespace
}  // namespace tinyalign
