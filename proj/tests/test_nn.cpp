#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "tinyalign/nn/batchnorm.hpp"
#include "tinyalign/nn/blocks.hpp"
#include "tinyalign/nn/budget.hpp"
#include "tinyalign/nn/conv.hpp"
#include "tinyalign/nn/roi_align.hpp"

namespace tinyalign::nn {
namespace {

using testing::DTensor;
using testing::gradcheck;
using testing::random_tensor;

using testing::conv_oracle;

TEST(Conv2d, IdentityPointwise) {
  std::mt19937_64 rng(1);
  DTensor x = random_tensor({1, 3, 4, 5}, rng, -1, 1, false);
  DTensor w({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  DTensor y = conv2d(x, w, conv1x1(3, 3));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, AllOnesKernelInterior) {
  DTensor x({1, 1, 5, 5}, 1.0);
  DTensor w({1, 1, 3, 3}, 1.0);
  DTensor y = conv2d(x, w, conv3x3(1, 1));
  EXPECT_EQ(y[2 * 5 + 2], 9.0);
  EXPECT_EQ(y[0], 4.0);  // corner sees four in-bounds taps
}

TEST(Conv2d, DepthwiseDeltaKernel) {
  std::mt19937_64 rng(2);
  DTensor x = random_tensor({2, 4, 6, 6}, rng, -1, 1, false);
  DTensor w({4, 1, 3, 3});
  for (std::size_t c = 0; c < 4; ++c) w[c * 9 + 4] = 1.0;
  DTensor y = conv2d(x, w, conv3x3(4, 4, 1, 4));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, OutputExtentAndErrors) {
  DTensor x({1, 4, 9, 9});
  EXPECT_EQ(conv2d(x, DTensor({8, 4, 3, 3}), conv3x3(4, 8, 2)).shape(), (Shape{1, 8, 5, 5}));
  EXPECT_THROW(conv2d(x, DTensor({8, 3, 3, 3}), conv3x3(3, 8)), Error);  // channel mismatch
  ConvSpec bad = conv3x3(4, 6, 1, 4);
  EXPECT_THROW(conv2d(x, DTensor({6, 1, 3, 3}), bad), Error);  // out not divisible by groups
}

TEST(Conv2d, MatchesDirectOracle) {
  std::mt19937_64 rng(3);
  for (ConvSpec s : {conv3x3(4, 6), conv3x3(4, 6, 2), conv3x3(6, 6, 1, 6), conv3x3(6, 6, 2, 6),
                     conv3x3(6, 4, 1, 2), conv1x1(4, 5), ConvSpec{4, 4, 5, 1, 2, 1, false, Activation::none}}) {
    DTensor x = random_tensor({2, s.in_channels, 7, 8}, rng, -1, 1, false);
    DTensor w = random_tensor(s.weight_shape(), rng, -1, 1, false);
    DTensor y = conv2d(x, w, s), ref = conv_oracle(x, w, s);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

// groups=g equals g independent convolutions on channel slices, concatenated.
TEST(Conv2d, GroupedEqualsSlicedConvs) {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t g = 3, cin_g = 2, cout_g = 2;
    ConvSpec grouped = conv3x3(g * cin_g, g * cout_g, 1, g);
    Tensor<float> x({1, g * cin_g, 5, 6});
    Tensor<float> w(grouped.weight_shape());
    std::uniform_real_distribution<float> u(-1, 1);
    for (auto& v : x.data()) v = u(rng);
    for (auto& v : w.data()) v = u(rng);
    Tensor<float> y = conv2d(x, w, grouped);
    for (std::size_t k = 0; k < g; ++k) {
      Tensor<float> xs({1, cin_g, 5, 6}), ws({cout_g, cin_g, 3, 3});
      std::copy_n(x.data().begin() + k * cin_g * 30, cin_g * 30, xs.data().begin());
      std::copy_n(w.data().begin() + k * cout_g * cin_g * 9, cout_g * cin_g * 9, ws.data().begin());
      Tensor<float> ys = conv2d(xs, ws, conv3x3(cin_g, cout_g));
      for (std::size_t i = 0; i < ys.numel(); ++i) EXPECT_NEAR(y[k * cout_g * 30 + i], ys[i], 1e-6);
    }
  }
}

TEST(GradCheck, ConvVariants) {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    for (ConvSpec s : {conv3x3(3, 4), conv3x3(3, 4, 2), conv3x3(4, 4, 1, 4), conv3x3(4, 4, 2, 4),
                       conv3x3(4, 6, 1, 2), conv1x1(3, 5)}) {
      s.bias = true;
      DTensor x = random_tensor({2, s.in_channels, 5, 5}, rng);
      DTensor w = random_tensor(s.weight_shape(), rng);
      DTensor b = random_tensor({s.out_channels}, rng);
      DTensor probe = random_tensor({2, s.out_channels, s.out_extent(5), s.out_extent(5)}, rng, -1, 1, false);
      auto fn = [s, probe](const std::vector<DTensor>& v) { return sum(mul(conv2d(v[0], v[1], v[2], s), probe)); };
      EXPECT_LT(gradcheck(fn, {x, w, b}).max_relative_error, 1e-4) << "seed " << seed;
    }
  }
}

TEST(GradCheck, BatchNormTrainingAndEval) {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(200 + seed);
    BatchNormParams<double> p{random_tensor({3}, rng, 0.5, 1.5), random_tensor({3}, rng), DTensor({3}, 0.0),
                              DTensor({3}, 1.0)};
    DTensor x = random_tensor({2, 3, 3, 3}, rng);
    DTensor probe = random_tensor({2, 3, 3, 3}, rng, -1, 1, false);
    for (bool training : {true, false}) {
      auto fn = [&p, probe, training](const std::vector<DTensor>& v) {
        BatchNormParams<double> q{v[1], v[2], p.running_mean, p.running_var};
        return sum(mul(batch_norm(v[0], q, training), probe));
      };
      EXPECT_LT(gradcheck(fn, {x, p.gamma, p.beta}).max_relative_error, 1e-4) << "seed " << seed;
    }
  }
}

InvertedResidualWeights<double> random_block(const InvertedResidualSpec& s, std::mt19937_64& rng) {
  InvertedResidualWeights<double> w;
  w.expand.weight = random_tensor(s.expand().weight_shape(), rng, -0.5, 0.5);
  w.depthwise.weight = random_tensor(s.depthwise().weight_shape(), rng, -0.5, 0.5);
  w.project.weight = random_tensor(s.project().weight_shape(), rng, -0.5, 0.5);
  for (auto* c : {&w.expand, &w.depthwise, &w.project})
    c->bias = random_tensor({c->weight.size(0)}, rng, 0.5, 1.0);  // keeps relu6 inputs off the kinks
  return w;
}

TEST(InvertedResidual, ZeroBranchIsIdentity) {
  InvertedResidualSpec s{8, 8, 6, 1};
  EXPECT_EQ(s.expand().out_channels, 48u);
  InvertedResidualWeights<float> w;
  w.expand.weight = Tensor<float>(s.expand().weight_shape());
  w.depthwise.weight = Tensor<float>(s.depthwise().weight_shape());
  w.project.weight = Tensor<float>(s.project().weight_shape());
  std::mt19937_64 rng(5);
  Tensor<float> x({1, 8, 6, 6});
  std::normal_distribution<float> n;
  for (auto& v : x.data()) v = n(rng);
  Tensor<float> y = inverted_residual(x, s, w, false);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(InvertedResidual, StrideTwoHalvesExtent) {
  InvertedResidualSpec s{8, 16, 6, 2};
  std::mt19937_64 rng(6);
  auto w = random_block(s, rng);
  EXPECT_FALSE(s.residual());
  DTensor y = inverted_residual(DTensor({1, 8, 8, 8}), s, w, false);
  EXPECT_EQ(y.shape(), (Shape{1, 16, 4, 4}));
}

TEST(GradCheck, InvertedResidual) {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(300 + seed);
    for (InvertedResidualSpec s : {InvertedResidualSpec{4, 4, 2, 1}, InvertedResidualSpec{4, 6, 3, 2}}) {
      auto w = random_block(s, rng);
      DTensor x = random_tensor({1, s.in_channels, 4, 4}, rng);
      DTensor probe = random_tensor({1, s.out_channels, 4 / s.stride, 4 / s.stride}, rng, -1, 1, false);
      auto fn = [s, probe](const std::vector<DTensor>& v) {
        InvertedResidualWeights<double> q;
        q.expand = {v[1], v[2], {}};
        q.depthwise = {v[3], v[4], {}};
        q.project = {v[5], v[6], {}};
        return sum(mul(inverted_residual(v[0], s, q, false), probe));
      };
      const auto r = gradcheck(fn, {x, w.expand.weight, w.expand.bias, w.depthwise.weight, w.depthwise.bias,
                                    w.project.weight, w.project.bias});
      EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed;
    }
  }
}

using testing::bilinear_oracle;

TEST(RoiAlign, ExactCopyForFullBox) {
  std::mt19937_64 rng(8);
  DTensor f = random_tensor({1, 2, 5, 5}, rng, -1, 1, false);
  DTensor out = roi_align(f, {RoiBox{0, 0.0, 0.0, 1.0, 1.0}}, 5);
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_NEAR(out[i], f[i], 1e-15);
}

TEST(RoiAlign, CenterSampleOfTwoByTwo) {
  DTensor f({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(roi_align(f, {RoiBox{0, 0.0, 0.0, 1.0, 1.0}}, 1)[0], 2.5);
}

TEST(RoiAlign, EdgeClampedSupport) {
  DTensor f({1, 1, 2, 2}, {1, 2, 3, 4});
  // Box hanging off the top-left corner: both samples clamp to pixel (0,0)
  // horizontally/vertically where they fall outside.
  DTensor out = roi_align(f, {RoiBox{0, -0.5, -0.5, 0.5, 0.5}}, 2);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_NEAR(out[3], bilinear_oracle(f, 0, 0.25 * 2 - 0.5, 0.25 * 2 - 0.5), 1e-15);
}

TEST(RoiAlign, DegenerateBoxThrows) {
  DTensor f({1, 1, 4, 4});
  EXPECT_THROW(roi_align(f, {RoiBox{0, 0.3, 0.2, 0.3, 0.6}}, 2), Error);
  EXPECT_THROW(roi_align(f, {RoiBox{0, 1.2, 1.2, 1.5, 1.5}}, 2), Error);
}

TEST(RoiAlign, MatchesBruteForceOracle) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-0.1, 0.9);
  for (int trial = 0; trial < 50; ++trial) {
    DTensor f = random_tensor({2, 3, 6, 7}, rng, -1, 1, false);
    const double x0 = u(rng), y0 = u(rng);
    const RoiBox box{std::size_t(trial % 2), x0, y0, x0 + 0.15 + 0.3 * std::abs(u(rng)), y0 + 0.15 + 0.3 * std::abs(u(rng))};
    const std::size_t S = 4;
    DTensor out = roi_align(f, {box}, S);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t oy = 0; oy < S; ++oy)
        for (std::size_t ox = 0; ox < S; ++ox) {
          const double nx = box.x0 + (ox + 0.5) * (box.x1 - box.x0) / S;
          const double ny = box.y0 + (oy + 0.5) * (box.y1 - box.y0) / S;
          DTensor plane({1, 3, 6, 7});
          std::copy_n(f.data().begin() + box.batch * 3 * 42, 3 * 42, plane.data().begin());
          EXPECT_NEAR(out[(c * S + oy) * S + ox], bilinear_oracle(plane, c, nx * 7 - 0.5, ny * 6 - 0.5), 1e-6);
        }
  }
}

TEST(GradCheck, RoiAlign) {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(400 + seed);
    std::uniform_real_distribution<double> u(0.0, 0.7);
    DTensor f = random_tensor({2, 2, 5, 5}, rng);
    std::vector<RoiBox> boxes;
    for (int k = 0; k < 3; ++k) {
      const double x0 = u(rng) - 0.1, y0 = u(rng) - 0.1;
      boxes.push_back({std::size_t(k % 2), x0, y0, x0 + 0.33, y0 + 0.27});
    }
    DTensor probe = random_tensor({3, 2, 3, 3}, rng, -1, 1, false);
    auto fn = [boxes, probe](const std::vector<DTensor>& v) { return sum(mul(roi_align(v[0], boxes, 3), probe)); };
    EXPECT_LT(gradcheck(fn, {f}).max_relative_error, 1e-4) << "seed " << seed;
  }
}

TEST(Budget, ClosedFormFixtures) {
  ConvSpec s = conv3x3(8, 16);
  s.bias = true;
  ComputeBudget b = account({LayerCost{"c", s, 32, 32}});
  EXPECT_EQ(b.total_params, 1168u);
  EXPECT_EQ(b.total_flops, 1179648u);
  EXPECT_EQ(b.total_madd, 2359296u);
  EXPECT_EQ(account({}), ComputeBudget{});
}

TEST(Budget, DoublingWidthQuadruplesPointwiseParams) {
  for (std::size_t c : {8u, 16u, 24u}) {
    const auto small = account({LayerCost{"p", conv1x1(c, 2 * c), 4, 4}});
    const auto big = account({LayerCost{"p", conv1x1(2 * c, 4 * c), 4, 4}});
    EXPECT_EQ(big.total_params, 4 * small.total_params);
  }
}

TEST(Budget, ReportRowNames) {
  ComputeBudget b{158091, 181500000, 90750000, 621568};
  const std::string r = format_budget(b);
  EXPECT_NE(r.find("Total params: 158,091"), std::string::npos);
  EXPECT_NE(r.find("Total MAdd: 181.50M"), std::string::npos);
  EXPECT_NE(r.find("Total Flops: 90.75M"), std::string::npos);
  EXPECT_NE(r.find("Model Size: 607KB"), std::string::npos);
}

}  // namespace
}  // namespace tinyalign::nn
