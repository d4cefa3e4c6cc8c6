#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "atmc/error.hpp"
#include "atmc/graph.hpp"
#include "atmc/ops.hpp"
#include "testing.hpp"

using namespace atmc;
using atmc::testing::central_difference;
using atmc::testing::random_tensor;
using atmc::testing::relative_error;

namespace {

// Checks every (or `probes` random) coordinate of `x` against central
// differences of `loss`, which rebuilds the graph from scratch.
template <typename LossFn>
double max_grad_error(Tensor& x, const Tensor& analytic, LossFn&& loss, std::mt19937_64& rng,
                      std::size_t probes = 0) {
  double worst = 0.0;
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  const std::size_t n = probes == 0 ? x.size() : probes;
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t i = probes == 0 ? p : pick(rng);
    const double numeric = central_difference(loss, x, i);
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

}  // namespace

TEST(Matmul, IdentityTimesColumn) {
  Graph g;
  Var a = g.constant(Tensor::from({2, 2}, {1, 0, 0, 1}));
  Var b = g.constant(Tensor::from({2, 1}, {3, 4}));
  EXPECT_EQ(g.value(matmul(g, a, b)), Tensor::from({2, 1}, {3, 4}));
}

TEST(Matmul, HandMultiplication) {
  Graph g;
  Var a = g.constant(Tensor::from({2, 2}, {1, 2, 3, 4}));
  Var b = g.constant(Tensor::from({2, 1}, {5, 6}));
  EXPECT_EQ(g.value(matmul(g, a, b)), Tensor::from({2, 1}, {17, 39}));
}

TEST(Matmul, ShapeMismatchThrows) {
  Graph g;
  Var a = g.constant(Tensor({2, 3}));
  Var b = g.constant(Tensor({2, 3}));
  EXPECT_THROW(matmul(g, a, b), ShapeError);
}

TEST(Matmul, GradientOfSumIsBTransposeBroadcast) {
  std::mt19937_64 rng(1);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Graph g;
  Var av = g.parameter(a);
  g.backward(sum(g, matmul(g, av, g.constant(b))));
  const Tensor ga = g.grad(av);
  // d sum(AB) / dA_ij = Σ_k B_jk
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(ga.at(i, j), b.at(j, 0) + b.at(j, 1), 1e-14);
  auto loss = [&] {
    Graph h;
    return h.value(sum(h, matmul(h, h.constant(a), h.constant(b))))[0];
  };
  EXPECT_LT(max_grad_error(a, ga, loss, rng), 1e-4);
}

TEST(Matmul, BothOperandsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  Tensor a = random_tensor({5, 3}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({5, 4}, rng);
  auto build = [&](Graph& g, Var& av, Var& bv) {
    av = g.parameter(a);
    bv = g.parameter(b);
    Var p = matmul(g, av, bv);
    // Weighted sum so every output contributes a distinct coefficient.
    Var t = transpose(g, g.constant(w));
    return sum(g, matmul(g, t, p));
  };
  Graph g;
  Var av, bv;
  g.backward(build(g, av, bv));
  auto loss = [&] {
    Graph h;
    Var x, y;
    return h.value(build(h, x, y))[0];
  };
  EXPECT_LT(max_grad_error(a, g.grad(av), loss, rng), 1e-4);
  EXPECT_LT(max_grad_error(b, g.grad(bv), loss, rng), 1e-4);
}

TEST(Conv2d, OneByOneIdentityKernelLeavesInputUnchanged) {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({2, 3, 4, 4}, rng);
  Tensor w({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  Graph g;
  EXPECT_EQ(g.value(conv2d(g, g.constant(x), g.constant(w), 1, 0)), x);
}

TEST(Conv2d, AllOnesKernelSumsWindow) {
  Graph g;
  Var y = conv2d(g, g.constant(Tensor({1, 1, 3, 3}, 1.0)), g.constant(Tensor({1, 1, 3, 3}, 1.0)),
                 1, 0);
  EXPECT_EQ(g.value(y).shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(g.value(y)[0], 9.0);
}

TEST(Conv2d, CrossCorrelationWithoutFlip) {
  // Kernel [[1,0],[0,0]] picks the top-left of each window.
  const Tensor x = Tensor::from({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor w = Tensor::from({1, 1, 2, 2}, {1, 0, 0, 0});
  Graph g;
  EXPECT_EQ(g.value(conv2d(g, g.constant(x), g.constant(w), 1, 0)),
            Tensor::from({1, 1, 1, 2}, {1, 2}));
}

TEST(Conv2d, OutputSizeFormula) {
  Graph g;
  Var y = conv2d(g, g.constant(Tensor({2, 1, 7, 6})), g.constant(Tensor({4, 1, 3, 3})), 2, 1);
  // floor((7 + 2 - 3) / 2) + 1 = 4, floor((6 + 2 - 3) / 2) + 1 = 3
  EXPECT_EQ(g.value(y).shape(), (Shape{2, 4, 4, 3}));
}

TEST(Conv2d, NonPositiveOutputThrows) {
  Graph g;
  EXPECT_THROW(conv2d(g, g.constant(Tensor({1, 1, 2, 2})), g.constant(Tensor({1, 1, 3, 3})), 1, 0),
               ShapeError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {2, 1}, {1, 2}}) {
    Tensor x = random_tensor({2, 2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Graph g;
    Var xv = g.input(x, true);
    Var wv = g.parameter(w);
    Var y = conv2d(g, xv, wv, stride, pad);
    const Tensor coeff = random_tensor(g.value(y).shape(), rng);
    auto weighted = [&](Graph& h, Var out) {
      Var c = h.constant(coeff);
      Var flat_o = reshape(h, out, {1, coeff.size()});
      Var flat_c = reshape(h, c, {coeff.size(), 1});
      return sum(h, matmul(h, flat_o, flat_c));
    };
    g.backward(weighted(g, y));
    auto loss = [&] {
      Graph h;
      return h.value(weighted(h, conv2d(h, h.constant(x), h.constant(w), stride, pad)))[0];
    };
    EXPECT_LT(max_grad_error(x, g.grad(xv), loss, rng), 1e-4) << "stride " << stride;
    EXPECT_LT(max_grad_error(w, g.grad(wv), loss, rng), 1e-4) << "stride " << stride;
  }
}

TEST(Elementwise, Relu) {
  Graph g;
  Var x = g.parameter(Tensor::from({3}, {-1, 2, 0}));
  Var y = relu(g, x);
  EXPECT_EQ(g.value(y), Tensor::from({3}, {0, 2, 0}));
  g.backward(sum(g, y));
  // Subgradient at the kink is 0.
  EXPECT_EQ(g.grad(x), Tensor::from({3}, {0, 1, 0}));
}

TEST(Elementwise, MaxPoolPicksMaximum) {
  Graph g;
  Var y = maxpool2d(g, g.constant(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4})), 2, 2);
  EXPECT_EQ(g.value(y)[0], 4.0);
}

TEST(Elementwise, MaxPoolTiesGoToFirstIndex) {
  Graph g;
  Var x = g.parameter(Tensor::from({1, 1, 2, 2}, {5, 5, 5, 5}));
  g.backward(sum(g, maxpool2d(g, x, 2, 2)));
  EXPECT_EQ(g.grad(x), Tensor::from({1, 1, 2, 2}, {1, 0, 0, 0}));
}

TEST(Elementwise, MaxPoolGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({2, 3, 6, 6}, rng);
  Graph g;
  Var xv = g.input(x, true);
  Var y = maxpool2d(g, xv, 2, 2);
  const Tensor coeff = random_tensor(g.value(y).shape(), rng);
  auto weighted = [&](Graph& h, Var out) {
    return sum(h, matmul(h, reshape(h, out, {1, coeff.size()}),
                         h.constant(coeff.reshaped({coeff.size(), 1}))));
  };
  g.backward(weighted(g, y));
  auto loss = [&] {
    Graph h;
    return h.value(weighted(h, maxpool2d(h, h.constant(x), 2, 2)))[0];
  };
  EXPECT_LT(max_grad_error(x, g.grad(xv), loss, rng), 1e-4);
}

TEST(CrossEntropy, UniformLogitsGiveLogTwo) {
  Graph g;
  const std::vector<int> y{0};
  Var l = softmax_cross_entropy(g, g.constant(Tensor::from({1, 2}, {0, 0})), y);
  EXPECT_NEAR(g.value(l)[0], std::log(2.0), 1e-15);
}

TEST(CrossEntropy, LabelOutOfRangeThrows) {
  Graph g;
  const std::vector<int> y{2};
  EXPECT_THROW(softmax_cross_entropy(g, g.constant(Tensor({1, 2})), y), ShapeError);
  const std::vector<int> neg{-1};
  EXPECT_THROW(softmax_cross_entropy(g, g.constant(Tensor({1, 2})), neg), ShapeError);
}

TEST(CrossEntropy, ShiftInvariance) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> label(0, 4);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor z = random_tensor({1, 5}, rng, -5.0, 5.0);
    Tensor shifted = z;
    const double c = shift(rng);
    for (double& v : shifted.values()) v += c;
    const std::vector<int> y{label(rng)};
    const double a = cross_entropy_rows(z, y)[0];
    const double b = cross_entropy_rows(shifted, y)[0];
    EXPECT_NEAR(a, b, 1e-12);
  }
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  Tensor z = random_tensor({4, 3}, rng, -3.0, 3.0);
  const std::vector<int> y{0, 2, 1, 2};
  for (Reduction r : {Reduction::mean, Reduction::sum}) {
    Graph g;
    Var zv = g.parameter(z);
    g.backward(softmax_cross_entropy(g, zv, y, r));
    auto loss = [&] {
      Graph h;
      return h.value(softmax_cross_entropy(h, h.constant(z), y, r))[0];
    };
    EXPECT_LT(max_grad_error(z, g.grad(zv), loss, rng), 1e-4);
  }
}

TEST(Backward, SumGivesOnes) {
  Graph g;
  Var x = g.parameter(Tensor({2, 3, 4}, 0.5));
  g.backward(sum(g, x));
  EXPECT_EQ(g.grad(x), Tensor({2, 3, 4}, 1.0));
}

TEST(Backward, ConstantLossGivesZeroGradient) {
  Graph g;
  Var x = g.parameter(Tensor({3}, 2.0));
  Var c = sum(g, g.constant(Tensor({2}, 1.0)));
  g.backward(c);
  EXPECT_EQ(g.grad(x), Tensor::zeros({3}));
}

TEST(Backward, TwiceWithoutNewForwardThrows) {
  Graph g;
  Var x = g.parameter(Tensor({2}, 1.0));
  Var l = sum(g, x);
  g.backward(l);
  EXPECT_THROW(g.backward(l), GraphError);
}

TEST(Backward, NonScalarLossThrows) {
  Graph g;
  Var x = g.parameter(Tensor({2}, 1.0));
  EXPECT_THROW(g.backward(x), GraphError);
}

TEST(Backward, TwoLayerMlpMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({6, 5}, rng);
  Tensor w1 = random_tensor({5, 7}, rng);
  Tensor b1 = random_tensor({7}, rng);
  Tensor w2 = random_tensor({7, 3}, rng);
  Tensor b2 = random_tensor({3}, rng);
  const std::vector<int> y{0, 1, 2, 2, 1, 0};
  auto net = [&](Graph& g, bool track, std::vector<Var>* leaves) {
    Var xv = g.input(x, track);
    Var p1 = track ? g.parameter(w1) : g.constant(w1);
    Var q1 = track ? g.parameter(b1) : g.constant(b1);
    Var p2 = track ? g.parameter(w2) : g.constant(w2);
    Var q2 = track ? g.parameter(b2) : g.constant(b2);
    if (leaves) *leaves = {xv, p1, q1, p2, q2};
    Var h = relu(g, add_row_bias(g, matmul(g, xv, p1), q1));
    return softmax_cross_entropy(g, add_row_bias(g, matmul(g, h, p2), q2), y);
  };
  Graph g;
  std::vector<Var> leaves;
  g.backward(net(g, true, &leaves));
  auto loss = [&] {
    Graph h;
    return h.value(net(h, false, nullptr))[0];
  };
  std::vector<Tensor*> tensors{&x, &w1, &b1, &w2, &b2};
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    EXPECT_LT(max_grad_error(*tensors[i], g.grad(leaves[i]), loss, rng), 1e-4) << "leaf " << i;
  }
}

TEST(Forward, DeterministicReruns) {
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor({4, 2, 6, 6}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  auto run = [&] {
    Graph g;
    return g.value(maxpool2d(g, relu(g, conv2d(g, g.constant(x), g.constant(w), 1, 1)), 2, 2));
  };
  EXPECT_EQ(run(), run());
}

TEST(Forward, NonFiniteLeafIsRejected) {
  Graph g;
  EXPECT_THROW(g.constant(Tensor::from({2}, {1.0, std::nan("")})), NumericError);
}

TEST(Forward, OverflowIsReported) {
  Graph g;
  Var a = g.constant(Tensor::from({1, 1}, {1e200}));
  EXPECT_THROW(matmul(g, a, a), NumericError);
}

TEST(Precision, SinglePrecisionGemmTracksDouble) {
  std::mt19937_64 rng(10);
  const Tensor a = random_tensor({16, 32}, rng);
  const Tensor b = random_tensor({32, 8}, rng);
  Graph g64(Precision::f64), g32(Precision::f32);
  const Tensor p64 = g64.value(matmul(g64, g64.constant(a), g64.constant(b)));
  const Tensor p32 = g32.value(matmul(g32, g32.constant(a), g32.constant(b)));
  EXPECT_LT(max_abs_diff(p64, p32), 1e-4);
  EXPECT_NE(p64, p32);
  // Every f32 result is exactly representable as a float.
  for (double v : p32.values()) EXPECT_EQ(static_cast<double>(static_cast<float>(v)), v);
}
