#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "ddsp/autodiff/grad_check.hpp"
#include "ddsp/autodiff/ops.hpp"
#include "oracles.hpp"

using namespace ddsp;
using namespace ddsp::ad;

namespace {

Tensor<double> random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const auto n = numel(shape);
  return Tensor<double>(std::move(shape), oracle::random_vector(rng, n, lo, hi));
}

// Reduces any tensor to a scalar with a fixed random weighting, so every
// output element's gradient is exercised.
Var<double> weighted_sum(Var<double> y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = y.tape().constant(y.shape(), oracle::random_vector(rng, y.size()));
  return sum(mul(y, w));
}

using Op = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

void check_op(const char* name, const std::vector<Shape>& shapes, const Op& op, int instances = 20,
              double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(std::hash<std::string>{}(name));
  for (int i = 0; i < instances; ++i) {
    std::vector<Tensor<double>> pts;
    for (const auto& s : shapes) pts.push_back(random_tensor(rng, s, lo, hi));
    const auto seed = rng();
    const auto report = grad_check(
        [&](Tape<double>& t, std::span<const Var<double>> v) { return weighted_sum(op(t, v), seed); }, pts, 1e-6);
    EXPECT_LT(report.max_rel_error, 1e-4) << name << " instance " << i;
  }
}

}  // namespace

TEST(Autodiff, SoftmaxOfZerosIsUniform) {
  Tape<double> t;
  auto y = softmax(t.constant({3}, {0, 0, 0}));
  for (double v : y.value()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Autodiff, DilatedConvSamePaddingKeepsLength) {
  Tape<double> t;
  auto x = t.constant({5, 2}, std::vector<double>(10, 1.0));
  auto w = t.constant({3, 2, 4}, std::vector<double>(24, 0.5));
  EXPECT_EQ(conv1d(x, w, Var<double>{}, 2).shape(), (Shape{5, 4}));
}

TEST(Autodiff, MatmulHandValues) {
  Tape<double> t;
  auto a = t.constant({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = t.constant({3, 1}, {1, 0, -1});
  auto y = matmul(a, b);
  EXPECT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(y.value()[0], -2.0);
  EXPECT_DOUBLE_EQ(y.value()[1], -2.0);
}

TEST(Autodiff, ShapeErrorNamesBothShapes) {
  Tape<double> t;
  auto a = t.constant({2, 3}, std::vector<double>(6, 1.0));
  auto b = t.constant({4}, std::vector<double>(4, 1.0));
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4]"), std::string::npos);
  }
}

TEST(Autodiff, NonFiniteOutputIsNumericError) {
  Tape<double> t;
  auto x = t.constant({1}, {800.0});
  EXPECT_THROW(pow(x, 200.0), NumericError);
}

TEST(Autodiff, LinearGradient) {
  Tape<double> t;
  auto w = t.leaf({3}, {0.5, -1.0, 2.0}, true);
  auto x = t.constant({3}, {1.0, 2.0, 3.0});
  auto loss = sum(mul(w, x));
  t.backward(loss);
  EXPECT_EQ(t.grad(w), (std::vector<double>{1.0, 2.0, 3.0}));
}

TEST(Autodiff, MeanOfSquaresGradient) {
  Tape<double> t;
  auto w = t.leaf({4}, {1.0, -2.0, 3.0, 0.5}, true);
  t.backward(mean(square(w)));
  const auto g = t.grad(w);
  const std::vector<double> wv{1.0, -2.0, 3.0, 0.5};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(g[i], 2.0 * wv[i] / 4.0);
}

TEST(Autodiff, UntouchedLeafGetsZeroGradient) {
  Tape<double> t;
  auto w = t.leaf({2}, {1.0, 2.0}, true);
  auto unused = t.leaf({3}, {1.0, 2.0, 3.0}, true);
  t.backward(sum(w));
  EXPECT_EQ(t.grad(unused), (std::vector<double>{0.0, 0.0, 0.0}));
}

TEST(Autodiff, NonScalarLossRejected) {
  Tape<double> t;
  auto w = t.leaf({2}, {1.0, 2.0}, true);
  EXPECT_THROW(t.backward(w), InvalidArgument);
}

TEST(Autodiff, ReusedTensorAccumulates) {
  // loss = sum(x * x + 3 x)  =>  d/dx = 2x + 3
  Tape<double> t;
  auto x = t.leaf({3}, {1.0, -0.5, 2.0}, true);
  auto loss = sum(add(mul(x, x), scale(x, 3.0)));
  t.backward(loss);
  EXPECT_EQ(t.grad(x), (std::vector<double>{5.0, 2.0, 7.0}));
}

TEST(Autodiff, DetachBlocksGradient) {
  Tape<double> t;
  auto x = t.leaf({2}, {1.0, 2.0}, true);
  auto loss = sum(mul(detach(x), x));
  t.backward(loss);
  EXPECT_EQ(t.grad(x), (std::vector<double>{1.0, 2.0}));
}

TEST(Autodiff, ForwardIsBitwiseDeterministic) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor(rng, {40, 6});
  const auto w = random_tensor(rng, {3, 6, 5});
  auto run = [&] {
    Tape<double> t;
    auto y = softmax(leaky_relu(conv1d(t.leaf(x, false), t.leaf(w, false), Var<double>{}, 4), 0.1));
    return std::vector<double>(y.value().begin(), y.value().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto x = random_tensor(rng, {7, 13}, -30.0, 30.0);
    Tape<float> t;
    auto y = softmax(t.leaf(x.cast<float>(), false));
    for (std::size_t r = 0; r < 7; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 13; ++c) s += y.value()[r * 13 + c];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Autodiff, GradCheckOfConstantIsZero) {
  std::mt19937_64 rng(4);
  const auto x = random_tensor(rng, {5});
  const double err = grad_check([](Tape<double>& t, Var<double>) { return t.scalar(3.0); }, x, 1e-5);
  EXPECT_EQ(err, 0.0);
}

TEST(Autodiff, GradCheckSumSigmoid) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor(rng, {16}, -3.0, 3.0);
  const double err = grad_check([](Tape<double>&, Var<double> v) { return sum(sigmoid(v)); }, x, 1e-5);
  EXPECT_LT(err, 1e-6);
}

TEST(Autodiff, GradCheckRejectsNonScalar) {
  std::mt19937_64 rng(6);
  const auto x = random_tensor(rng, {4});
  EXPECT_THROW(grad_check([](Tape<double>&, Var<double> v) { return sigmoid(v); }, x, 1e-5), InvalidArgument);
}

TEST(Autodiff, GradCheckRejectsBadEps) {
  std::mt19937_64 rng(6);
  const auto x = random_tensor(rng, {4});
  EXPECT_THROW(grad_check([](Tape<double>&, Var<double> v) { return sum(v); }, x, 1e-2), InvalidArgument);
}

// Every op kind against central differences on >= 20 random instances.
TEST(AutodiffOps, Add) {
  check_op("add", {{4, 3}, {4, 3}}, [](auto&, auto v) { return add(v[0], v[1]); });
  check_op("add_bcast", {{4, 3}, {3}}, [](auto&, auto v) { return add(v[0], v[1]); });
  check_op("add_scalar_bcast", {{4, 3}, {1}}, [](auto&, auto v) { return add(v[0], v[1]); });
}
TEST(AutodiffOps, Sub) {
  check_op("sub", {{5}, {5}}, [](auto&, auto v) { return sub(v[0], v[1]); });
  check_op("sub_bcast_a", {{3}, {2, 3}}, [](auto&, auto v) { return sub(v[0], v[1]); });
}
TEST(AutodiffOps, Mul) {
  check_op("mul", {{6}, {6}}, [](auto&, auto v) { return mul(v[0], v[1]); });
  check_op("mul_bcast", {{2, 6}, {6}}, [](auto&, auto v) { return mul(v[0], v[1]); });
}
TEST(AutodiffOps, Matmul) {
  check_op("matmul", {{3, 4}, {4, 2}}, [](auto&, auto v) { return matmul(v[0], v[1]); });
}
TEST(AutodiffOps, Conv1d) {
  check_op("conv1d", {{9, 3}, {3, 3, 4}, {4}}, [](auto&, auto v) { return conv1d(v[0], v[1], v[2], 1); });
  check_op("conv1d_dilated", {{12, 2}, {3, 2, 3}, {3}}, [](auto&, auto v) { return conv1d(v[0], v[1], v[2], 4); });
  check_op("conv1d_k1", {{5, 4}, {1, 4, 2}}, [](auto&, auto v) { return conv1d(v[0], v[1], Var<double>{}, 1); });
}
TEST(AutodiffOps, Conv2d) {
  check_op("conv2d", {{6, 7, 2}, {3, 5, 2, 3}, {3}}, [](auto&, auto v) { return conv2d(v[0], v[1], v[2], 1, 2); });
  check_op("conv2d_s1", {{4, 4, 1}, {3, 3, 1, 2}}, [](auto&, auto v) { return conv2d(v[0], v[1], Var<double>{}, 1, 1); });
}
TEST(AutodiffOps, Pointwise) {
  check_op("leaky_relu", {{20}}, [](auto&, auto v) { return leaky_relu(v[0], 0.1); });
  check_op("sigmoid", {{20}}, [](auto&, auto v) { return sigmoid(v[0]); }, 20, -5.0, 5.0);
  check_op("exp_sigmoid", {{20}}, [](auto&, auto v) { return exp_sigmoid(v[0]); }, 20, -5.0, 5.0);
  check_op("log", {{20}}, [](auto&, auto v) { return log(v[0]); }, 20, 0.1, 3.0);
  check_op("pow", {{20}}, [](auto&, auto v) { return pow(v[0], 1.7); }, 20, 0.1, 3.0);
  check_op("square", {{20}}, [](auto&, auto v) { return square(v[0]); });
  check_op("scale", {{8}}, [](auto&, auto v) { return scale(v[0], -2.5); });
  check_op("add_scalar", {{8}}, [](auto&, auto v) { return add_scalar(v[0], 2.5); });
  check_op("clamp_min", {{20}}, [](auto&, auto v) { return clamp_min(v[0], 0.05); }, 20, -1.0, 1.0);
}
TEST(AutodiffOps, Softmax) {
  check_op("softmax", {{3, 7}}, [](auto&, auto v) { return softmax(v[0]); }, 20, -3.0, 3.0);
}
TEST(AutodiffOps, Reductions) {
  check_op("mean", {{11}}, [](auto&, auto v) { return mean(v[0]); });
  check_op("sum", {{11}}, [](auto&, auto v) { return sum(v[0]); });
  check_op("l1_distance", {{4, 5}, {4, 5}}, [](auto&, auto v) { return l1_distance(v[0], v[1]); });
}
TEST(AutodiffOps, Restructuring) {
  check_op("slice_last", {{4, 6}}, [](auto&, auto v) { return slice(v[0], 1, 2, 5); });
  check_op("slice_first", {{4, 6}}, [](auto&, auto v) { return slice(v[0], 0, 1, 3); });
  check_op("concat", {{3, 2}, {3, 4}}, [](auto&, auto v) { return concat(std::vector{v[0], v[1]}, 1); });
  check_op("concat0", {{2, 3}, {1, 3}}, [](auto&, auto v) { return concat(std::vector{v[0], v[1]}, 0); });
  check_op("transpose", {{3, 5}}, [](auto&, auto v) { return transpose(v[0]); });
  check_op("broadcast", {{5}}, [](auto&, auto v) { return broadcast(v[0], Shape{3, 5}); });
  check_op("reshape", {{2, 6}}, [](auto&, auto v) { return reshape(v[0], Shape{3, 4}); });
}
TEST(AutodiffOps, LayerNorm) {
  check_op("layer_norm", {{4, 6}, {6}, {6}}, [](auto&, auto v) { return layer_norm(v[0], v[1], v[2]); });
}
TEST(AutodiffOps, FftLinear) {
  std::mt19937_64 rng(77);
  auto m = std::make_shared<const Tensor<double>>(random_tensor(rng, {7, 4}));
  check_op("fft_linear", {{3, 4}}, [m](auto&, auto v) { return fft_linear(v[0], m); });
}
TEST(AutodiffOps, MaskedFill) {
  const std::vector<unsigned char> mask{0, 1, 0, 0, 1, 1};
  check_op("masked_fill", {{2, 3}}, [&](auto&, auto v) { return masked_fill(v[0], std::span(mask), -5.0); });
}
