#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "topoformer/grad_check.hpp"
#include "topoformer/rng.hpp"
#include "topoformer/tape.hpp"
#include "topoformer/tensor.hpp"

namespace tf = topoformer;

namespace {

tf::Tensor random_tensor(tf::Shape shape, tf::Rng& rng, double lo = -2.0, double hi = 2.0,
                         bool requires_grad = false) {
  tf::Tensor t = tf::Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Scalarizes an op output with fixed random weights so that the backward
/// pass sees a non-uniform adjoint.
tf::Tensor weighted_sum(tf::Tape& tape, const tf::Tensor& x, const tf::Tensor& weights) {
  return tape.sum(tape.mul(x, weights));
}

}  // namespace

TEST(Matmul, IdentityCase) {
  tf::Tape tape;
  tf::Tensor a = tf::Tensor::from_rows({{1, 2}, {3, 4}});
  tf::Tensor eye = tf::Tensor::from_rows({{1, 0}, {0, 1}});
  tf::Tensor out = tape.matmul(a, eye);
  EXPECT_EQ(out.data(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, ZeroCase) {
  tf::Tape tape;
  tf::Tensor a = tf::Tensor::from_rows({{1, 2}, {3, 4}});
  tf::Tensor zero = tf::Tensor::zeros({2, 2});
  tf::Tensor out = tape.matmul(a, zero);
  EXPECT_EQ(out.data(), (std::vector<double>{0, 0, 0, 0}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  tf::Tape tape;
  tf::Tensor a = tf::Tensor::zeros({2, 3});
  tf::Tensor b = tf::Tensor::zeros({2, 2});
  try {
    tape.matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const tf::DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  tf::Rng rng(101);
  tf::Tensor a = random_tensor({3, 3}, rng, -2.0, 2.0, true);
  tf::Tensor b = random_tensor({3, 3}, rng);
  auto f = [&](tf::Tape& tape) { return tape.sum(tape.matmul(a, b)); };
  auto report = tf::grad_check(f, {a}, 1e-6, 1e-6);
  EXPECT_TRUE(report.ok()) << "max rel error " << report.max_rel_error;
}

TEST(Conv1d, IdentityKernel) {
  tf::Tape tape;
  tf::Tensor in({1, 3}, {1, 1, 1});
  tf::Tensor k({1, 1, 3}, {0, 1, 0});
  tf::Tensor b({1}, {0});
  tf::Tensor out = tape.conv1d(in, k, b);
  EXPECT_EQ(out.data(), (std::vector<double>{1, 1, 1}));
}

TEST(Conv1d, BoxKernelWithZeroPadding) {
  tf::Tape tape;
  tf::Tensor in({1, 3}, {1, 2, 3});
  tf::Tensor k({1, 1, 3}, {1, 1, 1});
  tf::Tensor b({1}, {0});
  tf::Tensor out = tape.conv1d(in, k, b);
  EXPECT_EQ(out.data(), (std::vector<double>{3, 6, 5}));
}

TEST(Conv1d, EvenKernelRejected) {
  tf::Tape tape;
  tf::Tensor in = tf::Tensor::zeros({1, 4});
  tf::Tensor k = tf::Tensor::zeros({1, 1, 2});
  EXPECT_THROW(tape.conv1d(in, k), tf::ConfigError);
}

TEST(Conv1d, KernelGradientMatchesFiniteDifferences) {
  tf::Rng rng(202);
  tf::Tensor in = random_tensor({2, 8}, rng);
  tf::Tensor k = random_tensor({3, 2, 3}, rng, -1.0, 1.0, true);
  tf::Tensor b = random_tensor({3}, rng, -0.5, 0.5, true);
  tf::Tensor w = random_tensor({3, 8}, rng);
  auto f = [&](tf::Tape& tape) { return weighted_sum(tape, tape.conv1d(in, k, b), w); };
  auto report = tf::grad_check(f, {k, b}, 1e-6, 1e-6);
  EXPECT_TRUE(report.ok()) << "max rel error " << report.max_rel_error;
}

TEST(Softmax, SymmetricPair) {
  tf::Tape tape;
  tf::Tensor x({2}, {0, 0});
  tf::Tensor out = tape.softmax(x, 0);
  EXPECT_DOUBLE_EQ(out.at(0), 0.5);
  EXPECT_DOUBLE_EQ(out.at(1), 0.5);
}

TEST(Softmax, StableUnderLargeConstantInput) {
  tf::Tape tape;
  tf::Tensor x({3}, {1000, 1000, 1000});
  tf::Tensor out = tape.softmax(x, 0);
  for (double v : out.data()) {
    EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Softmax, ClosedFormQuarterThreeQuarters) {
  tf::Tape tape;
  tf::Tensor x({2}, {0.0, std::log(3.0)});
  tf::Tensor out = tape.softmax(x, 0);
  EXPECT_NEAR(out.at(0), 0.25, 1e-15);
  EXPECT_NEAR(out.at(1), 0.75, 1e-15);
}

TEST(Softmax, SlicesSumToOneAndShiftInvariant) {
  tf::Rng rng(303);
  for (int trial = 0; trial < 50; ++trial) {
    tf::Tensor x = random_tensor({4, 5}, rng);
    for (std::size_t axis : {0u, 1u}) {
      tf::Tape tape;
      tf::Tensor s = tape.softmax(x, axis);
      const std::size_t rows = s.dim(0), cols = s.dim(1);
      if (axis == 1) {
        for (std::size_t i = 0; i < rows; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < cols; ++j) acc += s.at(i, j);
          EXPECT_NEAR(acc, 1.0, 1e-12);
        }
      } else {
        for (std::size_t j = 0; j < cols; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < rows; ++i) acc += s.at(i, j);
          EXPECT_NEAR(acc, 1.0, 1e-12);
        }
      }
      const double c = rng.uniform(-50.0, 50.0);
      tf::Tensor shifted = tape.add(x, tf::Tensor::full(x.shape(), c));
      tf::Tensor s2 = tape.softmax(shifted, axis);
      for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_NEAR(s.data()[i], s2.data()[i], 1e-12);
      }
    }
  }
}

TEST(Elementwise, TrivialValues) {
  tf::Tape tape;
  EXPECT_DOUBLE_EQ(tape.sigmoid(tf::Tensor::scalar(0.0)).value(), 0.5);
  EXPECT_DOUBLE_EQ(tape.tanh(tf::Tensor::scalar(0.0)).value(), 0.0);
  EXPECT_DOUBLE_EQ(tape.relu(tf::Tensor::scalar(-2.5)).value(), 0.0);
  EXPECT_DOUBLE_EQ(tape.abs(tf::Tensor::scalar(-1.25)).value(), 1.25);
  EXPECT_DOUBLE_EQ(tape.scale(tf::Tensor::scalar(3.0), -2.0).value(), -6.0);
}

TEST(Elementwise, ShapeMismatchThrows) {
  tf::Tape tape;
  tf::Tensor a = tf::Tensor::zeros({2, 2});
  tf::Tensor b = tf::Tensor::zeros({4});
  EXPECT_THROW(tape.add(a, b), tf::DimensionError);
  EXPECT_THROW(tape.sub(a, b), tf::DimensionError);
  EXPECT_THROW(tape.mul(a, b), tf::DimensionError);
  EXPECT_THROW(tape.softmax(a, 2), tf::DimensionError);
  EXPECT_THROW(tape.slice(a, 0, 1, 3), tf::DimensionError);
  EXPECT_THROW(tape.reshape(a, {3}), tf::DimensionError);
}

TEST(Backward, SquareHasDerivativeTwoX) {
  tf::Tape tape;
  tf::Tensor x = tf::Tensor::scalar(3.0, true);
  tf::Tensor loss = tape.mul(x, x);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, SigmoidChainMatchesFiniteDifferences) {
  tf::Rng rng(404);
  tf::Tensor w = random_tensor({4, 4}, rng, -1.0, 1.0, true);
  tf::Tensor x = random_tensor({4, 1}, rng, -1.0, 1.0, true);
  auto f = [&](tf::Tape& tape) { return tape.sum(tape.sigmoid(tape.matmul(w, x))); };
  auto report = tf::grad_check(f, {w, x}, 1e-6, 1e-6);
  EXPECT_TRUE(report.ok()) << "max rel error " << report.max_rel_error;
}

TEST(Backward, RepeatedCallsAccumulate) {
  tf::Tape tape;
  tf::Tensor x = tf::Tensor::scalar(3.0, true);
  tf::Tensor loss = tape.mul(x, x);
  tape.backward(loss);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
  x.zero_grad();
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, NonScalarLossRejected) {
  tf::Tape tape;
  tf::Tensor x = tf::Tensor::zeros({3}, true);
  tf::Tensor y = tape.relu(x);
  EXPECT_THROW(tape.backward(y), tf::ContractError);
}

TEST(Backward, EmptyTapeRejected) {
  tf::Tape tape;
  tf::Tensor x = tf::Tensor::scalar(1.0, true);
  EXPECT_THROW(tape.backward(x), tf::ContractError);
}

TEST(Backward, SharedSubexpressionAccumulatesInOnePass) {
  // loss = x*x + x  =>  d/dx = 2x + 1
  tf::Tape tape;
  tf::Tensor x = tf::Tensor::scalar(5.0, true);
  tf::Tensor loss = tape.add(tape.mul(x, x), x);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 11.0);
}

TEST(GradCheck, IdentityIsExact) {
  // dyadic inputs and a dyadic step keep the central difference exact
  tf::Tensor x({4}, {0.5, -1.25, 2.0, 0.0078125}, true);
  auto f = [&](tf::Tape& tape) { return tape.sum(x); };
  auto report = tf::grad_check(f, {x}, 0.0009765625 /* 2^-10 */, 1e-12);
  EXPECT_TRUE(report.ok());
  EXPECT_DOUBLE_EQ(report.max_rel_error, 0.0);
}

TEST(GradCheck, MatmulChainDepthThree) {
  tf::Rng rng(505);
  tf::Tensor a = random_tensor({2, 3}, rng, -1.0, 1.0, true);
  tf::Tensor b = random_tensor({3, 4}, rng, -1.0, 1.0, true);
  tf::Tensor c = random_tensor({4, 2}, rng, -1.0, 1.0, true);
  auto f = [&](tf::Tape& tape) {
    return tape.sum(tape.matmul(tape.matmul(a, b), c));
  };
  auto report = tf::grad_check(f, {a, b, c}, 1e-6, 1e-6);
  EXPECT_TRUE(report.ok()) << "max rel error " << report.max_rel_error;
}

TEST(GradCheck, RejectsNonPositiveStep) {
  tf::Tensor x = tf::Tensor::scalar(1.0, true);
  auto f = [&](tf::Tape& tape) { return tape.sum(x); };
  EXPECT_THROW(tf::grad_check(f, {x}, 0.0, 1e-6), tf::ContractError);
}

// Finite-difference property over the whole differentiable op suite:
// 100 seeded trials per op, inputs in [-2, 2], rel error < 1e-5.
TEST(GradientProperty, EveryOpMatchesFiniteDifferences) {
  constexpr int kTrials = 100;
  constexpr double kStep = 1e-6;
  constexpr double kTol = 1e-5;

  for (int trial = 0; trial < kTrials; ++trial) {
    tf::Rng rng(10'000 + trial);
    const auto check = [&](const char* op, const std::function<tf::Tensor(tf::Tape&)>& f,
                           std::vector<tf::Tensor> inputs) {
      auto report = tf::grad_check(f, std::move(inputs), kStep, kTol);
      EXPECT_TRUE(report.ok()) << op << " trial " << trial << ": max rel error "
                               << report.max_rel_error;
    };

    {
      tf::Tensor a = random_tensor({2, 3}, rng, -2, 2, true);
      tf::Tensor b = random_tensor({2, 3}, rng, -2, 2, true);
      tf::Tensor w = random_tensor({2, 3}, rng);
      check("add", [&](tf::Tape& t) { return weighted_sum(t, t.add(a, b), w); }, {a, b});
      check("sub", [&](tf::Tape& t) { return weighted_sum(t, t.sub(a, b), w); }, {a, b});
      check("mul", [&](tf::Tape& t) { return weighted_sum(t, t.mul(a, b), w); }, {a, b});
      check("sigmoid", [&](tf::Tape& t) { return weighted_sum(t, t.sigmoid(a), w); }, {a});
      check("tanh", [&](tf::Tape& t) { return weighted_sum(t, t.tanh(a), w); }, {a});
      check("scale", [&](tf::Tape& t) { return weighted_sum(t, t.scale(a, -1.7), w); }, {a});
      check("mean", [&](tf::Tape& t) { return t.mean(a); }, {a});
      check("sum", [&](tf::Tape& t) { return t.sum(a); }, {a});
      check("reshape", [&](tf::Tape& t) { return weighted_sum(t, t.reshape(a, {3, 2}),
                                                              t.transpose(w)); },
            {a});
      check("transpose", [&](tf::Tape& t) { return weighted_sum(t, t.transpose(a),
                                                                t.transpose(w)); },
            {a});
      check("slice", [&](tf::Tape& t) {
              return t.sum(t.slice(a, 1, 1, 2));
            },
            {a});
      check("softmax0", [&](tf::Tape& t) { return weighted_sum(t, t.softmax(a, 0), w); }, {a});
      check("softmax1", [&](tf::Tape& t) { return weighted_sum(t, t.softmax(a, 1), w); }, {a});
    }
    {
      // keep relu/abs inputs away from their kinks
      tf::Tensor a = random_tensor({2, 3}, rng, -2, 2, true);
      for (double& v : a.data()) {
        if (std::fabs(v) < 1e-2) v = v < 0 ? v - 1e-2 : v + 1e-2;
      }
      tf::Tensor w = random_tensor({2, 3}, rng);
      check("relu", [&](tf::Tape& t) { return weighted_sum(t, t.relu(a), w); }, {a});
      check("abs", [&](tf::Tape& t) { return weighted_sum(t, t.abs(a), w); }, {a});
    }
    {
      tf::Tensor a = random_tensor({2, 4}, rng, -2, 2, true);
      tf::Tensor b = random_tensor({4, 3}, rng, -2, 2, true);
      tf::Tensor w = random_tensor({2, 3}, rng);
      check("matmul", [&](tf::Tape& t) { return weighted_sum(t, t.matmul(a, b), w); }, {a, b});
    }
    {
      tf::Tensor x = random_tensor({3, 4}, rng, -2, 2, true);
      tf::Tensor bias = random_tensor({4}, rng, -2, 2, true);
      tf::Tensor w = random_tensor({3, 4}, rng);
      check("add_rowwise",
            [&](tf::Tape& t) { return weighted_sum(t, t.add_rowwise(x, bias), w); }, {x, bias});
      tf::Tensor gamma = random_tensor({4}, rng, 0.5, 1.5, true);
      tf::Tensor beta = random_tensor({4}, rng, -0.5, 0.5, true);
      check("layer_norm", [&](tf::Tape& t) {
              return weighted_sum(t, t.layer_norm(x, gamma, beta, 1e-5), w);
            },
            {x, gamma, beta});
    }
    {
      tf::Tensor in = random_tensor({2, 6}, rng, -2, 2, true);
      tf::Tensor k = random_tensor({2, 2, 3}, rng, -1, 1, true);
      tf::Tensor b = random_tensor({2}, rng, -1, 1, true);
      tf::Tensor w = random_tensor({2, 6}, rng);
      check("conv1d", [&](tf::Tape& t) { return weighted_sum(t, t.conv1d(in, k, b), w); },
            {in, k, b});
      tf::Tensor wp = random_tensor({2, 3}, rng);
      check("avg_pool1d",
            [&](tf::Tape& t) { return weighted_sum(t, t.avg_pool1d(in, 2), wp); }, {in});
    }
    {
      tf::Tensor a = random_tensor({2, 2}, rng, -2, 2, true);
      tf::Tensor b = random_tensor({2, 3}, rng, -2, 2, true);
      tf::Tensor w = random_tensor({2, 5}, rng);
      check("concat", [&](tf::Tape& t) {
              return weighted_sum(t, t.concat({a, b}, 1), w);
            },
            {a, b});
    }
    {
      tf::Tensor pre = random_tensor({8, 3}, rng, -2, 2, true);
      tf::Tensor c_prev = random_tensor({2, 3}, rng, -2, 2, true);
      tf::Tensor wh = random_tensor({2, 3}, rng);
      tf::Tensor wc = random_tensor({2, 3}, rng);
      check("lstm_pointwise", [&](tf::Tape& t) {
              auto [h, c] = t.lstm_pointwise(pre, c_prev);
              return t.add(weighted_sum(t, h, wh), weighted_sum(t, c, wc));
            },
            {pre, c_prev});
    }
  }
}

TEST(LstmPointwise, ZeroParameterClosedForm) {
  // all-zero pre-activations: i = f = o = 0.5, g = 0
  // => c = 0.5 * c_prev, h = 0.5 * tanh(0.5 * c_prev)
  tf::Tape tape;
  tf::Tensor pre = tf::Tensor::zeros({8, 2});
  tf::Tensor c_prev({2, 2}, {1.0, -0.5, 2.0, 0.0});
  auto [h, c] = tape.lstm_pointwise(pre, c_prev);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(c.data()[i], 0.5 * c_prev.data()[i]);
    EXPECT_DOUBLE_EQ(h.data()[i], 0.5 * std::tanh(0.5 * c_prev.data()[i]));
  }
}

TEST(ShapeOps, TransposeRoundTripIsBitwiseExact) {
  tf::Rng rng(606);
  tf::Tensor x = random_tensor({5, 7}, rng);
  tf::Tape tape;
  tf::Tensor rt = tape.transpose(tape.transpose(x));
  EXPECT_EQ(rt.data(), x.data());
  tf::Tensor rs = tape.reshape(tape.reshape(x, {35}), {5, 7});
  EXPECT_EQ(rs.data(), x.data());
}

TEST(ShapeOps, ConcatSliceRoundTrip) {
  tf::Rng rng(707);
  tf::Tensor a = random_tensor({2, 3}, rng);
  tf::Tensor b = random_tensor({2, 2}, rng);
  tf::Tape tape;
  tf::Tensor c = tape.concat({a, b}, 1);
  EXPECT_EQ(tape.slice(c, 1, 0, 3).data(), a.data());
  EXPECT_EQ(tape.slice(c, 1, 3, 2).data(), b.data());
}

TEST(Tape, ReplayDeterminism) {
  auto run = [](std::uint64_t seed) {
    tf::Rng rng(seed);
    tf::Tensor w = random_tensor({4, 4}, rng, -1, 1, true);
    tf::Tensor x = random_tensor({4, 4}, rng, -1, 1, true);
    tf::Tape tape;
    tf::Tensor y = tape.mean(tape.tanh(tape.matmul(w, tape.sigmoid(x))));
    tape.backward(y);
    std::vector<double> out;
    out.push_back(y.value());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  EXPECT_EQ(run(99), run(99));
  EXPECT_NE(run(99), run(100));
}

TEST(Tape, NoRecordingModeSkipsGradients) {
  tf::Tape tape;
  tape.set_recording(false);
  tf::Tensor x = tf::Tensor::scalar(2.0, true);
  tf::Tensor y = tape.mul(x, x);
  EXPECT_DOUBLE_EQ(y.value(), 4.0);
  EXPECT_EQ(tape.num_records(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tensor, InvariantsAndAccessors) {
  EXPECT_THROW((tf::Tensor({2, 2}, {1.0, 2.0})), tf::DimensionError);
  EXPECT_THROW((tf::Tensor({0}, {})), tf::DimensionError);
  tf::Tensor t = tf::Tensor::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(t.size(), 4u);
  EXPECT_DOUBLE_EQ(t.at(1, 0), 3.0);
  EXPECT_THROW(t.value(), tf::ContractError);
  tf::Tensor s = tf::Tensor::scalar(7.0);
  EXPECT_DOUBLE_EQ(s.value(), 7.0);
  EXPECT_THROW(s.grad(), tf::ContractError);  // requires_grad is false
}
