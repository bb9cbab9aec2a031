#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "topoformer/grad_check.hpp"
#include "topoformer/layers.hpp"
#include "topoformer/rng.hpp"

namespace tf = topoformer;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const tf::Tensor& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
  return m;
}

tf::Tensor random_tensor(tf::Shape shape, tf::Rng& rng, double lo = -1.0, double hi = 1.0) {
  tf::Tensor t = tf::Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Straightforward nested-loop attention, kept free of the Tensor/Tape
// machinery it is checking.
Mat attention_oracle(const Mat& x, const tf::MultiHeadAttention& mha) {
  const std::size_t seq = x.size();
  const std::size_t d = mha.d_model;
  const std::size_t heads = mha.num_heads;
  const std::size_t dk = d / heads;
  auto dense = [d](const Mat& in, const tf::Tensor& w, const tf::Tensor& b) {
    Mat out(in.size(), std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < in.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double acc = b.at(j);
        for (std::size_t k = 0; k < d; ++k) acc += in[i][k] * w.at(k, j);
        out[i][j] = acc;
      }
    return out;
  };
  const Mat q = dense(x, mha.q.weight, mha.q.bias);
  const Mat k = dense(x, mha.k.weight, mha.k.bias);
  const Mat v = dense(x, mha.v.weight, mha.v.bias);
  Mat merged(seq, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < seq; ++i) {
      std::vector<double> scores(seq);
      double mx = -1e300;
      for (std::size_t t = 0; t < seq; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < dk; ++j) acc += q[i][h * dk + j] * k[t][h * dk + j];
        scores[t] = acc / std::sqrt(static_cast<double>(dk));
        mx = std::max(mx, scores[t]);
      }
      double z = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      for (double& s : scores) s /= z;
      for (std::size_t j = 0; j < dk; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < seq; ++t) acc += scores[t] * v[t][h * dk + j];
        merged[i][h * dk + j] = acc;
      }
    }
  }
  return dense(merged, mha.o.weight, mha.o.bias);
}

// Scalar same-padded cross-correlation.
Mat conv_oracle(const Mat& in, const tf::Tensor& kernel, const std::vector<double>& bias) {
  const std::size_t c_out = kernel.dim(0), c_in = kernel.dim(1), k = kernel.dim(2);
  const std::size_t len = in[0].size();
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  Mat out(c_out, std::vector<double>(len, 0.0));
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t t = 0; t < len; ++t) {
      double acc = bias.empty() ? 0.0 : bias[o];
      for (std::size_t c = 0; c < c_in; ++c)
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) +
                                     static_cast<std::ptrdiff_t>(j) - pad;
          if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) {
            acc += kernel.at(o, c, j) * in[c][static_cast<std::size_t>(src)];
          }
        }
      out[o][t] = acc;
    }
  return out;
}

double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// One ConvLSTM recurrence step, element by element.
std::pair<Mat, Mat> convlstm_step_oracle(const tf::ConvLSTM1DCell& cell, const Mat& x,
                                         const Mat& h_prev, const Mat& c_prev) {
  auto vec = [](const tf::Tensor& t) {
    return std::vector<double>(t.data().begin(), t.data().end());
  };
  const Mat pre_i = conv_oracle(x, cell.w_xi, vec(cell.b_i));
  const Mat pre_f = conv_oracle(x, cell.w_xf, vec(cell.b_f));
  const Mat pre_o = conv_oracle(x, cell.w_xo, vec(cell.b_o));
  const Mat pre_g = conv_oracle(x, cell.w_xg, vec(cell.b_g));
  const Mat rec_i = conv_oracle(h_prev, cell.w_hi, {});
  const Mat rec_f = conv_oracle(h_prev, cell.w_hf, {});
  const Mat rec_o = conv_oracle(h_prev, cell.w_ho, {});
  const Mat rec_g = conv_oracle(h_prev, cell.w_hg, {});
  const std::size_t hc = cell.hidden_channels, len = x[0].size();
  Mat h(hc, std::vector<double>(len)), c(hc, std::vector<double>(len));
  for (std::size_t ch = 0; ch < hc; ++ch)
    for (std::size_t t = 0; t < len; ++t) {
      const double i = sigmoid_scalar(pre_i[ch][t] + rec_i[ch][t]);
      const double f = sigmoid_scalar(pre_f[ch][t] + rec_f[ch][t]);
      const double o = sigmoid_scalar(pre_o[ch][t] + rec_o[ch][t]);
      const double g = std::tanh(pre_g[ch][t] + rec_g[ch][t]);
      c[ch][t] = f * c_prev[ch][t] + i * g;
      h[ch][t] = o * std::tanh(c[ch][t]);
    }
  return {h, c};
}

void zero_params(std::vector<tf::NamedParam> params) {
  for (auto& p : params) {
    for (double& v : p.tensor.data()) v = 0.0;
  }
}

}  // namespace

TEST(Attention, ZeroInputGivesUniformWeights) {
  tf::Rng rng(1);
  tf::MultiHeadAttention mha(8, 2, rng);  // biases are zero-initialized
  tf::Tape tape;
  tf::Tensor x = tf::Tensor::zeros({5, 8});
  auto detailed = mha.forward_detailed(tape, x);
  for (const auto& w : detailed.head_weights) {
    for (double v : w.data()) EXPECT_NEAR(v, 1.0 / 5.0, 1e-15);
  }
}

TEST(Attention, SingleTokenWeightIsExactlyOne) {
  tf::Rng rng(2);
  tf::MultiHeadAttention mha(8, 2, rng);
  tf::Tape tape;
  tf::Tensor x = random_tensor({1, 8}, rng);
  auto detailed = mha.forward_detailed(tape, x);
  for (const auto& w : detailed.head_weights) {
    ASSERT_EQ(w.size(), 1u);
    EXPECT_DOUBLE_EQ(w.data()[0], 1.0);
  }
}

TEST(Attention, MatchesNestedLoopOracle) {
  tf::Rng rng(3);
  tf::MultiHeadAttention mha(8, 2, rng);
  for (double& v : mha.q.bias.data()) v = rng.uniform(-0.3, 0.3);
  for (double& v : mha.o.bias.data()) v = rng.uniform(-0.3, 0.3);
  tf::Tensor x = random_tensor({5, 8}, rng);
  tf::Tape tape;
  auto detailed = mha.forward_detailed(tape, x);
  for (const auto& w : detailed.head_weights) {
    for (std::size_t i = 0; i < w.dim(0); ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < w.dim(1); ++j) acc += w.at(i, j);
      EXPECT_NEAR(acc, 1.0, 1e-12);
    }
  }
  const Mat expected = attention_oracle(to_mat(x), mha);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_NEAR(detailed.output.at(i, j), expected[i][j], 1e-10);
    }
}

TEST(Attention, RejectsIndivisibleHeadCount) {
  tf::Rng rng(4);
  EXPECT_THROW(tf::MultiHeadAttention(64, 3, rng), tf::ConfigError);
}

TEST(Attention, PermutationEquivariantWithoutPositionalEncoding) {
  tf::Rng rng(5);
  tf::MultiHeadAttention mha(8, 2, rng);
  tf::Tensor x = random_tensor({6, 8}, rng);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  tf::Tensor xp = tf::Tensor::zeros({6, 8});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 8; ++j) xp.at(i, j) = x.at(perm[i], j);
  tf::Tape tape;
  tf::Tensor y = mha.forward(tape, x);
  tf::Tensor yp = mha.forward(tape, xp);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_NEAR(yp.at(i, j), y.at(perm[i], j), 1e-12);
    }
}

TEST(LayerNormOp, ConstantRowCollapsesToBeta) {
  tf::LayerNorm ln(4);
  tf::Tape tape;
  tf::Tensor x({1, 4}, {5, 5, 5, 5});
  tf::Tensor y = ln.forward(tape, x);
  for (double v : y.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(LayerNormOp, TwoPointRowClosedForm) {
  tf::LayerNorm ln(2);  // epsilon 1e-5
  tf::Tape tape;
  tf::Tensor x({1, 2}, {1, -1});
  tf::Tensor y = ln.forward(tape, x);
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y.at(0, 0), expected, 1e-15);
  EXPECT_NEAR(y.at(0, 1), -expected, 1e-15);
}

TEST(LayerNormOp, ZeroGammaAnnihilates) {
  tf::LayerNorm ln(3);
  for (double& v : ln.gamma.data()) v = 0.0;
  for (std::size_t i = 0; i < 3; ++i) ln.beta.data()[i] = static_cast<double>(i) - 1.0;
  tf::Rng rng(6);
  tf::Tape tape;
  tf::Tensor y = ln.forward(tape, random_tensor({4, 3}, rng));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_DOUBLE_EQ(y.at(i, j), ln.beta.data()[j]);
    }
}

TEST(LayerNormOp, NormalizesToZeroMeanUnitVariance) {
  tf::Rng rng(7);
  tf::LayerNorm ln(16);
  tf::Tape tape;
  tf::Tensor y = ln.forward(tape, random_tensor({10, 16}, rng, -3.0, 3.0));
  for (std::size_t i = 0; i < 10; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 16; ++j) mean += y.at(i, j);
    mean /= 16.0;
    for (std::size_t j = 0; j < 16; ++j) {
      var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
    }
    var /= 16.0;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-4);  // epsilon-stabilized, slightly below 1
  }
}

TEST(ConvLstmCell, ZeroParameterClosedForm) {
  tf::Rng rng(8);
  tf::ConvLSTM1DCell cell(1, 2, 3, rng);
  std::vector<tf::NamedParam> params;
  cell.collect("cell", params);
  zero_params(params);
  tf::Rng data_rng(9);
  tf::Tensor x = random_tensor({1, 4}, data_rng);
  tf::Tensor h0 = random_tensor({2, 4}, data_rng);
  tf::Tensor c0 = random_tensor({2, 4}, data_rng);
  tf::Tape tape;
  auto [h, c] = cell.step(tape, x, h0, c0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_NEAR(c.data()[i], 0.5 * c0.data()[i], 1e-15);
    EXPECT_NEAR(h.data()[i], 0.5 * std::tanh(0.5 * c0.data()[i]), 1e-15);
  }
}

TEST(ConvLstmCell, ZeroStateZeroInputStaysZero) {
  tf::Rng rng(10);
  tf::ConvLSTM1DCell cell(1, 2, 3, rng);
  std::vector<tf::NamedParam> params;
  cell.collect("cell", params);
  zero_params(params);  // includes the forget-gate bias
  tf::Tape tape;
  tf::Tensor x = tf::Tensor::zeros({1, 4});
  tf::Tensor h0 = tf::Tensor::zeros({2, 4});
  tf::Tensor c0 = tf::Tensor::zeros({2, 4});
  auto [h, c] = cell.step(tape, x, h0, c0);
  for (double v : h.data()) EXPECT_DOUBLE_EQ(v, 0.0);
  for (double v : c.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(ConvLstmCell, MatchesScalarLoopOracle) {
  tf::Rng rng(11);
  tf::ConvLSTM1DCell cell(1, 2, 3, rng);
  tf::Rng data_rng(12);
  tf::Tensor x = random_tensor({1, 4}, data_rng);
  tf::Tensor h0 = random_tensor({2, 4}, data_rng);
  tf::Tensor c0 = random_tensor({2, 4}, data_rng);
  tf::Tape tape;
  auto [h, c] = cell.step(tape, x, h0, c0);
  auto [h_exp, c_exp] = convlstm_step_oracle(cell, to_mat(x), to_mat(h0), to_mat(c0));
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t t = 0; t < 4; ++t) {
      EXPECT_NEAR(h.at(ch, t), h_exp[ch][t], 1e-10);
      EXPECT_NEAR(c.at(ch, t), c_exp[ch][t], 1e-10);
    }
}

TEST(ConvLstmCell, StateStaysFiniteOverManyRandomSteps) {
  tf::Rng rng(13);
  tf::ConvLSTM1DCell cell(2, 2, 3, rng);
  tf::Rng data_rng(14);
  tf::Tensor h = tf::Tensor::zeros({2, 5});
  tf::Tensor c = tf::Tensor::zeros({2, 5});
  for (int step = 0; step < 1000; ++step) {
    tf::Tape tape;
    tape.set_recording(false);
    tf::Tensor x = random_tensor({2, 5}, data_rng, -2.0, 2.0);
    auto [h_t, c_t] = cell.step(tape, x, h, c);
    h = h_t;
    c = c_t;
    for (double v : h.data()) ASSERT_TRUE(std::isfinite(v));
    for (double v : c.data()) ASSERT_TRUE(std::isfinite(v));
    for (double v : h.data()) ASSERT_LT(std::fabs(v), 1.0);  // |h| = |o*tanh(c)| < 1
  }
}

TEST(ConvLstmCell, RejectsEvenKernel) {
  tf::Rng rng(15);
  EXPECT_THROW(tf::ConvLSTM1DCell(1, 2, 4, rng), tf::ConfigError);
}

TEST(ConvLstmStack, SingleTokenReducesToOneStepPerCell) {
  tf::Rng rng(16);
  tf::ConvLSTMStack stack(4, 2, 3, rng);
  tf::Rng data_rng(17);
  tf::Tensor x = random_tensor({1, 6}, data_rng);
  tf::Tape tape;
  tf::Tensor y = stack.forward(tape, x);
  ASSERT_EQ(y.shape(), (tf::Shape{1, 6}));

  // manual: one step through each cell from zero state, then projection
  tf::Tape manual;
  tf::Tensor layer_in = x;
  for (const auto& cell : stack.cells) {
    tf::Tensor h0 = tf::Tensor::zeros({cell.hidden_channels, 6});
    tf::Tensor c0 = tf::Tensor::zeros({cell.hidden_channels, 6});
    auto [h, c] = cell.step(manual, layer_in, h0, c0);
    layer_in = h;
  }
  tf::Tensor projected =
      manual.transpose(stack.projection.forward(manual, manual.transpose(layer_in)));
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_NEAR(y.data()[i], projected.data()[i], 1e-12);
  }
}

TEST(ConvLstmStack, CausalPrefixInvariance) {
  tf::Rng rng(18);
  tf::ConvLSTMStack stack(2, 2, 3, rng);
  tf::Rng data_rng(19);
  tf::Tensor x = random_tensor({3, 5}, data_rng);
  tf::Tensor doubled = tf::Tensor::zeros({6, 5});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      doubled.at(i, j) = x.at(i, j);
      doubled.at(i + 3, j) = x.at(i, j);
    }
  tf::Tape tape;
  tf::Tensor y = stack.forward(tape, x);
  tf::Tensor yd = stack.forward(tape, doubled);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_DOUBLE_EQ(yd.at(i, j), y.at(i, j));
    }
}

TEST(ConvLstmStack, MatchesUnrolledScalarOracle) {
  tf::Rng rng(20);
  tf::ConvLSTMStack stack(4, 2, 3, rng);
  tf::Rng data_rng(21);
  tf::Tensor x = random_tensor({3, 5}, data_rng);
  tf::Tape tape;
  tf::Tensor y = stack.forward(tape, x);

  const std::size_t d = 5;
  std::vector<Mat> h(stack.cells.size()), c(stack.cells.size());
  for (std::size_t l = 0; l < stack.cells.size(); ++l) {
    h[l] = Mat(stack.cells[l].hidden_channels, std::vector<double>(d, 0.0));
    c[l] = Mat(stack.cells[l].hidden_channels, std::vector<double>(d, 0.0));
  }
  for (std::size_t t = 0; t < 3; ++t) {
    Mat layer_in(1, std::vector<double>(d));
    for (std::size_t j = 0; j < d; ++j) layer_in[0][j] = x.at(t, j);
    for (std::size_t l = 0; l < stack.cells.size(); ++l) {
      auto [h_t, c_t] = convlstm_step_oracle(stack.cells[l], layer_in, h[l], c[l]);
      h[l] = h_t;
      c[l] = c_t;
      layer_in = h_t;
    }
    for (std::size_t j = 0; j < d; ++j) {
      double acc = stack.projection.bias.at(0);
      for (std::size_t ch = 0; ch < layer_in.size(); ++ch) {
        acc += layer_in[ch][j] * stack.projection.weight.at(ch, 0);
      }
      EXPECT_NEAR(y.at(t, j), acc, 1e-10);
    }
  }
}

TEST(TransformerBlockLayer, PreservesShape) {
  tf::Rng rng(22);
  tf::TransformerBlock block(8, 2, 2, 2, 3, rng);
  tf::Rng data_rng(23);
  for (std::size_t seq : {1u, 10u, 100u}) {
    tf::Tape tape;
    tape.set_recording(false);
    tf::Tensor x = random_tensor({seq, 8}, data_rng);
    tf::Tensor y = block.forward(tape, x);
    EXPECT_EQ(y.shape(), (tf::Shape{seq, 8}));
  }
}

TEST(TransformerBlockLayer, ZeroedSubLayersReduceToDoubleRowNormalization) {
  tf::Rng rng(24);
  tf::TransformerBlock block(4, 2, 2, 2, 3, rng);
  std::vector<tf::NamedParam> params;
  block.attention.collect("attn", params);
  block.convlstm.collect("convlstm", params);
  zero_params(params);  // layer norms keep gamma=1, beta=0
  tf::Rng data_rng(25);
  tf::Tensor x = random_tensor({3, 4}, data_rng, -2.0, 2.0);
  tf::Tape tape;
  tf::Tensor y = block.forward(tape, x);

  auto row_norm = [](std::vector<double> row) {
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (double& v : row) v = (v - mean) * inv;
    return row;
  };
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> row(4);
    for (std::size_t j = 0; j < 4; ++j) row[j] = x.at(i, j);
    const auto expected = row_norm(row_norm(row));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y.at(i, j), expected[j], 1e-12);
  }
}

TEST(TransformerBlockLayer, GradientCheck) {
  tf::Rng rng(26);
  tf::TransformerBlock block(8, 2, 2, 2, 3, rng);
  tf::Rng data_rng(27);
  tf::Tensor x = random_tensor({4, 8}, data_rng);
  std::vector<tf::NamedParam> named;
  block.collect("block", named);
  std::vector<tf::Tensor> params;
  params.push_back(x);
  for (auto& p : named) params.push_back(p.tensor);
  auto f = [&](tf::Tape& tape) { return tape.mean(block.forward(tape, x)); };
  auto report = tf::grad_check(f, params, 1e-6, 1e-4);
  EXPECT_TRUE(report.ok()) << "max rel error " << report.max_rel_error << " over "
                           << report.checked << " elements";
}

TEST(LayerGradients, EveryLayerPassesGradCheck) {
  tf::Rng rng(28);
  tf::Rng data_rng(29);
  {
    tf::DenseLayer dense(3, 5, rng);
    tf::Tensor x = random_tensor({2, 3}, data_rng);
    auto f = [&](tf::Tape& t) { return t.mean(dense.forward(t, x)); };
    auto report = tf::grad_check(f, {x, dense.weight, dense.bias}, 1e-6, 1e-4);
    EXPECT_TRUE(report.ok()) << report.max_rel_error;
  }
  {
    tf::LayerNorm ln(6);
    tf::Tensor x = random_tensor({3, 6}, data_rng);
    auto f = [&](tf::Tape& t) { return t.mean(ln.forward(t, x)); };
    auto report = tf::grad_check(f, {x, ln.gamma, ln.beta}, 1e-6, 1e-4);
    EXPECT_TRUE(report.ok()) << report.max_rel_error;
  }
  {
    tf::MultiHeadAttention mha(8, 2, rng);
    tf::Tensor x = random_tensor({3, 8}, data_rng);
    std::vector<tf::NamedParam> named;
    mha.collect("mha", named);
    std::vector<tf::Tensor> params{x};
    for (auto& p : named) params.push_back(p.tensor);
    auto f = [&](tf::Tape& t) { return t.mean(mha.forward(t, x)); };
    auto report = tf::grad_check(f, params, 1e-6, 1e-4);
    EXPECT_TRUE(report.ok()) << report.max_rel_error;
  }
  {
    tf::ConvLSTM1DCell cell(1, 2, 3, rng);
    tf::Tensor x = random_tensor({1, 4}, data_rng);
    tf::Tensor h0 = random_tensor({2, 4}, data_rng);
    tf::Tensor c0 = random_tensor({2, 4}, data_rng);
    std::vector<tf::NamedParam> named;
    cell.collect("cell", named);
    std::vector<tf::Tensor> params{x, h0, c0};
    for (auto& p : named) params.push_back(p.tensor);
    auto f = [&](tf::Tape& t) {
      auto [h, c] = cell.step(t, x, h0, c0);
      return t.add(t.mean(h), t.mean(c));
    };
    auto report = tf::grad_check(f, params, 1e-6, 1e-4);
    EXPECT_TRUE(report.ok()) << report.max_rel_error;
  }
}

TEST(ParamCount, ClosedForms) {
  tf::Rng rng(30);
  EXPECT_EQ(tf::DenseLayer(2, 3, rng).param_count(), 9u);
  EXPECT_EQ(tf::ConvLSTM1DCell(1, 16, 3, rng).param_count(), 3328u);
  EXPECT_EQ(tf::MultiHeadAttention(64, 4, rng).param_count(), 16640u);
  EXPECT_EQ(tf::LayerNorm(64).param_count(), 128u);

  // cell with all sizes 1: 4 * (1*1*k + 1*1*k + 1) with k=3
  EXPECT_EQ(tf::ConvLSTM1DCell(1, 1, 3, rng).param_count(), 4u * (3u + 3u + 1u));

  // block total equals the sum of its constituents
  tf::TransformerBlock block(64, 4, 4, 16, 3, rng);
  const std::size_t cells = 3328 + 3 * (4 * (16 * 16 * 3 + 16 * 16 * 3 + 16));
  const std::size_t expected = 16640 + 2 * 128 + cells + (16 + 1);
  EXPECT_EQ(block.param_count(), expected);

  std::vector<tf::NamedParam> named;
  block.collect("block", named);
  std::size_t total = 0;
  for (const auto& p : named) total += p.tensor.size();
  EXPECT_EQ(total, expected);
}
