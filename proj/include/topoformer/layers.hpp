#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "topoformer/rng.hpp"
#include "topoformer/tape.hpp"
#include "topoformer/tensor.hpp"

namespace topoformer {

struct NamedParam {
  std::string name;
  Tensor tensor;  // aliases the layer's storage
};

/// Uniform init in [-bound, bound].
inline Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

/// Fully connected layer, weight [in, out] with bias [out].
/// Weights uniform in +/- 1/sqrt(in), bias zero.
struct DenseLayer {
  Tensor weight;
  Tensor bias;

  DenseLayer(std::size_t in, std::size_t out, Rng& rng)
      : weight(uniform_init({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
        bias(Tensor::zeros({out}, true)) {}

  Tensor forward(Tape& tape, const Tensor& x) const {
    return tape.add_rowwise(tape.matmul(x, weight), bias);
  }

  std::size_t param_count() const { return weight.size() + bias.size(); }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double epsilon = 1e-5;

  explicit LayerNorm(std::size_t d)
      : gamma(Tensor::full({d}, 1.0, true)), beta(Tensor::zeros({d}, true)) {}

  Tensor forward(Tape& tape, const Tensor& x) const {
    return tape.layer_norm(x, gamma, beta, epsilon);
  }

  std::size_t param_count() const { return gamma.size() + beta.size(); }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

/// Scaled dot-product multi-head self-attention over [seq, d_model].
struct MultiHeadAttention {
  std::size_t num_heads;
  std::size_t d_model;
  DenseLayer q, k, v, o;

  MultiHeadAttention(std::size_t d_model_, std::size_t num_heads_, Rng& rng)
      : num_heads(num_heads_),
        d_model(d_model_),
        q(make_proj(d_model_, num_heads_, rng)),
        k(d_model_, d_model_, rng),
        v(d_model_, d_model_, rng),
        o(d_model_, d_model_, rng) {}

  struct Detailed {
    Tensor output;
    std::vector<Tensor> head_weights;  // one [seq, seq] row-stochastic matrix per head
  };

  Detailed forward_detailed(Tape& tape, const Tensor& x) const {
    const std::size_t d_k = d_model / num_heads;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(d_k));
    Tensor qa = q.forward(tape, x);
    Tensor ka = k.forward(tape, x);
    Tensor va = v.forward(tape, x);
    std::vector<Tensor> heads;
    std::vector<Tensor> weights;
    heads.reserve(num_heads);
    for (std::size_t h = 0; h < num_heads; ++h) {
      Tensor qh = tape.slice(qa, 1, h * d_k, d_k);
      Tensor kh = tape.slice(ka, 1, h * d_k, d_k);
      Tensor vh = tape.slice(va, 1, h * d_k, d_k);
      Tensor scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_dk);
      Tensor w = tape.softmax(scores, 1);
      weights.push_back(w);
      heads.push_back(tape.matmul(w, vh));
    }
    Tensor merged = num_heads == 1 ? heads[0] : tape.concat(heads, 1);
    return {o.forward(tape, merged), std::move(weights)};
  }

  Tensor forward(Tape& tape, const Tensor& x) const { return forward_detailed(tape, x).output; }

  std::size_t param_count() const {
    return q.param_count() + k.param_count() + v.param_count() + o.param_count();
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    q.collect(prefix + ".q", out);
    k.collect(prefix + ".k", out);
    v.collect(prefix + ".v", out);
    o.collect(prefix + ".o", out);
  }

 private:
  static DenseLayer make_proj(std::size_t d_model, std::size_t num_heads, Rng& rng) {
    if (num_heads == 0 || d_model % num_heads != 0) {
      throw ConfigError("attention: d_model " + std::to_string(d_model) +
                        " not divisible by num_heads " + std::to_string(num_heads));
    }
    return DenseLayer(d_model, d_model, rng);
  }
};

/// One ConvLSTM cell over 1-D spatial maps: states are [H, L], inputs
/// [C_in, L], all gate transforms are same-padded 1-D convolutions.
struct ConvLSTM1DCell {
  std::size_t in_channels;
  std::size_t hidden_channels;
  std::size_t kernel;
  Tensor w_xi, w_xf, w_xo, w_xg;  // [H, C_in, k]
  Tensor w_hi, w_hf, w_ho, w_hg;  // [H, H, k]
  Tensor b_i, b_f, b_o, b_g;      // [H]

  ConvLSTM1DCell(std::size_t in_ch, std::size_t hidden, std::size_t k, Rng& rng)
      : in_channels(in_ch), hidden_channels(hidden), kernel(check_kernel(k)) {
    const double bx = 1.0 / std::sqrt(static_cast<double>(in_ch * k));
    const double bh = 1.0 / std::sqrt(static_cast<double>(hidden * k));
    w_xi = uniform_init({hidden, in_ch, k}, bx, rng);
    w_xf = uniform_init({hidden, in_ch, k}, bx, rng);
    w_xo = uniform_init({hidden, in_ch, k}, bx, rng);
    w_xg = uniform_init({hidden, in_ch, k}, bx, rng);
    w_hi = uniform_init({hidden, hidden, k}, bh, rng);
    w_hf = uniform_init({hidden, hidden, k}, bh, rng);
    w_ho = uniform_init({hidden, hidden, k}, bh, rng);
    w_hg = uniform_init({hidden, hidden, k}, bh, rng);
    b_i = Tensor::zeros({hidden}, true);
    b_f = Tensor::full({hidden}, 1.0, true);  // keeps early recurrence from forgetting
    b_o = Tensor::zeros({hidden}, true);
    b_g = Tensor::zeros({hidden}, true);
  }

  /// Gate kernels concatenated along the output-channel axis into single
  /// [4H, ., k] tensors so one recurrence step costs two convolutions.
  /// Built once per forward episode; gradients flow back through the
  /// concat to the per-gate parameters.
  struct Packed {
    Tensor w_x;  // [4H, C_in, k]
    Tensor w_h;  // [4H, H, k]
    Tensor bias;  // [4H]
  };

  Packed pack(Tape& tape) const {
    return {tape.concat({w_xi, w_xf, w_xo, w_xg}, 0), tape.concat({w_hi, w_hf, w_ho, w_hg}, 0),
            tape.concat({b_i, b_f, b_o, b_g}, 0)};
  }

  /// i = sig(Wxi*x + Whi*h + bi), f = sig(...), o = sig(...), g = tanh(...)
  /// c = f.c_prev + i.g, h = o.tanh(c)
  std::pair<Tensor, Tensor> step_packed(Tape& tape, const Packed& packed, const Tensor& x_t,
                                        const Tensor& h_prev, const Tensor& c_prev) const {
    Tensor pre =
        tape.add(tape.conv1d(x_t, packed.w_x, packed.bias), tape.conv1d(h_prev, packed.w_h));
    return tape.lstm_pointwise(pre, c_prev);
  }

  std::pair<Tensor, Tensor> step(Tape& tape, const Tensor& x_t, const Tensor& h_prev,
                                 const Tensor& c_prev) const {
    return step_packed(tape, pack(tape), x_t, h_prev, c_prev);
  }

  std::size_t param_count() const {
    return 4 * (hidden_channels * in_channels * kernel +
                hidden_channels * hidden_channels * kernel + hidden_channels);
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".w_xi", w_xi});
    out.push_back({prefix + ".w_xf", w_xf});
    out.push_back({prefix + ".w_xo", w_xo});
    out.push_back({prefix + ".w_xg", w_xg});
    out.push_back({prefix + ".w_hi", w_hi});
    out.push_back({prefix + ".w_hf", w_hf});
    out.push_back({prefix + ".w_ho", w_ho});
    out.push_back({prefix + ".w_hg", w_hg});
    out.push_back({prefix + ".b_i", b_i});
    out.push_back({prefix + ".b_f", b_f});
    out.push_back({prefix + ".b_o", b_o});
    out.push_back({prefix + ".b_g", b_g});
  }

 private:
  static std::size_t check_kernel(std::size_t k) {
    if (k % 2 == 0) {
      throw ConfigError("convlstm: kernel width must be odd, got " + std::to_string(k));
    }
    return k;
  }
};

/// Stack of ConvLSTM cells applied along the token axis of [seq, d_model]:
/// the sequence position is the recurrence time axis and each token's
/// embedding is the 1-D spatial axis, entering the first cell as a single
/// channel. The final hidden map is projected back to one channel per
/// embedding position so the block shape is preserved.
struct ConvLSTMStack {
  std::vector<ConvLSTM1DCell> cells;
  DenseLayer projection;  // hidden channels -> 1, shared across positions

  ConvLSTMStack(std::size_t num_cells, std::size_t hidden, std::size_t kernel, Rng& rng)
      : cells(make_cells(num_cells, hidden, kernel, rng)), projection(hidden, 1, rng) {}

  Tensor forward(Tape& tape, const Tensor& x) const {
    const std::size_t seq = x.dim(0);
    const std::size_t d = x.dim(1);
    std::vector<ConvLSTM1DCell::Packed> packed;
    packed.reserve(cells.size());
    std::vector<Tensor> h(cells.size()), c(cells.size());
    for (std::size_t l = 0; l < cells.size(); ++l) {
      packed.push_back(cells[l].pack(tape));
      h[l] = Tensor::zeros({cells[l].hidden_channels, d});
      c[l] = Tensor::zeros({cells[l].hidden_channels, d});
    }
    std::vector<Tensor> rows;
    rows.reserve(seq);
    for (std::size_t t = 0; t < seq; ++t) {
      Tensor layer_in = tape.slice(x, 0, t, 1);  // [1, d]: one input channel over d positions
      for (std::size_t l = 0; l < cells.size(); ++l) {
        auto [h_t, c_t] = cells[l].step_packed(tape, packed[l], layer_in, h[l], c[l]);
        h[l] = h_t;
        c[l] = c_t;
        layer_in = h_t;
      }
      // [H, d] -> [d, H] -> dense -> [d, 1] -> [1, d]
      Tensor projected = projection.forward(tape, tape.transpose(layer_in));
      rows.push_back(tape.transpose(projected));
    }
    return seq == 1 ? rows[0] : tape.concat(rows, 0);
  }

  std::size_t param_count() const {
    std::size_t n = projection.param_count();
    for (const auto& c : cells) n += c.param_count();
    return n;
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    for (std::size_t l = 0; l < cells.size(); ++l) {
      cells[l].collect(prefix + ".cell" + std::to_string(l), out);
    }
    projection.collect(prefix + ".proj", out);
  }

 private:
  static std::vector<ConvLSTM1DCell> make_cells(std::size_t num_cells, std::size_t hidden,
                                                std::size_t kernel, Rng& rng) {
    if (num_cells == 0) throw ConfigError("convlstm stack needs at least one cell");
    std::vector<ConvLSTM1DCell> cells;
    cells.reserve(num_cells);
    for (std::size_t l = 0; l < num_cells; ++l) {
      cells.emplace_back(l == 0 ? 1 : hidden, hidden, kernel, rng);
    }
    return cells;
  }
};

/// Attention -> residual -> norm -> ConvLSTM stack -> residual -> norm.
/// The ConvLSTM stack sits where the position-wise feed-forward sub-layer
/// would in a conventional encoder block.
struct TransformerBlock {
  MultiHeadAttention attention;
  LayerNorm norm_1;
  LayerNorm norm_2;
  ConvLSTMStack convlstm;

  TransformerBlock(std::size_t d_model, std::size_t num_heads, std::size_t convlstm_cells,
                   std::size_t hidden, std::size_t kernel, Rng& rng)
      : attention(d_model, num_heads, rng),
        norm_1(d_model),
        norm_2(d_model),
        convlstm(convlstm_cells, hidden, kernel, rng) {}

  Tensor forward(Tape& tape, const Tensor& x) const {
    Tensor y1 = norm_1.forward(tape, tape.add(x, attention.forward(tape, x)));
    Tensor y2 = norm_2.forward(tape, tape.add(y1, convlstm.forward(tape, y1)));
    return y2;
  }

  std::size_t param_count() const {
    return attention.param_count() + norm_1.param_count() + norm_2.param_count() +
           convlstm.param_count();
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    attention.collect(prefix + ".attn", out);
    norm_1.collect(prefix + ".norm1", out);
    norm_2.collect(prefix + ".norm2", out);
    convlstm.collect(prefix + ".convlstm", out);
  }
};

}  // namespace topoformer
