#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "topoformer/layers.hpp"
#include "topoformer/rng.hpp"
#include "topoformer/tape.hpp"
#include "topoformer/tensor.hpp"

namespace topoformer {

using nlohmann::json;

constexpr std::size_t kInputLen = 180;   // 80 elevations + 100 chainages
constexpr std::size_t kSeqLen = 100;     // tokens per profile
constexpr std::size_t kKnownLen = 80;    // tokens with observed elevation
constexpr std::size_t kOutputLen = 20;   // predicted elevations
constexpr std::size_t kTokenFeatures = 3;

enum class Variant { topoformer, lstm, bilstm, convlstm, cnn1d };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::topoformer: return "topoformer";
    case Variant::lstm: return "lstm";
    case Variant::bilstm: return "bilstm";
    case Variant::convlstm: return "convlstm";
    case Variant::cnn1d: return "cnn1d";
  }
  return "unknown";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "topoformer") return Variant::topoformer;
  if (s == "lstm") return Variant::lstm;
  if (s == "bilstm") return Variant::bilstm;
  if (s == "convlstm") return Variant::convlstm;
  if (s == "cnn1d") return Variant::cnn1d;
  throw ConfigError("unknown model variant '" + s +
                    "' (expected topoformer|lstm|bilstm|convlstm|cnn1d)");
}

/// Turns one 180-feature input row into the [100, 3] token sequence:
/// token t = (chainage_t, elevation_t or 0, known flag).
inline Tensor tokenize_input(const std::vector<double>& x) {
  if (x.size() != kInputLen) {
    throw DimensionError("tokenize_input: expected " + std::to_string(kInputLen) +
                         " features, got " + std::to_string(x.size()));
  }
  Tensor tokens = Tensor::zeros({kSeqLen, kTokenFeatures});
  for (std::size_t t = 0; t < kSeqLen; ++t) {
    tokens.at(t, 0) = x[kKnownLen + t];
    tokens.at(t, 1) = t < kKnownLen ? x[t] : 0.0;
    tokens.at(t, 2) = t < kKnownLen ? 1.0 : 0.0;
  }
  return tokens;
}

struct TopoFormerConfig {
  std::size_t d_model = 64;
  std::size_t num_heads = 4;
  std::size_t num_blocks = 6;
  std::size_t convlstm_layers_per_block = 4;
  std::size_t hidden_channels = 16;
  std::size_t kernel = 3;
  std::size_t mlp_hidden_1 = 76;
  std::size_t mlp_hidden_2 = 128;

  void validate() const {
    if (num_blocks < 1) throw ConfigError("topoformer config: num_blocks must be >= 1");
    if (num_heads == 0 || d_model % num_heads != 0) {
      throw ConfigError("topoformer config: d_model " + std::to_string(d_model) +
                        " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (convlstm_layers_per_block < 1) {
      throw ConfigError("topoformer config: convlstm_layers_per_block must be >= 1");
    }
    if (kernel % 2 == 0) {
      throw ConfigError("topoformer config: kernel must be odd, got " + std::to_string(kernel));
    }
    if (hidden_channels == 0 || mlp_hidden_1 == 0 || mlp_hidden_2 == 0) {
      throw ConfigError("topoformer config: hidden sizes must be positive");
    }
  }

  json to_json() const {
    return json{{"d_model", d_model},
                {"num_heads", num_heads},
                {"num_blocks", num_blocks},
                {"convlstm_layers_per_block", convlstm_layers_per_block},
                {"hidden_channels", hidden_channels},
                {"kernel", kernel},
                {"mlp_hidden_1", mlp_hidden_1},
                {"mlp_hidden_2", mlp_hidden_2}};
  }

  static TopoFormerConfig from_json(const json& j) {
    TopoFormerConfig c;
    c.d_model = j.at("d_model").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.num_blocks = j.at("num_blocks").get<std::size_t>();
    c.convlstm_layers_per_block = j.at("convlstm_layers_per_block").get<std::size_t>();
    c.hidden_channels = j.at("hidden_channels").get<std::size_t>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.mlp_hidden_1 = j.at("mlp_hidden_1").get<std::size_t>();
    c.mlp_hidden_2 = j.at("mlp_hidden_2").get<std::size_t>();
    return c;
  }
};

struct BaselineConfig {
  std::size_t lstm_hidden = 256;
  std::size_t bilstm_hidden = 128;
  std::size_t convlstm_hidden = 96;
  std::size_t convlstm_cells = 4;
  std::size_t convlstm_embed = 64;
  std::size_t cnn_channels_1 = 32;
  std::size_t cnn_channels_2 = 64;
  std::size_t cnn_kernel = 5;
  std::size_t cnn_dense = 128;

  void validate() const {
    if (lstm_hidden == 0 || bilstm_hidden == 0 || convlstm_hidden == 0 || convlstm_cells == 0 ||
        convlstm_embed == 0 || cnn_channels_1 == 0 || cnn_channels_2 == 0 || cnn_dense == 0) {
      throw ConfigError("baseline config: hidden sizes must be positive");
    }
    if (cnn_kernel % 2 == 0) {
      throw ConfigError("baseline config: cnn_kernel must be odd, got " +
                        std::to_string(cnn_kernel));
    }
  }

  json to_json() const {
    return json{{"lstm_hidden", lstm_hidden},
                {"bilstm_hidden", bilstm_hidden},
                {"convlstm_hidden", convlstm_hidden},
                {"convlstm_cells", convlstm_cells},
                {"convlstm_embed", convlstm_embed},
                {"cnn_channels_1", cnn_channels_1},
                {"cnn_channels_2", cnn_channels_2},
                {"cnn_kernel", cnn_kernel},
                {"cnn_dense", cnn_dense}};
  }

  static BaselineConfig from_json(const json& j) {
    BaselineConfig c;
    c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
    c.bilstm_hidden = j.at("bilstm_hidden").get<std::size_t>();
    c.convlstm_hidden = j.at("convlstm_hidden").get<std::size_t>();
    c.convlstm_cells = j.at("convlstm_cells").get<std::size_t>();
    c.convlstm_embed = j.at("convlstm_embed").get<std::size_t>();
    c.cnn_channels_1 = j.at("cnn_channels_1").get<std::size_t>();
    c.cnn_channels_2 = j.at("cnn_channels_2").get<std::size_t>();
    c.cnn_kernel = j.at("cnn_kernel").get<std::size_t>();
    c.cnn_dense = j.at("cnn_dense").get<std::size_t>();
    return c;
  }
};

/// Shared sequence-regression contract: [B, 180] in, [B, 20] out.
class Model {
 public:
  virtual ~Model() = default;
  virtual Variant variant() const = 0;
  virtual Tensor forward(Tape& tape, const Tensor& batch) const = 0;
  virtual std::vector<NamedParam> parameters() const = 0;
  virtual json config_json() const = 0;

  std::string name() const { return variant_name(variant()); }
};

inline std::size_t count_params(const Model& model) {
  std::size_t n = 0;
  for (const auto& p : model.parameters()) n += p.tensor.size();
  return n;
}

inline std::vector<Tensor> parameter_tensors(const Model& model) {
  std::vector<Tensor> out;
  for (auto& p : model.parameters()) out.push_back(p.tensor);
  return out;
}

namespace detail {

inline void check_batch(const Tensor& batch) {
  if (batch.rank() != 2 || batch.dim(1) != kInputLen) {
    throw DimensionError("model forward: expected batch of shape [B," +
                         std::to_string(kInputLen) + "], got " + shape_str(batch.shape()));
  }
}

inline std::vector<double> batch_row(const Tensor& batch, std::size_t b) {
  const double* p = batch.data().data() + b * kInputLen;
  return std::vector<double>(p, p + kInputLen);
}

/// Dense LSTM cell over row vectors; gate layout [i | f | o | g].
struct LstmCell {
  std::size_t input_size;
  std::size_t hidden;
  Tensor w_x;  // [in, 4H]
  Tensor w_h;  // [H, 4H]
  Tensor b;    // [4H]

  LstmCell(std::size_t in, std::size_t hidden_, Rng& rng)
      : input_size(in),
        hidden(hidden_),
        w_x(uniform_init({in, 4 * hidden_}, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
        w_h(uniform_init({hidden_, 4 * hidden_}, 1.0 / std::sqrt(static_cast<double>(hidden_)),
                         rng)),
        b(Tensor::zeros({4 * hidden_}, true)) {
    for (std::size_t i = hidden_; i < 2 * hidden_; ++i) b.at(i) = 1.0;  // forget gate bias
  }

  std::pair<Tensor, Tensor> step(Tape& tape, const Tensor& x, const Tensor& h,
                                 const Tensor& c) const {
    Tensor gates = tape.add_rowwise(tape.add(tape.matmul(x, w_x), tape.matmul(h, w_h)), b);
    return tape.lstm_pointwise(gates, c);
  }

  std::size_t param_count() const { return w_x.size() + w_h.size() + b.size(); }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".w_x", w_x});
    out.push_back({prefix + ".w_h", w_h});
    out.push_back({prefix + ".b", b});
  }
};

}  // namespace detail

class TopoFormerModel final : public Model {
 public:
  TopoFormerModel(const TopoFormerConfig& config, std::uint64_t seed)
      : config_(validated(config)), rng_(seed), embedding_(kTokenFeatures, config.d_model, rng_) {
    blocks_.reserve(config.num_blocks);
    for (std::size_t i = 0; i < config.num_blocks; ++i) {
      blocks_.emplace_back(config.d_model, config.num_heads, config.convlstm_layers_per_block,
                           config.hidden_channels, config.kernel, rng_);
    }
    mlp_1_ = std::make_unique<DenseLayer>(kSeqLen * config.d_model, config.mlp_hidden_1, rng_);
    mlp_2_ = std::make_unique<DenseLayer>(config.mlp_hidden_1, config.mlp_hidden_2, rng_);
    head_ = std::make_unique<DenseLayer>(config.mlp_hidden_2, kOutputLen, rng_);
  }

  Variant variant() const override { return Variant::topoformer; }

  Tensor forward(Tape& tape, const Tensor& batch) const override {
    detail::check_batch(batch);
    const std::size_t b_count = batch.dim(0);
    std::vector<Tensor> rows;
    rows.reserve(b_count);
    for (std::size_t b = 0; b < b_count; ++b) {
      Tensor x = embedding_.forward(tape, tokenize_input(detail::batch_row(batch, b)));
      for (const auto& block : blocks_) x = block.forward(tape, x);
      Tensor flat = tape.reshape(x, {1, kSeqLen * config_.d_model});
      Tensor hidden = mlp_2_->forward(tape, tape.relu(mlp_1_->forward(tape, flat)));
      rows.push_back(head_->forward(tape, hidden));
    }
    return b_count == 1 ? rows[0] : tape.concat(rows, 0);
  }

  std::vector<NamedParam> parameters() const override {
    std::vector<NamedParam> out;
    embedding_.collect("embedding", out);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].collect("blocks." + std::to_string(i), out);
    }
    mlp_1_->collect("mlp1", out);
    mlp_2_->collect("mlp2", out);
    head_->collect("head", out);
    return out;
  }

  json config_json() const override { return config_.to_json(); }

  const TopoFormerConfig& config() const { return config_; }
  const std::vector<TransformerBlock>& blocks() const { return blocks_; }

 private:
  static const TopoFormerConfig& validated(const TopoFormerConfig& c) {
    c.validate();
    return c;
  }

  TopoFormerConfig config_;
  Rng rng_;
  DenseLayer embedding_;
  std::vector<TransformerBlock> blocks_;
  std::unique_ptr<DenseLayer> mlp_1_;
  std::unique_ptr<DenseLayer> mlp_2_;
  std::unique_ptr<DenseLayer> head_;
};

class LstmRegressor final : public Model {
 public:
  LstmRegressor(const BaselineConfig& config, std::uint64_t seed)
      : config_(config), rng_(seed), cell_(kTokenFeatures, config.lstm_hidden, rng_),
        head_(config.lstm_hidden, kOutputLen, rng_) {}

  Variant variant() const override { return Variant::lstm; }

  Tensor forward(Tape& tape, const Tensor& batch) const override {
    detail::check_batch(batch);
    std::vector<Tensor> rows;
    rows.reserve(batch.dim(0));
    for (std::size_t b = 0; b < batch.dim(0); ++b) {
      Tensor tokens = tokenize_input(detail::batch_row(batch, b));
      Tensor h = Tensor::zeros({1, cell_.hidden});
      Tensor c = Tensor::zeros({1, cell_.hidden});
      for (std::size_t t = 0; t < kSeqLen; ++t) {
        Tensor x_t = tape.slice(tokens, 0, t, 1);
        auto [h_t, c_t] = cell_.step(tape, x_t, h, c);
        h = h_t;
        c = c_t;
      }
      rows.push_back(head_.forward(tape, h));
    }
    return rows.size() == 1 ? rows[0] : tape.concat(rows, 0);
  }

  std::vector<NamedParam> parameters() const override {
    std::vector<NamedParam> out;
    cell_.collect("lstm", out);
    head_.collect("head", out);
    return out;
  }

  json config_json() const override { return config_.to_json(); }

 private:
  BaselineConfig config_;
  Rng rng_;
  detail::LstmCell cell_;
  DenseLayer head_;
};

class BiLstmRegressor final : public Model {
 public:
  BiLstmRegressor(const BaselineConfig& config, std::uint64_t seed)
      : config_(config), rng_(seed), fwd_(kTokenFeatures, config.bilstm_hidden, rng_),
        bwd_(kTokenFeatures, config.bilstm_hidden, rng_),
        head_(2 * config.bilstm_hidden, kOutputLen, rng_) {}

  Variant variant() const override { return Variant::bilstm; }

  Tensor forward(Tape& tape, const Tensor& batch) const override {
    detail::check_batch(batch);
    std::vector<Tensor> rows;
    rows.reserve(batch.dim(0));
    for (std::size_t b = 0; b < batch.dim(0); ++b) {
      Tensor tokens = tokenize_input(detail::batch_row(batch, b));
      Tensor hf = Tensor::zeros({1, fwd_.hidden});
      Tensor cf = Tensor::zeros({1, fwd_.hidden});
      Tensor hb = Tensor::zeros({1, bwd_.hidden});
      Tensor cb = Tensor::zeros({1, bwd_.hidden});
      for (std::size_t t = 0; t < kSeqLen; ++t) {
        Tensor x_f = tape.slice(tokens, 0, t, 1);
        auto [hf_t, cf_t] = fwd_.step(tape, x_f, hf, cf);
        hf = hf_t;
        cf = cf_t;
        Tensor x_b = tape.slice(tokens, 0, kSeqLen - 1 - t, 1);
        auto [hb_t, cb_t] = bwd_.step(tape, x_b, hb, cb);
        hb = hb_t;
        cb = cb_t;
      }
      rows.push_back(head_.forward(tape, tape.concat({hf, hb}, 1)));
    }
    return rows.size() == 1 ? rows[0] : tape.concat(rows, 0);
  }

  std::vector<NamedParam> parameters() const override {
    std::vector<NamedParam> out;
    fwd_.collect("fwd", out);
    bwd_.collect("bwd", out);
    head_.collect("head", out);
    return out;
  }

  json config_json() const override { return config_.to_json(); }

 private:
  BaselineConfig config_;
  Rng rng_;
  detail::LstmCell fwd_;
  detail::LstmCell bwd_;
  DenseLayer head_;
};

class ConvLstmRegressor final : public Model {
 public:
  ConvLstmRegressor(const BaselineConfig& config, std::uint64_t seed)
      : config_(config), rng_(seed), embedding_(kTokenFeatures, config.convlstm_embed, rng_),
        stack_(config.convlstm_cells, config.convlstm_hidden, 3, rng_),
        head_(kSeqLen * config.convlstm_embed, kOutputLen, rng_) {}

  Variant variant() const override { return Variant::convlstm; }

  Tensor forward(Tape& tape, const Tensor& batch) const override {
    detail::check_batch(batch);
    std::vector<Tensor> rows;
    rows.reserve(batch.dim(0));
    for (std::size_t b = 0; b < batch.dim(0); ++b) {
      Tensor x = embedding_.forward(tape, tokenize_input(detail::batch_row(batch, b)));
      x = stack_.forward(tape, x);
      rows.push_back(head_.forward(tape, tape.reshape(x, {1, kSeqLen * config_.convlstm_embed})));
    }
    return rows.size() == 1 ? rows[0] : tape.concat(rows, 0);
  }

  std::vector<NamedParam> parameters() const override {
    std::vector<NamedParam> out;
    embedding_.collect("embedding", out);
    stack_.collect("convlstm", out);
    head_.collect("head", out);
    return out;
  }

  json config_json() const override { return config_.to_json(); }

 private:
  BaselineConfig config_;
  Rng rng_;
  DenseLayer embedding_;
  ConvLSTMStack stack_;
  DenseLayer head_;
};

class Conv1DRegressor final : public Model {
 public:
  Conv1DRegressor(const BaselineConfig& config, std::uint64_t seed)
      : config_(config), rng_(seed) {
    const std::size_t k = config.cnn_kernel;
    const double b1 = 1.0 / std::sqrt(static_cast<double>(kTokenFeatures * k));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(config.cnn_channels_1 * k));
    kernel_1_ = uniform_init({config.cnn_channels_1, kTokenFeatures, k}, b1, rng_);
    bias_1_ = Tensor::zeros({config.cnn_channels_1}, true);
    kernel_2_ = uniform_init({config.cnn_channels_2, config.cnn_channels_1, k}, b2, rng_);
    bias_2_ = Tensor::zeros({config.cnn_channels_2}, true);
    dense_ = std::make_unique<DenseLayer>(config.cnn_channels_2 * (kSeqLen / 4),
                                          config.cnn_dense, rng_);
    head_ = std::make_unique<DenseLayer>(config.cnn_dense, kOutputLen, rng_);
  }

  Variant variant() const override { return Variant::cnn1d; }

  Tensor forward(Tape& tape, const Tensor& batch) const override {
    detail::check_batch(batch);
    std::vector<Tensor> rows;
    rows.reserve(batch.dim(0));
    for (std::size_t b = 0; b < batch.dim(0); ++b) {
      Tensor x = tape.transpose(tokenize_input(detail::batch_row(batch, b)));  // [3, 100]
      x = tape.avg_pool1d(tape.relu(tape.conv1d(x, kernel_1_, bias_1_)), 2);
      x = tape.avg_pool1d(tape.relu(tape.conv1d(x, kernel_2_, bias_2_)), 2);
      Tensor flat = tape.reshape(x, {1, config_.cnn_channels_2 * (kSeqLen / 4)});
      rows.push_back(head_->forward(tape, tape.relu(dense_->forward(tape, flat))));
    }
    return rows.size() == 1 ? rows[0] : tape.concat(rows, 0);
  }

  std::vector<NamedParam> parameters() const override {
    std::vector<NamedParam> out;
    out.push_back({"conv1.kernel", kernel_1_});
    out.push_back({"conv1.bias", bias_1_});
    out.push_back({"conv2.kernel", kernel_2_});
    out.push_back({"conv2.bias", bias_2_});
    dense_->collect("dense", out);
    head_->collect("head", out);
    return out;
  }

  json config_json() const override { return config_.to_json(); }

 private:
  BaselineConfig config_;
  Rng rng_;
  Tensor kernel_1_, bias_1_;
  Tensor kernel_2_, bias_2_;
  std::unique_ptr<DenseLayer> dense_;
  std::unique_ptr<DenseLayer> head_;
};

inline std::unique_ptr<Model> build_topoformer(const TopoFormerConfig& config,
                                               std::uint64_t seed) {
  return std::make_unique<TopoFormerModel>(config, seed);
}

inline std::unique_ptr<Model> build_baseline(Variant variant, const BaselineConfig& config,
                                             std::uint64_t seed) {
  config.validate();
  switch (variant) {
    case Variant::lstm: return std::make_unique<LstmRegressor>(config, seed);
    case Variant::bilstm: return std::make_unique<BiLstmRegressor>(config, seed);
    case Variant::convlstm: return std::make_unique<ConvLstmRegressor>(config, seed);
    case Variant::cnn1d: return std::make_unique<Conv1DRegressor>(config, seed);
    case Variant::topoformer: break;
  }
  throw ConfigError("build_baseline: topoformer is not a baseline variant");
}

inline std::unique_ptr<Model> build_model(Variant variant, const json& config_j,
                                          std::uint64_t seed) {
  if (variant == Variant::topoformer) {
    return build_topoformer(TopoFormerConfig::from_json(config_j), seed);
  }
  return build_baseline(variant, BaselineConfig::from_json(config_j), seed);
}

}  // namespace topoformer
