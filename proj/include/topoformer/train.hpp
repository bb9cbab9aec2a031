#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "topoformer/checkpoint.hpp"
#include "topoformer/dataset.hpp"
#include "topoformer/models.hpp"
#include "topoformer/rng.hpp"
#include "topoformer/tape.hpp"

namespace topoformer {

/// Mean absolute error over all elements, differentiable with subgradient
/// 0 at ties.
inline Tensor mae_loss(Tape& tape, const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mae_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  return tape.mean(tape.abs(tape.sub(pred, target)));
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moment buffers mirror parameter shapes.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, AdamConfig config = {})
      : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// p -= lr * m_hat / (sqrt(v_hat) + eps). Requires every parameter to
  /// carry a populated gradient.
  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor& p = params_[pi];
      if (!p.has_grad()) {
        throw ContractError("adam step " + std::to_string(t_) + ": parameter " +
                            std::to_string(pi) + " has no gradient");
      }
      const std::vector<double>& g = p.grad();
      std::vector<double>& m = m_[pi];
      std::vector<double>& v = v_[pi];
      std::vector<double>& data = p.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        data[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      }
    }
  }

  std::size_t step_count() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
  AdamConfig config_;
};

/// Patience counter over the validation loss; improvement means a strict
/// decrease by more than min_delta.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double min_delta)
      : patience_(patience), min_delta_(min_delta) {}

  /// Returns true when this observation improved on the best.
  bool observe(double val_loss) {
    if (val_loss < best_ - min_delta_) {
      best_ = val_loss;
      since_improvement_ = 0;
      return true;
    }
    ++since_improvement_;
    return false;
  }

  bool should_stop() const { return since_improvement_ >= patience_; }
  double best() const { return best_; }
  std::size_t epochs_since_improvement() const { return since_improvement_; }

 private:
  std::size_t patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t since_improvement_ = 0;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  double min_delta = 1e-6;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
  std::string checkpoint_dir = ".";
  double train_mae_goal = 0.0;  // stop once epoch train MAE drops below; 0 disables

  void validate() const {
    if (batch_size == 0 || max_epochs == 0 || patience == 0) {
      throw ConfigError("train config: batch_size, max_epochs and patience must be positive");
    }
    if (learning_rate <= 0.0) throw ConfigError("train config: learning_rate must be positive");
  }

  json to_json() const {
    return json{{"batch_size", batch_size},   {"max_epochs", max_epochs},
                {"patience", patience},       {"min_delta", min_delta},
                {"learning_rate", learning_rate}, {"seed", seed},
                {"checkpoint_dir", checkpoint_dir}, {"train_mae_goal", train_mae_goal}};
  }
};

struct EpochStat {
  std::size_t epoch;  // 1-based
  double train_mae;
  double val_mae;
};

struct TrainingReport {
  std::vector<EpochStat> epochs;
  std::size_t best_epoch = 0;
  double best_val_mae = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
  bool goal_reached = false;
  std::string checkpoint_path;
};

namespace detail {

inline std::pair<Tensor, Tensor> make_batch(const std::vector<ModelExample>& examples,
                                            const std::vector<std::size_t>& order,
                                            std::size_t start, std::size_t count) {
  Tensor input = Tensor::zeros({count, kInputLen});
  Tensor target = Tensor::zeros({count, kOutputLen});
  for (std::size_t b = 0; b < count; ++b) {
    const ModelExample& ex = examples[order[start + b]];
    if (!ex.target) {
      throw ContractError("training example " + ex.site_id + "|" + ex.survey_date +
                          " has no target");
    }
    std::copy(ex.input.begin(), ex.input.end(), input.data().begin() + b * kInputLen);
    std::copy(ex.target->begin(), ex.target->end(), target.data().begin() + b * kOutputLen);
  }
  return {input, target};
}

}  // namespace detail

/// MAE of the model over examples, in normalized units, without touching
/// gradients.
inline double evaluate_mae(const Model& model, const std::vector<ModelExample>& examples,
                           std::size_t batch_size = 32) {
  if (examples.empty()) throw InsufficientDataError("evaluate_mae: no examples");
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, examples.size() - start);
    auto [input, target] = detail::make_batch(examples, order, start, count);
    Tape tape;
    tape.set_recording(false);
    Tensor pred = model.forward(tape, input);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      acc += std::fabs(pred.data()[i] - target.data()[i]);
    }
    n += pred.size();
  }
  return acc / static_cast<double>(n);
}

/// Mini-batch training with Adam, per-epoch validation, early stopping on
/// validation MAE, and checkpointing of the best epoch. The returned
/// report's best checkpoint, not the final weights, is what evaluation
/// should load.
inline TrainingReport fit(Model& model, const DatasetSplit& split, const TrainConfig& config,
                          const json& checkpoint_extra = json::object()) {
  config.validate();
  if (split.train.empty() || split.val.empty()) {
    throw InsufficientDataError("fit: train and validation splits must be non-empty");
  }
  for (const auto& ex : split.train) {
    if (!ex.normalized) throw ContractError("fit: training examples must be normalized");
  }

  TrainingReport report;
  report.checkpoint_path = config.checkpoint_dir + "/" + model.name() + "_best.ckpt";

  AdamConfig adam_config;
  adam_config.learning_rate = config.learning_rate;
  AdamOptimizer optimizer(parameter_tensors(model), adam_config);
  EarlyStopping stopper(config.patience, config.min_delta);
  Rng shuffle_rng(derive_seed(config.seed, "epoch-shuffle"));

  std::vector<std::size_t> order(split.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_acc = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      auto [input, target] = detail::make_batch(split.train, order, start, count);
      Tape tape;
      Tensor pred = model.forward(tape, input);
      Tensor loss = mae_loss(tape, pred, target);
      if (!std::isfinite(loss.value())) {
        throw DivergedError("training diverged at epoch " + std::to_string(epoch) +
                            ": non-finite loss");
      }
      optimizer.zero_grad();
      tape.backward(loss);
      optimizer.step();
      loss_acc += loss.value() * static_cast<double>(count);
      seen += count;
    }
    const double train_mae = loss_acc / static_cast<double>(seen);
    const double val_mae = evaluate_mae(model, split.val, config.batch_size);
    if (!std::isfinite(val_mae)) {
      throw DivergedError("training diverged at epoch " + std::to_string(epoch) +
                          ": non-finite validation loss");
    }
    report.epochs.push_back({epoch, train_mae, val_mae});

    if (stopper.observe(val_mae)) {
      report.best_epoch = epoch;
      report.best_val_mae = val_mae;
      json extra = checkpoint_extra;
      extra["best_epoch"] = epoch;
      extra["best_val_mae"] = val_mae;
      save_checkpoint(model, report.checkpoint_path, extra);
    }
    if (config.train_mae_goal > 0.0 && train_mae < config.train_mae_goal) {
      report.goal_reached = true;
      break;
    }
    if (stopper.should_stop()) {
      report.stopped_early = true;
      break;
    }
  }
  return report;
}

inline json training_summary_json(const TrainingReport& report, const TrainConfig& config) {
  return json{{"best_epoch", report.best_epoch},
              {"best_val_mae", report.best_val_mae},
              {"stopped_early", report.stopped_early},
              {"goal_reached", report.goal_reached},
              {"checkpoint", report.checkpoint_path},
              {"epochs_run", report.epochs.size()},
              {"seed", config.seed},
              {"config", config.to_json()}};
}

}  // namespace topoformer
