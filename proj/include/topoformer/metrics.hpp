#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "topoformer/dataset.hpp"
#include "topoformer/errors.hpp"
#include "topoformer/models.hpp"
#include "topoformer/profile.hpp"
#include "topoformer/tape.hpp"

namespace topoformer {

/// No complete historical survey exists to build a reference from.
class InsufficientHistoryError : public Error {
 public:
  using Error::Error;
};

inline double mae(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw DimensionError("mae: lengths " + std::to_string(pred.size()) + " vs " +
                         std::to_string(truth.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::fabs(pred[i] - truth[i]);
  return acc / static_cast<double>(pred.size());
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw DimensionError("rmse: lengths " + std::to_string(pred.size()) + " vs " +
                         std::to_string(truth.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(pred.size()));
}

/// Percentage error with a floored denominator so near-zero truths cannot
/// blow up: 100 * mean(|p - t| / max(|t|, guard)).
inline double mape(const std::vector<double>& pred, const std::vector<double>& truth,
                   double epsilon_guard = 0.01) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw DimensionError("mape: lengths " + std::to_string(pred.size()) + " vs " +
                         std::to_string(truth.size()));
  }
  if (epsilon_guard <= 0.0) throw ContractError("mape: epsilon_guard must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    acc += std::fabs(pred[i] - truth[i]) / std::max(std::fabs(truth[i]), epsilon_guard);
  }
  return 100.0 * acc / static_cast<double>(pred.size());
}

struct MapeStats {
  double min = 0.0;
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

/// Quantile by linear interpolation between order statistics.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  const double h = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline MapeStats box_stats(std::vector<double> values) {
  if (values.empty()) throw DomainError("box_stats: empty input");
  std::sort(values.begin(), values.end());
  MapeStats s;
  s.min = values.front();
  s.max = values.back();
  s.q25 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q75 = quantile_sorted(values, 0.75);
  double acc = 0.0;
  for (double v : values) acc += v;
  s.mean = acc / static_cast<double>(values.size());
  return s;
}

// ---- model evaluation ----

struct ModelEvalRow {
  std::string model;
  double mae_m = 0.0;
  double rmse_m = 0.0;
  MapeStats mape_stats;
  std::size_t params = 0;
  bool best = false;
  bool second_best = false;
  std::vector<double> per_profile_mape;  // one value per test profile
};

struct EvaluationReport {
  std::vector<ModelEvalRow> rows;  // sorted by MAE ascending
  std::size_t test_profiles = 0;
  std::uint64_t split_seed = 0;
};

/// Runs a model over normalized examples without recording gradients and
/// returns denormalized 20-point predictions per example.
inline std::vector<std::vector<double>> predict_denormalized(
    const Model& model, const std::vector<ModelExample>& examples, const Normalization& norm,
    std::size_t batch_size = 32) {
  std::vector<std::vector<double>> out;
  out.reserve(examples.size());
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, examples.size() - start);
    Tensor batch = Tensor::zeros({count, kInputLen});
    for (std::size_t b = 0; b < count; ++b) {
      const auto& ex = examples[start + b];
      if (!ex.normalized) throw ContractError("predict: examples must be normalized");
      std::copy(ex.input.begin(), ex.input.end(), batch.data().begin() + b * kInputLen);
    }
    Tape tape;
    tape.set_recording(false);
    Tensor pred = model.forward(tape, batch);
    for (std::size_t b = 0; b < count; ++b) {
      std::vector<double> row(kOutputLen);
      for (std::size_t i = 0; i < kOutputLen; ++i) {
        row[i] = pred.at(b, i) * norm.elev_std + norm.elev_mean;
      }
      out.push_back(std::move(row));
    }
  }
  return out;
}

/// Table-shaped comparison: pooled MAE/RMSE in meters over all target
/// elements, per-profile MAPE distribution, parameter counts. Rows come
/// back sorted by MAE with the best and second-best flagged.
inline EvaluationReport evaluate_models(const std::vector<const Model*>& models,
                                        const std::vector<ModelExample>& test,
                                        const Normalization& norm) {
  if (test.empty()) throw InsufficientDataError("evaluate_models: empty test set");
  EvaluationReport report;
  report.test_profiles = test.size();

  std::vector<std::vector<double>> truths;
  truths.reserve(test.size());
  for (const auto& ex : test) {
    if (!ex.target) throw ContractError("evaluate_models: test example lacks target");
    std::vector<double> t(kOutputLen);
    for (std::size_t i = 0; i < kOutputLen; ++i) {
      t[i] = (*ex.target)[i] * norm.elev_std + norm.elev_mean;
    }
    truths.push_back(std::move(t));
  }

  for (const Model* model : models) {
    auto preds = predict_denormalized(*model, test, norm);
    ModelEvalRow row;
    row.model = model->name();
    row.params = count_params(*model);
    std::vector<double> flat_pred, flat_truth;
    flat_pred.reserve(test.size() * kOutputLen);
    flat_truth.reserve(test.size() * kOutputLen);
    for (std::size_t p = 0; p < test.size(); ++p) {
      flat_pred.insert(flat_pred.end(), preds[p].begin(), preds[p].end());
      flat_truth.insert(flat_truth.end(), truths[p].begin(), truths[p].end());
      row.per_profile_mape.push_back(mape(preds[p], truths[p]));
    }
    row.mae_m = mae(flat_pred, flat_truth);
    row.rmse_m = rmse(flat_pred, flat_truth);
    row.mape_stats = box_stats(row.per_profile_mape);
    report.rows.push_back(std::move(row));
  }

  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const ModelEvalRow& a, const ModelEvalRow& b) { return a.mae_m < b.mae_m; });
  if (!report.rows.empty()) report.rows[0].best = true;
  if (report.rows.size() > 1) report.rows[1].second_best = true;
  return report;
}

// ---- out-of-distribution protocol ----

/// Element-wise mean of the MLWN->MLWS segment over a site's complete
/// surveys. Mean chainages are kept alongside so truncated surveys can be
/// given a plausible chainage grid for the unobserved segment.
struct AverageReferenceProfile {
  std::string site_id;
  std::array<double, kOutputLen> elevations{};
  std::array<double, kOutputLen> chainages{};
  std::size_t contributing_surveys = 0;
};

inline AverageReferenceProfile average_reference_profile(
    const std::vector<ResampledProfile>& history) {
  AverageReferenceProfile ref;
  for (const auto& rp : history) {
    if (!rp.reaches_mlws) continue;
    if (ref.contributing_surveys == 0) {
      ref.site_id = rp.site_id;
    } else if (rp.site_id != ref.site_id) {
      throw ContractError("average_reference_profile: mixed sites " + ref.site_id + " and " +
                          rp.site_id);
    }
    for (std::size_t i = 0; i < kOutputLen; ++i) {
      ref.elevations[i] += rp.pairs[kResampleUpper + i].elevation_m;
      ref.chainages[i] += rp.pairs[kResampleUpper + i].chainage_m;
    }
    ++ref.contributing_surveys;
  }
  if (ref.contributing_surveys == 0) {
    throw InsufficientHistoryError(
        "average_reference_profile: no complete survey reaches MLWS");
  }
  for (std::size_t i = 0; i < kOutputLen; ++i) {
    ref.elevations[i] /= static_cast<double>(ref.contributing_surveys);
    ref.chainages[i] /= static_cast<double>(ref.contributing_surveys);
  }
  return ref;
}

/// Deviation of a 20-point prediction (meters) from the reference segment.
/// This is reference-relative, not an error against ground truth.
inline double ood_deviation(const std::vector<double>& prediction_m,
                            const AverageReferenceProfile& reference) {
  return mae(prediction_m,
             std::vector<double>(reference.elevations.begin(), reference.elevations.end()));
}

struct OodRow {
  std::string model;
  std::string site_id;
  std::string survey_date;
  double reference_deviation_mae_m = 0.0;
  bool has_truth = false;
  double truth_mae_m = 0.0;
  double pred_mlws_chainage_m = 0.0;
  double pred_mlws_elevation_m = 0.0;
  std::vector<double> prediction_m;   // 20 predicted elevations
  std::vector<double> chainages_m;    // their chainage grid
  std::vector<double> truth_m;        // truth at those chainages, when known
};

struct OodReport {
  std::vector<OodRow> rows;  // one per (model, example)
};

/// Predicts the unobserved MLWN->MLWS segment for each truncated survey
/// and reports the deviation from the site's average reference profile.
/// When a withheld truth polyline is supplied (anchored coordinates), a
/// truth-relative MAE is reported as well.
inline OodReport evaluate_ood(
    const std::vector<const Model*>& models, const std::vector<ModelExample>& ood_examples,
    const AverageReferenceProfile& reference, const Normalization& norm,
    const std::map<std::string, std::vector<ProfilePoint>>* truth_by_key = nullptr) {
  OodReport report;
  for (const auto& ex : ood_examples) {
    if (ex.site_id != reference.site_id) {
      throw ContractError("evaluate_ood: example site " + ex.site_id +
                          " does not match reference site " + reference.site_id);
    }
    if (ex.target) {
      throw ContractError("evaluate_ood: example " + ex.site_id + "|" + ex.survey_date +
                          " has a target; it is not OOD");
    }
  }
  for (const Model* model : models) {
    auto preds = predict_denormalized(*model, ood_examples, norm);
    for (std::size_t i = 0; i < ood_examples.size(); ++i) {
      const auto& ex = ood_examples[i];
      OodRow row;
      row.model = model->name();
      row.site_id = ex.site_id;
      row.survey_date = ex.survey_date;
      row.prediction_m = preds[i];
      row.chainages_m.resize(kOutputLen);
      for (std::size_t j = 0; j < kOutputLen; ++j) {
        row.chainages_m[j] =
            ex.input[kKnownLen + kKnownLen + j] * norm.chain_std + norm.chain_mean;
      }
      row.reference_deviation_mae_m = ood_deviation(preds[i], reference);
      row.pred_mlws_chainage_m = row.chainages_m.back();
      row.pred_mlws_elevation_m = preds[i].back();
      if (truth_by_key) {
        auto it = truth_by_key->find(ex.site_id + "|" + ex.survey_date);
        if (it != truth_by_key->end()) {
          row.truth_m.resize(kOutputLen);
          for (std::size_t j = 0; j < kOutputLen; ++j) {
            row.truth_m[j] = interpolate_elevation(it->second, row.chainages_m[j]);
          }
          row.truth_mae_m = mae(preds[i], row.truth_m);
          row.has_truth = true;
        }
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

}  // namespace topoformer
