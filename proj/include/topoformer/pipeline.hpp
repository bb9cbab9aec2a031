#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "topoformer/dataset.hpp"
#include "topoformer/metrics.hpp"
#include "topoformer/profile.hpp"
#include "topoformer/synthetic.hpp"
#include "topoformer/train.hpp"

namespace topoformer {

// Data directory layout: profiles.csv and datums.csv are required;
// truth_segments.csv (same schema as profiles.csv) optionally carries the
// generator's withheld noise-free surveys for truncated profiles.

// %.17g round-trips doubles exactly, so re-parsing our own CSVs cannot
// shift a crossing or flip a profile's reaches-MLWS classification.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  return in;
}

// ---- writers ----

inline void write_profiles_csv(const std::vector<RawProfile>& profiles, std::ostream& out) {
  out << "site_id,survey_date,chainage_m,elevation_m\n";
  for (const auto& p : profiles) {
    for (const auto& pt : p.points) {
      out << p.site_id << "," << p.survey_date << "," << format_double(pt.chainage_m) << ","
          << format_double(pt.elevation_m) << "\n";
    }
  }
}

inline void write_datums_csv(const std::map<std::string, SiteDatums>& datums, std::ostream& out) {
  out << "site_id,mhws_m,mhwn_m,mlwn_m,mlws_m\n";
  for (const auto& [site, d] : datums) {
    out << site << "," << format_double(d.mhws_m) << "," << format_double(d.mhwn_m) << ","
        << format_double(d.mlwn_m) << "," << format_double(d.mlws_m) << "\n";
  }
}

inline void write_rejects_csv(const std::vector<Reject>& rejects, std::ostream& out) {
  out << "site_id,survey_date,reason\n";
  for (const auto& r : rejects) {
    std::string reason = r.reason;
    for (char& c : reason) {
      if (c == ',') c = ';';
    }
    out << r.site_id << "," << r.survey_date << "," << reason << "\n";
  }
}

inline void write_training_report_csv(const TrainingReport& report, std::ostream& out) {
  out << "epoch,train_mae,val_mae\n";
  for (const auto& e : report.epochs) {
    out << e.epoch << "," << format_double(e.train_mae) << "," << format_double(e.val_mae)
        << "\n";
  }
}

inline void write_evaluation_report_csv(const EvaluationReport& report, std::ostream& out) {
  out << "model,mae_m,rmse_m,mape_min,mape_q25,mape_median,mape_q75,mape_max,params\n";
  for (const auto& r : report.rows) {
    out << r.model << "," << format_double(r.mae_m) << "," << format_double(r.rmse_m) << ","
        << format_double(r.mape_stats.min) << "," << format_double(r.mape_stats.q25) << ","
        << format_double(r.mape_stats.median) << "," << format_double(r.mape_stats.q75) << ","
        << format_double(r.mape_stats.max) << "," << r.params << "\n";
  }
}

/// Per-profile prediction dump consumable by external plotting tools.
inline void write_prediction_dump_csv(
    const std::vector<ModelExample>& examples, const std::vector<std::vector<double>>& preds,
    const Normalization& norm, std::ostream& out) {
  out << "site_id,survey_date,index,chainage_m,elevation_true,elevation_pred\n";
  for (std::size_t p = 0; p < examples.size(); ++p) {
    const auto& ex = examples[p];
    for (std::size_t i = 0; i < kOutputLen; ++i) {
      const double chain =
          ex.input[kKnownLen + kKnownLen + i] * norm.chain_std + norm.chain_mean;
      out << ex.site_id << "," << ex.survey_date << "," << i << "," << format_double(chain)
          << ",";
      if (ex.target) out << format_double((*ex.target)[i] * norm.elev_std + norm.elev_mean);
      out << "," << format_double(preds[p][i]) << "\n";
    }
  }
}

/// OOD dump: truth column filled from the withheld polylines when known.
inline void write_ood_dump_csv(const std::vector<OodRow>& rows, std::ostream& out) {
  out << "site_id,survey_date,index,chainage_m,elevation_true,elevation_pred\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < kOutputLen; ++i) {
      out << row.site_id << "," << row.survey_date << "," << i << ","
          << format_double(row.chainages_m[i]) << ",";
      if (row.has_truth) out << format_double(row.truth_m[i]);
      out << "," << format_double(row.prediction_m[i]) << "\n";
    }
  }
}

inline void write_ood_report_csv(const OodReport& report, std::ostream& out) {
  out << "model,site_id,survey_date,reference_mae_m,truth_mae_m,pred_mlws_chainage_m,"
         "pred_mlws_elevation_m\n";
  for (const auto& r : report.rows) {
    out << r.model << "," << r.site_id << "," << r.survey_date << ","
        << format_double(r.reference_deviation_mae_m) << ",";
    if (r.has_truth) out << format_double(r.truth_mae_m);
    out << "," << format_double(r.pred_mlws_chainage_m) << ","
        << format_double(r.pred_mlws_elevation_m) << "\n";
  }
}

inline void write_mape_values_csv(const EvaluationReport& report,
                                  const std::vector<ModelExample>& test, std::ostream& out) {
  out << "model,site_id,survey_date,mape_percent\n";
  for (const auto& row : report.rows) {
    for (std::size_t p = 0; p < test.size(); ++p) {
      out << row.model << "," << test[p].site_id << "," << test[p].survey_date << ","
          << format_double(row.per_profile_mape[p]) << "\n";
    }
  }
}

inline void write_synthetic_dataset(const SyntheticDataset& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir + "/profiles.csv");
    write_profiles_csv(data.profiles, out);
  }
  {
    auto out = open_out(dir + "/datums.csv");
    write_datums_csv(data.datums, out);
  }
  {
    auto out = open_out(dir + "/truth_segments.csv");
    write_profiles_csv(data.withheld_truth, out);
  }
}

// ---- ingest ----

struct LoadedData {
  std::vector<ResampledProfile> complete;   // reach MLWS; training material
  std::vector<ResampledProfile> truncated;  // stop at MLWN; OOD material
  std::map<std::string, SiteDatums> datums;
  std::vector<Reject> rejects;
  std::map<std::string, std::vector<ProfilePoint>> truth;  // anchored withheld polylines
};

/// parse -> anchor -> resample, with per-profile failures collected in the
/// rejects report rather than aborting the run.
inline LoadedData process_profiles(const std::vector<RawProfile>& raw,
                                   const std::map<std::string, SiteDatums>& datums,
                                   std::vector<Reject> rejects = {}) {
  LoadedData out;
  out.datums = datums;
  out.rejects = std::move(rejects);
  for (const auto& profile : raw) {
    auto it = datums.find(profile.site_id);
    if (it == datums.end()) {
      out.rejects.push_back({profile.site_id, profile.survey_date, "no datum entry for site"});
      continue;
    }
    try {
      ResampledProfile rp = resample(anchor_chainage(profile), it->second);
      if (rp.reaches_mlws) {
        out.complete.push_back(std::move(rp));
      } else {
        out.truncated.push_back(std::move(rp));
      }
    } catch (const Error& e) {
      out.rejects.push_back({profile.site_id, profile.survey_date, e.what()});
    }
  }
  return out;
}

inline LoadedData load_data_dir(const std::string& dir) {
  std::vector<Reject> rejects;
  std::vector<RawProfile> raw;
  std::map<std::string, SiteDatums> datums;
  {
    auto in = open_in(dir + "/profiles.csv");
    raw = parse_profiles(in, rejects);
  }
  {
    auto in = open_in(dir + "/datums.csv");
    datums = parse_datums(in, rejects);
  }
  LoadedData data = process_profiles(raw, datums, std::move(rejects));
  const std::string truth_path = dir + "/truth_segments.csv";
  if (std::filesystem::exists(truth_path)) {
    auto in = open_in(truth_path);
    std::vector<Reject> truth_rejects;
    for (const auto& p : parse_profiles(in, truth_rejects)) {
      try {
        data.truth.emplace(p.key(), anchor_chainage(p).points);
      } catch (const Error&) {
        // withheld truth that cannot be anchored is simply unusable
      }
    }
  }
  return data;
}

/// Builds normalized train/val/test from the complete profiles. Stats come
/// from the training split only.
struct PreparedDataset {
  DatasetSplit split;
  Normalization norm;
};

inline PreparedDataset prepare_dataset(const LoadedData& data, std::uint64_t seed,
                                       bool site_stratified, std::vector<Reject>* rejects) {
  std::vector<ModelExample> examples;
  for (const auto& rp : data.complete) {
    try {
      examples.push_back(make_example(rp, data.datums.at(rp.site_id)));
    } catch (const Error& e) {
      if (rejects) rejects->push_back({rp.site_id, rp.survey_date, e.what()});
    }
  }
  PreparedDataset out;
  out.split = split_examples(std::move(examples), seed, site_stratified);
  out.norm = compute_normalization(out.split.train);
  normalize_split(out.split, out.norm);
  return out;
}

/// OOD inputs for one site: reference from the site's complete surveys,
/// examples from its truncated surveys with the reference's mean chainage
/// grid standing in for the unobserved segment.
struct OodInputs {
  AverageReferenceProfile reference;
  std::vector<ModelExample> examples;  // normalized
};

inline OodInputs build_ood_inputs(const LoadedData& data, const std::string& site,
                                  const Normalization& norm) {
  std::vector<ResampledProfile> history;
  for (const auto& rp : data.complete) {
    if (rp.site_id == site) history.push_back(rp);
  }
  if (history.empty()) {
    throw InsufficientHistoryError("site " + site + " has no complete survey to average");
  }
  OodInputs out;
  out.reference = average_reference_profile(history);
  for (const auto& rp : data.truncated) {
    if (rp.site_id != site) continue;
    ModelExample ex = make_ood_example(rp, out.reference.chainages);
    normalize_example(ex, norm);
    out.examples.push_back(std::move(ex));
  }
  return out;
}

}  // namespace topoformer
