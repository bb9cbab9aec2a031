#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "topoformer/errors.hpp"
#include "topoformer/models.hpp"
#include "topoformer/profile.hpp"
#include "topoformer/rng.hpp"

namespace topoformer {

/// Z-score statistics, computed from the training split only.
class DegenerateStatisticsError : public Error {
 public:
  using Error::Error;
};

struct Normalization {
  double elev_mean = 0.0;
  double elev_std = 1.0;
  double chain_mean = 0.0;
  double chain_std = 1.0;

  json to_json() const {
    return json{{"elev_mean", elev_mean},
                {"elev_std", elev_std},
                {"chain_mean", chain_mean},
                {"chain_std", chain_std}};
  }

  static Normalization from_json(const json& j) {
    Normalization n;
    n.elev_mean = j.at("elev_mean").get<double>();
    n.elev_std = j.at("elev_std").get<double>();
    n.chain_mean = j.at("chain_mean").get<double>();
    n.chain_std = j.at("chain_std").get<double>();
    return n;
  }
};

/// One model input/target pair. Layout of `input`: elements [0,80) are
/// elevation samples, [80,180) the 100 chainage samples. Target is the
/// 20 elevations between MLWN and MLWS; absent for OOD examples.
struct ModelExample {
  std::vector<double> input;                  // 180
  std::optional<std::vector<double>> target;  // 20
  Normalization norm;                         // stats applied when normalized
  bool normalized = false;
  std::string site_id;
  std::string survey_date;
};

constexpr double kTargetBandTolerance = 0.01;  // m

/// Builds an in-distribution example from a complete resampled profile.
/// Target elevations must lie within [mlws, mlwn] to one centimetre.
inline ModelExample make_example(const ResampledProfile& rp, const SiteDatums& datums) {
  if (!rp.reaches_mlws || rp.pairs.size() != kResampleTotal) {
    throw ContractError("make_example: profile " + rp.site_id + "|" + rp.survey_date +
                        " does not reach MLWS");
  }
  ModelExample ex;
  ex.site_id = rp.site_id;
  ex.survey_date = rp.survey_date;
  ex.input.resize(kInputLen);
  for (std::size_t i = 0; i < kKnownLen; ++i) ex.input[i] = rp.pairs[i].elevation_m;
  for (std::size_t i = 0; i < kSeqLen; ++i) ex.input[kKnownLen + i] = rp.pairs[i].chainage_m;
  std::vector<double> target(kOutputLen);
  for (std::size_t i = 0; i < kOutputLen; ++i) {
    const double e = rp.pairs[kResampleUpper + i].elevation_m;
    if (e > datums.mlwn_m + kTargetBandTolerance || e < datums.mlws_m - kTargetBandTolerance) {
      throw DomainError("profile " + rp.site_id + "|" + rp.survey_date + ": target elevation " +
                        std::to_string(e) + " outside [mlws, mlwn] band");
    }
    target[i] = e;
  }
  ex.target = std::move(target);
  return ex;
}

/// Builds an OOD example from a truncated profile. The 20 chainages below
/// MLWN are unobserved and must be supplied (typically the element-wise
/// mean of the site's complete surveys).
inline ModelExample make_ood_example(const ResampledProfile& rp,
                                     const std::array<double, kOutputLen>& lower_chainages) {
  if (rp.reaches_mlws || rp.pairs.size() != kResampleUpper) {
    throw ContractError("make_ood_example: profile " + rp.site_id + "|" + rp.survey_date +
                        " is not a truncated profile");
  }
  ModelExample ex;
  ex.site_id = rp.site_id;
  ex.survey_date = rp.survey_date;
  ex.input.resize(kInputLen);
  for (std::size_t i = 0; i < kKnownLen; ++i) ex.input[i] = rp.pairs[i].elevation_m;
  for (std::size_t i = 0; i < kKnownLen; ++i) ex.input[kKnownLen + i] = rp.pairs[i].chainage_m;
  for (std::size_t i = 0; i < kOutputLen; ++i) {
    ex.input[kKnownLen + kKnownLen + i] = lower_chainages[i];
  }
  return ex;
}

/// Population mean/std of elevations and chainages over the given
/// (training) examples.
inline Normalization compute_normalization(const std::vector<ModelExample>& train) {
  if (train.empty()) throw InsufficientDataError("compute_normalization: no training examples");
  double se = 0.0, se2 = 0.0, sc = 0.0, sc2 = 0.0;
  std::size_t ne = 0, nc = 0;
  for (const auto& ex : train) {
    if (ex.normalized) throw ContractError("compute_normalization: examples already normalized");
    for (std::size_t i = 0; i < kKnownLen; ++i) {
      se += ex.input[i];
      se2 += ex.input[i] * ex.input[i];
      ++ne;
    }
    for (std::size_t i = kKnownLen; i < kInputLen; ++i) {
      sc += ex.input[i];
      sc2 += ex.input[i] * ex.input[i];
      ++nc;
    }
    if (ex.target) {
      for (double t : *ex.target) {
        se += t;
        se2 += t * t;
        ++ne;
      }
    }
  }
  Normalization n;
  n.elev_mean = se / static_cast<double>(ne);
  n.chain_mean = sc / static_cast<double>(nc);
  const double ve = se2 / static_cast<double>(ne) - n.elev_mean * n.elev_mean;
  const double vc = sc2 / static_cast<double>(nc) - n.chain_mean * n.chain_mean;
  n.elev_std = std::sqrt(std::max(ve, 0.0));
  n.chain_std = std::sqrt(std::max(vc, 0.0));
  if (n.elev_std <= 0.0 || n.chain_std <= 0.0) {
    throw DegenerateStatisticsError("normalization statistics are degenerate (zero variance)");
  }
  return n;
}

inline void normalize_example(ModelExample& ex, const Normalization& n) {
  if (ex.normalized) throw ContractError("normalize_example: already normalized");
  for (std::size_t i = 0; i < kKnownLen; ++i) ex.input[i] = (ex.input[i] - n.elev_mean) / n.elev_std;
  for (std::size_t i = kKnownLen; i < kInputLen; ++i) {
    ex.input[i] = (ex.input[i] - n.chain_mean) / n.chain_std;
  }
  if (ex.target) {
    for (double& t : *ex.target) t = (t - n.elev_mean) / n.elev_std;
  }
  ex.norm = n;
  ex.normalized = true;
}

inline void denormalize_example(ModelExample& ex) {
  if (!ex.normalized) throw ContractError("denormalize_example: not normalized");
  const Normalization& n = ex.norm;
  for (std::size_t i = 0; i < kKnownLen; ++i) ex.input[i] = ex.input[i] * n.elev_std + n.elev_mean;
  for (std::size_t i = kKnownLen; i < kInputLen; ++i) {
    ex.input[i] = ex.input[i] * n.chain_std + n.chain_mean;
  }
  if (ex.target) {
    for (double& t : *ex.target) t = t * n.elev_std + n.elev_mean;
  }
  ex.normalized = false;
}

struct DatasetSplit {
  std::vector<ModelExample> train;
  std::vector<ModelExample> val;
  std::vector<ModelExample> test;
  std::uint64_t seed = 0;
};

/// 7:2:1 split sizes under integer floor: train = 7N/10, val = 2N/10,
/// test takes the remainder.
inline std::array<std::size_t, 3> split_sizes(std::size_t n) {
  const std::size_t train = (7 * n) / 10;
  const std::size_t val = (2 * n) / 10;
  return {train, val, n - train - val};
}

/// Seeded uniform shuffle, then contiguous 7:2:1 assignment. With
/// `site_stratified`, the rule is applied per site instead (sites in
/// lexicographic order, per-site streams derived from the seed).
inline DatasetSplit split_examples(std::vector<ModelExample> examples, std::uint64_t seed,
                                   bool site_stratified = false) {
  if (examples.size() < 10) {
    throw InsufficientDataError("split requires at least 10 examples, got " +
                                std::to_string(examples.size()));
  }
  DatasetSplit out;
  out.seed = seed;
  auto assign = [&out](std::vector<ModelExample>&& group, Rng& rng) {
    shuffle(group, rng);
    const auto sizes = split_sizes(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (i < sizes[0]) {
        out.train.push_back(std::move(group[i]));
      } else if (i < sizes[0] + sizes[1]) {
        out.val.push_back(std::move(group[i]));
      } else {
        out.test.push_back(std::move(group[i]));
      }
    }
  };
  if (!site_stratified) {
    Rng rng(derive_seed(seed, "split"));
    assign(std::move(examples), rng);
  } else {
    std::map<std::string, std::vector<ModelExample>> by_site;
    for (auto& ex : examples) by_site[ex.site_id].push_back(std::move(ex));
    for (auto& [site, group] : by_site) {
      Rng rng(derive_seed(seed, "split:" + site));
      assign(std::move(group), rng);
    }
  }
  return out;
}

inline void normalize_split(DatasetSplit& split, const Normalization& n) {
  for (auto& ex : split.train) normalize_example(ex, n);
  for (auto& ex : split.val) normalize_example(ex, n);
  for (auto& ex : split.test) normalize_example(ex, n);
}

}  // namespace topoformer
