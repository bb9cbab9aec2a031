#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "topoformer/profile.hpp"
#include "topoformer/rng.hpp"

namespace topoformer {

// Desk-scale stand-in for the survey archive: per site an equilibrium
// shape h(x) = h_back - A x^(2/3), per survey two smooth sinusoidal
// perturbations, plus optional pointwise observation noise.

struct GeneratorConfig {
  std::size_t sites = 3;
  std::size_t profiles_per_site = 10;
  std::uint64_t seed = 42;
  double noise_std = 0.01;
  double truncate_fraction = 0.0;  // per-site fraction of surveys cut at MLWN

  void validate() const {
    if (sites == 0 || profiles_per_site == 0) {
      throw ConfigError("generator: sites and profiles_per_site must be positive");
    }
    if (noise_std < 0.0 || truncate_fraction < 0.0 || truncate_fraction > 1.0) {
      throw ConfigError("generator: noise_std must be >= 0 and truncate_fraction in [0,1]");
    }
  }
};

/// Closed-form survey curve (before observation noise).
struct ProfileCurve {
  double back_elevation;
  double scale_a;
  double amp1, wavelength1, phase1;
  double amp2, wavelength2, phase2;

  double eval(double x) const {
    const double two_pi = 6.283185307179586476925286766559;
    return back_elevation - scale_a * std::cbrt(x * x) +
           amp1 * std::sin(two_pi * x / wavelength1 + phase1) +
           amp2 * std::sin(two_pi * x / wavelength2 + phase2);
  }
};

struct SyntheticDataset {
  std::vector<RawProfile> profiles;            // observed (possibly truncated) surveys
  std::map<std::string, SiteDatums> datums;
  std::vector<RawProfile> withheld_truth;      // noise-free full surveys for truncated ones
  std::vector<ProfileCurve> curves;            // parallel to profiles
  std::vector<bool> truncated;                 // parallel to profiles
};

namespace detail {

inline std::string site_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "site_%02zu", i + 1);
  return buf;
}

inline std::string survey_date(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu-%02zu-15", 2020 + i / 12, 1 + i % 12);
  return buf;
}

}  // namespace detail

inline SyntheticDataset generate_synthetic(const GeneratorConfig& config) {
  config.validate();
  SyntheticDataset out;
  Rng rng(derive_seed(config.seed, "generator"));
  const std::size_t truncate_per_site = static_cast<std::size_t>(
      std::llround(config.truncate_fraction * static_cast<double>(config.profiles_per_site)));

  for (std::size_t s = 0; s < config.sites; ++s) {
    const std::string site = detail::site_name(s);
    SiteDatums d;
    d.site_id = site;
    d.mhws_m = rng.uniform(2.2, 3.2);
    d.mhwn_m = d.mhws_m - rng.uniform(0.8, 1.2);
    d.mlwn_m = -rng.uniform(1.2, 2.0);
    d.mlws_m = d.mlwn_m - rng.uniform(0.8, 1.4);
    d.validate();
    out.datums.emplace(site, d);

    const double h_back = rng.uniform(4.2, 5.8);
    const double scale_a = rng.uniform(0.30, 0.45);
    // transect long enough that the base curve ends well below MLWS
    const double depth_span = h_back - d.mlws_m + 0.8;
    const double length = std::pow(depth_span / scale_a, 1.5);

    for (std::size_t p = 0; p < config.profiles_per_site; ++p) {
      ProfileCurve curve;
      curve.back_elevation = h_back;
      curve.scale_a = scale_a;
      curve.amp1 = rng.uniform(0.05, 0.15);
      curve.wavelength1 = rng.uniform(50.0, 70.0);
      curve.phase1 = rng.uniform(0.0, 6.283185307179586);
      curve.amp2 = rng.uniform(0.02, 0.08);
      curve.wavelength2 = rng.uniform(20.0, 30.0);
      curve.phase2 = rng.uniform(0.0, 6.283185307179586);

      RawProfile full;
      full.site_id = site;
      full.survey_date = detail::survey_date(p);
      const std::size_t n_points = static_cast<std::size_t>(length) + 1;
      full.points.reserve(n_points);
      for (std::size_t i = 0; i < n_points; ++i) {
        const double x = static_cast<double>(i) +
                         (i == 0 ? 0.0 : rng.uniform(-0.2, 0.2));
        full.points.push_back({x, curve.eval(x)});
      }

      RawProfile observed = full;
      if (config.noise_std > 0.0) {
        for (auto& pt : observed.points) pt.elevation_m += config.noise_std * rng.normal();
      }

      const bool truncate = p >= config.profiles_per_site - truncate_per_site;
      if (truncate) {
        auto crossing = detail::first_downward_crossing(observed.points, d.mlwn_m);
        if (crossing) {
          std::vector<ProfilePoint> cut;
          for (const auto& pt : observed.points) {
            if (pt.chainage_m < crossing->first && pt.elevation_m > d.mlwn_m) {
              cut.push_back(pt);
            } else if (pt.chainage_m >= crossing->first) {
              break;
            }
          }
          cut.push_back({crossing->first, d.mlwn_m});
          observed.points = std::move(cut);
        }
        RawProfile truth = full;  // noise-free, untruncated
        out.withheld_truth.push_back(std::move(truth));
      }
      out.truncated.push_back(truncate);
      out.curves.push_back(curve);
      out.profiles.push_back(std::move(observed));
    }
  }
  return out;
}

}  // namespace topoformer
