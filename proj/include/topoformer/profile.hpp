#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "topoformer/errors.hpp"

namespace topoformer {

/// Profile never crosses 0 m elevation, so chainage cannot be anchored.
class NotAnchorableError : public Error {
 public:
  using Error::Error;
};

/// Profile never descends to MLWN; it cannot produce a training example.
class UnusableProfileError : public Error {
 public:
  using Error::Error;
};

struct ProfilePoint {
  double chainage_m;
  double elevation_m;
};

/// One surveyed transect: elevation vs distance along the line.
struct RawProfile {
  std::string site_id;
  std::string survey_date;  // YYYY-MM-DD
  std::vector<ProfilePoint> points;

  std::string key() const { return site_id + "|" + survey_date; }
};

struct SiteDatums {
  std::string site_id;
  double mhws_m;
  double mhwn_m;
  double mlwn_m;
  double mlws_m;

  void validate() const {
    if (!(mhws_m > mhwn_m && mhwn_m > mlwn_m && mlwn_m > mlws_m)) {
      throw DomainError("site " + site_id + ": datum ordering violated (expected mhws > mhwn > " +
                        "mlwn > mlws)");
    }
  }
};

struct Reject {
  std::string site_id;
  std::string survey_date;
  std::string reason;
};

/// Fixed 100-point form: 80 pairs from back-of-beach to the MLWN crossing,
/// then 20 pairs down to MLWS when the survey reaches it.
struct ResampledProfile {
  std::string site_id;
  std::string survey_date;
  std::vector<ProfilePoint> pairs;  // 100, or 80 when !reaches_mlws
  bool reaches_mlws = false;
};

constexpr std::size_t kResampleTotal = 100;
constexpr std::size_t kResampleUpper = 80;  // points down to MLWN
constexpr std::size_t kResampleLower = 20;  // points MLWN -> MLWS

// ---- CSV parsing ----

namespace detail {

inline std::string strip(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(strip(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

inline bool valid_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u}) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  return true;
}

inline void require_header(std::istream& in, const std::string& expected,
                           const std::string& what) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(what + ": empty input, expected header");
  if (strip(line) != expected) {
    throw SchemaError(what + ": bad header '" + strip(line) + "', expected '" + expected + "'");
  }
}

}  // namespace detail

/// Reads `site_id,survey_date,chainage_m,elevation_m` rows. Rows are
/// grouped by (site, date) in first-appearance order and sorted by
/// chainage; duplicate chainages keep the first occurrence. Bad rows and
/// bad profiles land in `rejects` instead of being dropped silently.
inline std::vector<RawProfile> parse_profiles(std::istream& in, std::vector<Reject>& rejects) {
  detail::require_header(in, "site_id,survey_date,chainage_m,elevation_m", "profile csv");
  std::vector<RawProfile> profiles;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::strip(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != 4) {
      rejects.push_back({"", "", "line " + std::to_string(line_no) + ": expected 4 fields"});
      continue;
    }
    double chainage, elevation;
    if (fields[0].empty() || !detail::valid_date(fields[1]) ||
        !detail::parse_double(fields[2], chainage) || !detail::parse_double(fields[3], elevation)) {
      rejects.push_back(
          {fields[0], fields[1], "line " + std::to_string(line_no) + ": malformed row"});
      continue;
    }
    const std::string key = fields[0] + "|" + fields[1];
    auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(key, profiles.size());
      profiles.push_back({fields[0], fields[1], {}});
      it = index.find(key);
    }
    profiles[it->second].points.push_back({chainage, elevation});
  }

  std::vector<RawProfile> ok;
  for (auto& p : profiles) {
    std::stable_sort(p.points.begin(), p.points.end(),
                     [](const ProfilePoint& a, const ProfilePoint& b) {
                       return a.chainage_m < b.chainage_m;
                     });
    std::vector<ProfilePoint> dedup;
    for (const auto& pt : p.points) {
      if (!dedup.empty() && dedup.back().chainage_m == pt.chainage_m) {
        rejects.push_back({p.site_id, p.survey_date,
                           "duplicate chainage " + std::to_string(pt.chainage_m) +
                               " dropped (kept first)"});
        continue;
      }
      dedup.push_back(pt);
    }
    p.points = std::move(dedup);
    if (p.points.size() < 2) {
      rejects.push_back({p.site_id, p.survey_date, "fewer than 2 valid points"});
      continue;
    }
    bool monotonic = true;
    for (std::size_t i = 1; i < p.points.size(); ++i) {
      if (p.points[i].chainage_m <= p.points[i - 1].chainage_m) monotonic = false;
    }
    if (!monotonic) {
      rejects.push_back({p.site_id, p.survey_date, "non-monotonic chainage"});
      continue;
    }
    ok.push_back(std::move(p));
  }
  return ok;
}

/// Reads `site_id,mhws_m,mhwn_m,mlwn_m,mlws_m` rows; sites violating the
/// datum ordering are rejected.
inline std::map<std::string, SiteDatums> parse_datums(std::istream& in,
                                                      std::vector<Reject>& rejects) {
  detail::require_header(in, "site_id,mhws_m,mhwn_m,mlwn_m,mlws_m", "datum csv");
  std::map<std::string, SiteDatums> out;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::strip(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    double v[4];
    if (fields.size() != 5 || fields[0].empty() || !detail::parse_double(fields[1], v[0]) ||
        !detail::parse_double(fields[2], v[1]) || !detail::parse_double(fields[3], v[2]) ||
        !detail::parse_double(fields[4], v[3])) {
      rejects.push_back({fields.empty() ? "" : fields[0], "",
                         "line " + std::to_string(line_no) + ": malformed datum row"});
      continue;
    }
    SiteDatums d{fields[0], v[0], v[1], v[2], v[3]};
    try {
      d.validate();
    } catch (const DomainError& e) {
      rejects.push_back({d.site_id, "", e.what()});
      continue;
    }
    if (!out.emplace(d.site_id, d).second) {
      rejects.push_back({d.site_id, "", "duplicate datum row dropped (kept first)"});
    }
  }
  return out;
}

// ---- geometry ----

/// Piecewise-linear elevation at `chainage`; clamps outside the survey span.
inline double interpolate_elevation(const std::vector<ProfilePoint>& points, double chainage) {
  if (points.empty()) throw ContractError("interpolate_elevation: no points");
  if (chainage <= points.front().chainage_m) return points.front().elevation_m;
  if (chainage >= points.back().chainage_m) return points.back().elevation_m;
  auto it = std::lower_bound(points.begin(), points.end(), chainage,
                             [](const ProfilePoint& p, double c) { return p.chainage_m < c; });
  const ProfilePoint& hi = *it;
  const ProfilePoint& lo = *(it - 1);
  if (hi.chainage_m == chainage) return hi.elevation_m;
  const double t = (chainage - lo.chainage_m) / (hi.chainage_m - lo.chainage_m);
  return lo.elevation_m + t * (hi.elevation_m - lo.elevation_m);
}

namespace detail {

/// Chainage of the first downward crossing of `level`, scanning seaward:
/// either a point exactly at the level or a bracketing pair above/below.
/// Returns the crossing chainage and the index of the last point at or
/// before it.
inline std::optional<std::pair<double, std::size_t>> first_downward_crossing(
    const std::vector<ProfilePoint>& points, double level) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].elevation_m == level) return std::make_pair(points[i].chainage_m, i);
    if (i + 1 < points.size() && points[i].elevation_m > level &&
        points[i + 1].elevation_m < level) {
      const double t = (points[i].elevation_m - level) /
                       (points[i].elevation_m - points[i + 1].elevation_m);
      return std::make_pair(
          points[i].chainage_m + t * (points[i + 1].chainage_m - points[i].chainage_m), i);
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Shifts chainage so the first downward 0 m crossing sits at chainage 0;
/// points above sea level end up at negative chainage.
inline RawProfile anchor_chainage(const RawProfile& profile) {
  auto crossing = detail::first_downward_crossing(profile.points, 0.0);
  if (!crossing) {
    throw NotAnchorableError("profile " + profile.key() +
                             " has no downward 0 m elevation crossing");
  }
  RawProfile out = profile;
  const double c0 = crossing->first;
  for (auto& p : out.points) p.chainage_m -= c0;
  return out;
}

/// Resamples to the fixed 100-point form: 80 points uniform in chainage
/// from the first survey point to the MLWN crossing, then 20 points
/// uniform in chainage from MLWN down to the MLWS crossing when the
/// profile reaches it. Elevations are interpolated on the survey polyline.
inline ResampledProfile resample(const RawProfile& profile, const SiteDatums& datums) {
  double min_elev = profile.points.front().elevation_m;
  for (const auto& p : profile.points) min_elev = std::min(min_elev, p.elevation_m);
  if (min_elev > datums.mlwn_m) {
    throw UnusableProfileError("profile " + profile.key() + " never reaches MLWN (min elevation " +
                               std::to_string(min_elev) + " > " + std::to_string(datums.mlwn_m) +
                               ")");
  }
  auto mlwn = detail::first_downward_crossing(profile.points, datums.mlwn_m);
  if (!mlwn) {
    throw UnusableProfileError("profile " + profile.key() +
                               " has no downward MLWN crossing despite reaching the level");
  }
  const double c_first = profile.points.front().chainage_m;
  const double c_mlwn = mlwn->first;
  if (!(c_mlwn > c_first)) {
    throw UnusableProfileError("profile " + profile.key() + " has no span above MLWN");
  }

  ResampledProfile out;
  out.site_id = profile.site_id;
  out.survey_date = profile.survey_date;
  out.pairs.reserve(kResampleTotal);
  for (std::size_t j = 0; j < kResampleUpper; ++j) {
    const double c = c_first + (c_mlwn - c_first) * static_cast<double>(j) /
                                   static_cast<double>(kResampleUpper - 1);
    out.pairs.push_back({c, interpolate_elevation(profile.points, c)});
  }

  // scan for MLWS strictly beyond the MLWN crossing
  std::vector<ProfilePoint> tail(profile.points.begin() +
                                     static_cast<std::ptrdiff_t>(mlwn->second),
                                 profile.points.end());
  if (!tail.empty() && tail.front().chainage_m < c_mlwn) {
    tail.front() = {c_mlwn, datums.mlwn_m};
  }
  auto mlws = detail::first_downward_crossing(tail, datums.mlws_m);
  if (mlws && mlws->first > c_mlwn) {
    out.reaches_mlws = true;
    const double c_mlws = mlws->first;
    for (std::size_t j = 1; j <= kResampleLower; ++j) {
      const double c = c_mlwn + (c_mlws - c_mlwn) * static_cast<double>(j) /
                                    static_cast<double>(kResampleLower);
      out.pairs.push_back({c, interpolate_elevation(profile.points, c)});
    }
  }
  return out;
}

/// Area between the profile line and the horizontal `datum_elevation_m`
/// line, integrated by trapezoids from the first pair to the first
/// downward datum crossing, or to the survey end when the profile never
/// descends to the datum.
inline double cross_sectional_area(const ResampledProfile& profile, double datum_elevation_m) {
  const auto& pts = profile.pairs;
  if (pts.size() < 2) throw ContractError("cross_sectional_area: profile has too few pairs");
  double max_elev = pts.front().elevation_m;
  for (const auto& p : pts) max_elev = std::max(max_elev, p.elevation_m);
  if (datum_elevation_m >= max_elev) {
    throw DomainError("datum " + std::to_string(datum_elevation_m) +
                      " is not below the profile's maximum elevation " +
                      std::to_string(max_elev));
  }
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double h0 = pts[i].elevation_m - datum_elevation_m;
    const double h1 = pts[i + 1].elevation_m - datum_elevation_m;
    const double w = pts[i + 1].chainage_m - pts[i].chainage_m;
    if (h0 == 0.0) break;
    if (h0 > 0.0 && h1 < 0.0) {
      const double t = h0 / (h0 - h1);  // fraction of the segment above the datum
      area += 0.5 * h0 * (t * w);
      return area;
    }
    area += 0.5 * (h0 + h1) * w;
    if (h1 == 0.0) break;
  }
  return area;
}

}  // namespace topoformer
