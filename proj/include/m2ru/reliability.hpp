#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "m2ru/errors.hpp"
#include "m2ru/tensor.hpp"

namespace m2ru {

inline constexpr double kSecondsPerYear = 365.25 * 24.0 * 3600.0;

enum class RateBasis { mean, top_decile, max };

inline const char* to_string(RateBasis b) {
  switch (b) {
    case RateBasis::mean: return "mean";
    case RateBasis::top_decile: return "top_decile";
    case RateBasis::max: return "max";
  }
  return "?";
}

inline RateBasis rate_basis_from_string(const std::string& s) {
  if (s == "mean") return RateBasis::mean;
  if (s == "top_decile") return RateBasis::top_decile;
  if (s == "max") return RateBasis::max;
  throw ConfigError("unknown rate basis '" + s + "' (expected mean, top_decile or max)");
}

struct EnduranceProjection {
  double update_rate_hz = 1000.0;  // one learning update per millisecond
  double endurance_limit = 1e9;
  double horizon_years = 10.0;     // deployment time the overstress fraction refers to
  RateBasis basis = RateBasis::top_decile;
};

struct CdfPoint {
  std::uint64_t writes;
  double fraction;  // fraction of devices with at most `writes` writes
};

struct WriteStats {
  std::vector<std::uint64_t> counts;  // one entry per device, array order
  std::uint64_t updates = 0;          // learning updates the counts were accumulated over
  double mean = 0.0;
  std::vector<CdfPoint> cdf;
  double overstress_fraction = 0.0;
};

inline std::vector<CdfPoint> empirical_cdf(std::vector<std::uint64_t> sorted) {
  std::sort(sorted.begin(), sorted.end());
  std::vector<CdfPoint> cdf;
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
    cdf.push_back({sorted[i], static_cast<double>(i + 1) / n});
  }
  return cdf;
}

// Flattens the counters, computes their CDF and the fraction of devices that
// would reach the endurance limit within the projection horizon at their
// observed per-update write rate.
inline WriteStats collect_write_stats(std::span<const CountGrid* const> grids, std::uint64_t updates,
                                      const EnduranceProjection& proj = {}) {
  if (grids.empty()) throw ConfigError("collect_write_stats needs at least one array");
  WriteStats s;
  s.updates = updates;
  for (const CountGrid* g : grids) s.counts.insert(s.counts.end(), g->counts.begin(), g->counts.end());
  if (s.counts.empty()) throw ConfigError("arrays hold no devices");
  long double total = 0;
  for (auto c : s.counts) total += c;
  s.mean = static_cast<double>(total / s.counts.size());
  s.cdf = empirical_cdf(s.counts);
  if (updates > 0) {
    const double horizon_updates = proj.horizon_years * kSecondsPerYear * proj.update_rate_hz;
    std::size_t over = 0;
    for (auto c : s.counts) {
      const double rate = static_cast<double>(c) / static_cast<double>(updates);
      if (rate * horizon_updates >= proj.endurance_limit) ++over;
    }
    s.overstress_fraction = static_cast<double>(over) / static_cast<double>(s.counts.size());
  }
  return s;
}

inline WriteStats collect_write_stats(std::initializer_list<std::reference_wrapper<const CountGrid>> grids,
                                      std::uint64_t updates, const EnduranceProjection& proj = {}) {
  std::vector<const CountGrid*> ptrs;
  for (const auto& g : grids) ptrs.push_back(&g.get());
  return collect_write_stats(std::span<const CountGrid* const>(ptrs), updates, proj);
}

struct LifespanEstimate {
  double update_rate_hz = 0.0;
  double endurance_limit = 0.0;
  double writes_per_device_per_update = 0.0;
  double seconds = 0.0;
  double years = 0.0;
  bool unbounded = false;  // no writes observed
};

inline double basis_writes(const WriteStats& s, RateBasis basis) {
  std::vector<std::uint64_t> sorted = s.counts;
  std::sort(sorted.begin(), sorted.end());
  switch (basis) {
    case RateBasis::mean: return s.mean;
    case RateBasis::max: return static_cast<double>(sorted.back());
    case RateBasis::top_decile: {
      const std::size_t n = std::max<std::size_t>(1, (sorted.size() + 9) / 10);
      long double sum = 0;
      for (std::size_t i = sorted.size() - n; i < sorted.size(); ++i) sum += sorted[i];
      return static_cast<double>(sum / n);
    }
  }
  return s.mean;
}

// Years until the basis device reaches the endurance limit.
inline LifespanEstimate project_lifespan(const WriteStats& s, double update_rate_hz,
                                         double endurance_limit,
                                         RateBasis basis = RateBasis::top_decile) {
  if (!(update_rate_hz > 0.0)) throw ConfigError("update rate must be positive");
  if (!(endurance_limit > 0.0)) throw ConfigError("endurance limit must be positive");
  if (s.counts.empty()) throw ConfigError("no write statistics");
  LifespanEstimate e;
  e.update_rate_hz = update_rate_hz;
  e.endurance_limit = endurance_limit;
  const double writes = basis_writes(s, basis);
  if (s.updates == 0 || writes == 0.0) {
    e.unbounded = true;
    e.seconds = e.years = std::numeric_limits<double>::infinity();
    return e;
  }
  e.writes_per_device_per_update = writes / static_cast<double>(s.updates);
  e.seconds = endurance_limit / (e.writes_per_device_per_update * update_rate_hz);
  e.years = e.seconds / kSecondsPerYear;
  return e;
}

struct SparsificationReport {
  double mean_before = 0.0;
  double mean_after = 0.0;
  double mean_reduction_pct = 0.0;  // 100 * (1 - after / before)
  double overstress_before = 0.0;
  double overstress_after = 0.0;
  LifespanEstimate lifespan_before;
  LifespanEstimate lifespan_after;
  std::vector<CdfPoint> cdf_before;
  std::vector<CdfPoint> cdf_after;
};

// `before` and `after` are the same workload without and with sparsification.
inline SparsificationReport sparsification_comparison(const WriteStats& before,
                                                      const WriteStats& after,
                                                      const EnduranceProjection& proj = {}) {
  if (before.counts.size() != after.counts.size()) {
    throw ConsistencyError("runs have different device counts (" +
                           std::to_string(before.counts.size()) + " vs " +
                           std::to_string(after.counts.size()) + ")");
  }
  SparsificationReport r;
  r.mean_before = before.mean;
  r.mean_after = after.mean;
  r.mean_reduction_pct = before.mean > 0.0 ? 100.0 * (1.0 - after.mean / before.mean) : 0.0;
  r.overstress_before = before.overstress_fraction;
  r.overstress_after = after.overstress_fraction;
  r.lifespan_before = project_lifespan(before, proj.update_rate_hz, proj.endurance_limit, proj.basis);
  r.lifespan_after = project_lifespan(after, proj.update_rate_hz, proj.endurance_limit, proj.basis);
  r.cdf_before = before.cdf;
  r.cdf_after = after.cdf;
  return r;
}

}  // namespace m2ru
