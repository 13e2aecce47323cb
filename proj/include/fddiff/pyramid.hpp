// SPDX-License-Identifier: Apache-2.0

// Frequency degradation pyramid: the band-count schedule over T timesteps,
// the degraded states x̂_t that interpolate between wavelet-packet lowpass
// anchors, and the refinement targets η_t.

#pragma once

#include <vector>

#include "fddiff/image.hpp"
#include "fddiff/wpt.hpp"

namespace fddiff {

struct PyramidSpec {
  int p = 1;   // upscaling factor is 2^p
  int T = 16;  // timesteps 1..T

  int band_total() const { return 1 << (2 * p); }
  int factor() const { return 1 << p; }
  void validate() const;
};

/// Per-timestep bookkeeping. Vectors indexed by t are sized T+1 (index 0 unused);
/// `tau` is indexed by band count m and sized 4^p+2 with tau[4^p+1] = 0.
class ScheduleTable {
 public:
  explicit ScheduleTable(PyramidSpec spec);

  const PyramidSpec& spec() const { return spec_; }
  int T() const { return spec_.T; }

  int tau(int m) const { return tau_.at(m); }
  const std::vector<int>& taus() const { return tau_; }

  int band_count(int t) const { return band_count_.at(check(t)); }
  int stage(int t) const { return stage_.at(check(t)); }
  /// Integer pooling factor between x̂_{t-1} and x̂_t (1 except at stage drops).
  int gamma(int t) const { return gamma_.at(check(t)); }
  /// Spatial stage of the step t → t−1, i.e. stage(t−1).
  int working_stage(int t) const { return t >= 2 ? stage(t - 1) : stage(t); }
  double noise_mult(int t) const { return noise_mult_.at(check(t)); }
  /// Interval (lo, hi] = (τ_{m+1}, τ_m] owning t.
  int interval_lo(int t) const { return lo_.at(check(t)); }
  int interval_hi(int t) const { return hi_.at(check(t)); }
  /// Band count of the finer anchor reached at interval_lo(t).
  int finer_band_count(int t) const { return finer_.at(check(t)); }
  bool is_full_band(int t) const { return band_count(t) == spec_.band_total(); }

  /// Nonempty intervals as (m, lo, hi), coarse to fine.
  struct Interval {
    int m, lo, hi;
  };
  const std::vector<Interval>& intervals() const { return intervals_; }

  /// Spatial size of x̂_t for an HR image of the given size.
  int scaled(int hr_pixels, int t) const { return (hr_pixels >> spec_.p) << stage(t); }

 private:
  int check(int t) const;

  PyramidSpec spec_;
  std::vector<int> tau_;
  std::vector<int> band_count_, stage_, gamma_, lo_, hi_, finer_;
  std::vector<double> noise_mult_;
  std::vector<Interval> intervals_;
};

ScheduleTable build_schedule(const PyramidSpec& spec);

/// x̃_{p,m}: the lowest m subbands restored at stage ⌈log₄ m⌉.
Image tilde(const Image& x, const PyramidSpec& spec, int band_count);

struct DegradedState {
  Image image;
  int t = 0;
  int m = 0;
};

/// All anchors of one HR image; answers x̂_t and η_t without recomputing the
/// transform.
class DegradationPyramid {
 public:
  DegradationPyramid(const Image& x, const ScheduleTable& table);

  const ScheduleTable& table() const { return table_; }
  const Image& anchor(int band_count) const { return anchors_.at(band_count); }
  const Image& hr() const { return anchors_.back(); }
  const Image& lr() const { return anchors_.at(1); }

  DegradedState degraded(int t) const;
  /// Finer anchor of t's interval at the working stage of step t → t−1.
  Image target(int t) const;
  /// η_t = target(t) − x̂_t (x̂_t nearest-upsampled when the step changes scale).
  Image eta(int t) const;

 private:
  ScheduleTable table_;
  std::vector<Image> anchors_;  // index m = 1..4^p
};

DegradedState degraded(const Image& x, const ScheduleTable& table, int t);
Image eta(const Image& x, const ScheduleTable& table, int t);

}  // namespace fddiff
