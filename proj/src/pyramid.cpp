// SPDX-License-Identifier: Apache-2.0

#include "fddiff/pyramid.hpp"

#include <algorithm>
#include <cstdint>
#include <string>

#include "fddiff/errors.hpp"

namespace fddiff {

void PyramidSpec::validate() const {
  if (p < 1 || p > 6) throw ConfigError("p must be in [1, 6], got " + std::to_string(p));
  if (T < 2) throw ConfigError("timesteps must be >= 2, got " + std::to_string(T));
}

namespace {

// ceil(T * sqrt(k) / 2^p) in exact integer arithmetic.
std::int64_t ceil_scaled_sqrt(std::int64_t T, std::int64_t k, int p) {
  const std::int64_t rhs = T * T * k;  // compare n^2 * 4^p >= T^2 * k
  std::int64_t n = 0, hi = T;
  while (n < hi) {
    const std::int64_t mid = (n + hi) / 2;
    if ((mid * mid) << (2 * p) >= rhs)
      hi = mid;
    else
      n = mid + 1;
  }
  return n;
}

}  // namespace

ScheduleTable::ScheduleTable(PyramidSpec spec) : spec_(spec) {
  spec_.validate();
  const int M = spec_.band_total(), T = spec_.T;

  // τ_m = ⌊T(1 − √((m−1)/4^p))⌋, floored at 1 so that t = 1 always carries the
  // full-band state.
  tau_.assign(M + 2, 0);
  for (int m = 1; m <= M; ++m)
    tau_[m] = std::max<int>(1, T - int(ceil_scaled_sqrt(T, m - 1, spec_.p)));
  tau_[M + 1] = 0;

  band_count_.assign(T + 1, 0);
  stage_.assign(T + 1, 0);
  gamma_.assign(T + 1, 1);
  lo_.assign(T + 1, 0);
  hi_.assign(T + 1, 0);
  finer_.assign(T + 1, M);
  noise_mult_.assign(T + 1, 1.0);

  for (int t = 1; t <= T; ++t) {
    int m = 1;
    while (m < M && tau_[m + 1] >= t) ++m;
    band_count_[t] = m;
    lo_[t] = tau_[m + 1];
    hi_[t] = tau_[m];
    stage_[t] = stage_for_band_count(m);
    noise_mult_[t] = 1.0 / double(1 << (2 * stage_[t]));
  }
  for (int t = 1; t <= T; ++t) {
    const int m = band_count_[t];
    finer_[t] = m == M ? M : band_count_[lo_[t]];
    if (t >= 2) gamma_[t] = 1 << (stage_[t - 1] - stage_[t]);
  }
  for (int m = 1; m <= M; ++m)
    if (tau_[m + 1] < tau_[m]) intervals_.push_back({m, tau_[m + 1], tau_[m]});
}

int ScheduleTable::check(int t) const {
  if (t < 1 || t > spec_.T)
    throw ArgumentError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(spec_.T) + "]");
  return t;
}

ScheduleTable build_schedule(const PyramidSpec& spec) { return ScheduleTable(spec); }

Image tilde(const Image& x, const PyramidSpec& spec, int band_count) {
  if (band_count < 1 || band_count > spec.band_total())
    throw ArgumentError("tilde: band count " + std::to_string(band_count) + " outside [1, " +
                        std::to_string(spec.band_total()) + "]");
  const auto coeffs = decompose(x, spec.p);
  return restore(lowpass_select(coeffs, band_count), stage_for_band_count(band_count));
}

DegradationPyramid::DegradationPyramid(const Image& x, const ScheduleTable& table) : table_(table) {
  const auto& spec = table_.spec();
  const auto coeffs = decompose(x, spec.p);
  anchors_.resize(spec.band_total() + 1);
  for (int m = 1; m < spec.band_total(); ++m)
    anchors_[m] = restore(lowpass_select(coeffs, m), stage_for_band_count(m));
  anchors_.back() = x;
}

DegradedState DegradationPyramid::degraded(int t) const {
  const int m = table_.band_count(t);
  if (m == table_.spec().band_total()) return {hr(), t, m};
  const int lo = table_.interval_lo(t), hi = table_.interval_hi(t);
  const Image& coarse = anchors_[m];
  const Image fine = rescale_dyadic(anchors_[table_.finer_band_count(t)],
                                    table_.stage(t) - stage_for_band_count(table_.finer_band_count(t)));
  if (t == hi) return {coarse, t, m};
  const float wf = float(hi - t) / float(hi - lo), wc = float(t - lo) / float(hi - lo);
  Image out(coarse.channels, coarse.height, coarse.width);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = wf * fine.data[i] + wc * coarse.data[i];
  return {std::move(out), t, m};
}

Image DegradationPyramid::target(int t) const {
  if (t < 2) throw ArgumentError("target: timestep must be >= 2");
  const int mf = table_.finer_band_count(t);
  return rescale_dyadic(anchors_[mf], table_.working_stage(t) - stage_for_band_count(mf));
}

Image DegradationPyramid::eta(int t) const {
  Image tgt = target(t);
  const Image cur = rescale_dyadic(degraded(t).image, table_.working_stage(t) - table_.stage(t));
  for (std::size_t i = 0; i < tgt.size(); ++i) tgt.data[i] -= cur.data[i];
  return tgt;
}

DegradedState degraded(const Image& x, const ScheduleTable& table, int t) {
  return DegradationPyramid(x, table).degraded(t);
}

Image eta(const Image& x, const ScheduleTable& table, int t) {
  return DegradationPyramid(x, table).eta(t);
}

}  // namespace fddiff
