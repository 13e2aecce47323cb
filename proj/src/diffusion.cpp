// SPDX-License-Identifier: Apache-2.0

#include "fddiff/diffusion.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <set>
#include <string>

namespace fddiff {

NoiseSchedule::NoiseSchedule(std::vector<double> alpha) : alpha_(std::move(alpha)) {
  if (alpha_.size() < 3) throw ArgumentError("NoiseSchedule: need alpha for t = 0..T with T >= 2");
}

NoiseSchedule NoiseSchedule::constant(int T, double value) {
  std::vector<double> a(T + 1, value);
  a[0] = a[1] = 1.0;
  return NoiseSchedule(std::move(a));
}

double NoiseSchedule::snr(int t) const {
  const double a = alpha(t);
  return a >= 1.0 ? std::numeric_limits<double>::infinity() : a / (1.0 - a);
}

NoiseSchedule alpha_schedule(int T) {
  if (T < 2) throw ConfigError("alpha_schedule: T must be >= 2");
  constexpr double s = 0.008;
  auto g = [](double u) {
    const double c = std::cos((u + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> a(T + 1, 1.0);
  for (int t = 2; t <= T; ++t) {
    const double u0 = double(t - 2) / double(T - 1), u1 = double(t - 1) / double(T - 1);
    const double beta = std::min(1.0 - g(u1) / g(u0), 0.999);
    a[t] = a[t - 1] * (1.0 - beta);
  }
  return NoiseSchedule(std::move(a));
}

double noise_sigma(const NoiseSchedule& sched, const ScheduleTable& table, int t) {
  return std::sqrt(std::max(0.0, 1.0 - sched.alpha(t)) * table.noise_mult(t));
}

Latent sample_latent(const DegradedState& xhat, const NoiseSchedule& sched, const ScheduleTable& table,
                     Rng& rng, Image* noise) {
  const int t = xhat.t;
  const float sa = float(std::sqrt(sched.alpha(t)));
  const float sigma = float(noise_sigma(sched, table, t));
  Image z(xhat.image.channels, xhat.image.height, xhat.image.width);
  fill_normal(z, rng);
  Latent out{Image(z.channels, z.height, z.width), t, table.stage(t)};
  for (std::size_t i = 0; i < z.size(); ++i) out.u.data[i] = sa * xhat.image.data[i] + sigma * z.data[i];
  if (noise) *noise = std::move(z);
  return out;
}

DenoisePrediction oracle_predict(const Latent& u, const DegradationPyramid& pyramid,
                                 const NoiseSchedule& sched) {
  const ScheduleTable& table = pyramid.table();
  const int t = u.t, ws = table.working_stage(t);
  const Image w = rescale_dyadic(u.u, ws - u.stage);
  const double sigma = noise_sigma(sched, table, t);
  DenoisePrediction pred{Image(w.channels, w.height, w.width), Image(w.channels, w.height, w.width)};
  if (sigma > 0.0) {
    const Image xhat = rescale_dyadic(pyramid.degraded(t).image, ws - u.stage);
    const double sa = std::sqrt(sched.alpha(t));
    for (std::size_t i = 0; i < w.size(); ++i)
      pred.eps_hat.data[i] = float((double(w.data[i]) - sa * double(xhat.data[i])) / sigma);
  }
  if (t >= 2) pred.eta_hat = pyramid.eta(t);
  return pred;
}

DenoisePrediction OracleDenoiser::predict(const Image& latent, const Image& /*y*/, int t, int stage) {
  const ScheduleTable& table = pyramid_.table();
  if (stage != table.working_stage(t)) throw ConsistencyError("oracle: latent is not at the working stage");
  // the working latent is the state latent upsampled; pool it back exactly
  Latent u{rescale_dyadic(latent, table.stage(t) - stage), t, table.stage(t)};
  return oracle_predict(u, pyramid_, sched_);
}

Latent reverse_step(const Latent& u, const DenoisePrediction& pred, const SamplerConfig& cfg,
                    const NoiseSchedule& sched, const ScheduleTable& table, Rng& rng, int t_next,
                    const Image* lr) {
  const int t = u.t;
  if (t < 2) throw ArgumentError("reverse_step: t must be >= 2");
  const int tn = t_next < 0 ? t - 1 : t_next;
  if (tn < 1 || tn >= t) throw ArgumentError("reverse_step: target timestep must lie in [1, t)");
  if (u.stage != table.stage(t))
    throw ConsistencyError("reverse_step: latent stage " + std::to_string(u.stage) + " but table says " +
                           std::to_string(table.stage(t)) + " at t=" + std::to_string(t));
  const int ws = table.working_stage(t);
  const Image w = rescale_dyadic(u.u, ws - u.stage);
  if (!pred.eps_hat.same_shape(w) || !pred.eta_hat.same_shape(w))
    throw ConsistencyError("reverse_step: prediction shape differs from the working latent");

  const double a = sched.alpha(t);
  const double sigma = noise_sigma(sched, table, t);
  const double den = cfg.denominator_mode == DenominatorMode::sqrt ? std::sqrt(a) : a;
  const int lo = table.interval_lo(t), hi = table.interval_hi(t);
  const double d = cfg.divisor_mode == DivisorMode::exact ? double(t - lo) : double(hi - lo);
  const double frac = double(std::min(t - tn, t - lo)) / d;

  Image refined(w.channels, w.height, w.width);
  for (std::size_t i = 0; i < w.size(); ++i) {
    double v = (double(w.data[i]) - sigma * double(pred.eps_hat.data[i])) / den;
    if (cfg.estimate_range) v = std::clamp(v, double(cfg.estimate_range->first), double(cfg.estimate_range->second));
    refined.data[i] = float(v + frac * double(pred.eta_hat.data[i]));
  }
  if (cfg.lowpass_consistency && lr != nullptr) {
    // every x̂ pools to y; replace the estimate's block means with y
    Image gap = rescale_dyadic(refined, -ws);
    if (!gap.same_shape(*lr)) throw ConsistencyError("reverse_step: conditioning image has the wrong size");
    for (std::size_t i = 0; i < gap.size(); ++i) gap.data[i] = lr->data[i] - gap.data[i];
    const Image fix = rescale_dyadic(gap, ws);
    for (std::size_t i = 0; i < refined.size(); ++i) refined.data[i] += fix.data[i];
  }
  const int sn = table.stage(tn);
  refined = rescale_dyadic(refined, sn - ws);

  const double sa_n = std::sqrt(sched.alpha(tn));
  const double sigma_n = tn == 1 ? 0.0 : noise_sigma(sched, table, tn);
  Latent out{std::move(refined), tn, sn};
  if (sigma_n > 0.0) {
    Image z;
    if (cfg.stochastic) {
      z = Image(out.u.channels, out.u.height, out.u.width);
      fill_normal(z, rng);
    } else {
      z = rescale_dyadic(pred.eps_hat, sn - ws);
    }
    for (std::size_t i = 0; i < z.size(); ++i)
      out.u.data[i] = float(sa_n * double(out.u.data[i]) + sigma_n * double(z.data[i]));
  } else if (sa_n != 1.0) {
    for (auto& v : out.u.data) v = float(sa_n * double(v));
  }
  return out;
}

std::vector<int> sampling_timesteps(const SamplerConfig& cfg, const ScheduleTable& table) {
  const int T = table.T();
  std::vector<int> out;
  if (cfg.timestep_subsequence.empty()) {
    for (int t = T; t >= 1; --t) out.push_back(t);
    return out;
  }
  const auto& s = cfg.timestep_subsequence;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 1 || s[i] > T) throw ConfigError("subsequence: timestep " + std::to_string(s[i]) + " outside [1, T]");
    if (i > 0 && s[i] <= s[i - 1]) throw ConfigError("subsequence: must be strictly ascending");
  }
  if (s.back() != T) throw ConfigError("subsequence: must contain T = " + std::to_string(T));
  const int full = table.tau(table.spec().band_total());
  if (s.front() > full)
    throw ConfigError("subsequence: needs a timestep <= " + std::to_string(full) + " (full-band interval)");
  out.assign(s.rbegin(), s.rend());
  if (out.back() != 1) out.push_back(1);
  return out;
}

std::vector<int> make_subsequence(const ScheduleTable& table, int steps) {
  const int T = table.T();
  if (steps < 1) throw ConfigError("make_subsequence: steps must be positive");
  std::set<int> ts;
  for (int k = 1; k <= steps; ++k) ts.insert(std::max(1, int(std::lround(double(T) * k / steps))));
  for (int t = 2; t <= T; ++t)
    if (table.gamma(t) > 1) ts.insert(t);
  const int full = table.tau(table.spec().band_total());
  if (*ts.begin() > full) ts.insert(full);
  return {ts.begin(), ts.end()};
}

Image run_sampler(const Image& y, Denoiser& denoiser, const SamplerConfig& cfg, const ScheduleTable& table,
                  const NoiseSchedule& sched, Rng& rng, const LatentObserver& observer) {
  if (sched.T() != table.T()) throw ConfigError("run_sampler: noise schedule and table disagree on T");
  const auto steps = sampling_timesteps(cfg, table);
  const int T = table.T();
  Latent u{Image(y.channels, y.height, y.width), T, table.stage(T)};
  {
    Image z(y.channels, y.height, y.width);
    fill_normal(z, rng);
    const double sa = std::sqrt(sched.alpha(T)), sigma = noise_sigma(sched, table, T);
    for (std::size_t i = 0; i < z.size(); ++i) u.u.data[i] = float(sa * y.data[i] + sigma * z.data[i]);
  }
  if (observer) observer(u);
  for (std::size_t k = 0; k + 1 < steps.size(); ++k) {
    const int t = steps[k], ws = table.working_stage(t);
    const Image w = rescale_dyadic(u.u, ws - u.stage);
    const DenoisePrediction pred = denoiser.predict(w, y, t, ws);
    u = reverse_step(u, pred, cfg, sched, table, rng, steps[k + 1], &y);
    if (observer) observer(u);
  }
  return clamp01(std::move(u.u));
}

std::vector<Latent> forward_simulate(const Image& x, const ScheduleTable& table, const NoiseSchedule& sched,
                                     DivisorMode divisor, Rng* rng) {
  if (sched.T() != table.T()) throw ConfigError("forward_simulate: noise schedule and table disagree on T");
  const DegradationPyramid pyramid(x, table);
  std::vector<Latent> traj;
  traj.reserve(table.T());
  traj.push_back({x, 1, table.stage(1)});
  for (int t = 2; t <= table.T(); ++t) {
    const Latent& prev = traj.back();
    const double a = sched.alpha(t), ap = sched.alpha(t - 1);
    const int lo = table.interval_lo(t), hi = table.interval_hi(t);
    const double d = divisor == DivisorMode::exact ? double(t - lo) : double(hi - lo);
    const Image e = pyramid.eta(t);  // at stage(t−1), the scale of u_{t−1}
    Image pre(e.channels, e.height, e.width);
    const double c1 = std::sqrt(a / ap), c2 = std::sqrt(a) / d;
    for (std::size_t i = 0; i < pre.size(); ++i)
      pre.data[i] = float(c1 * double(prev.u.data[i]) - c2 * double(e.data[i]));
    Latent cur{rescale_dyadic(pre, table.stage(t) - table.stage(t - 1)), t, table.stage(t)};
    if (rng) {
      // previous state noiseless (α_{t−1} = 1): use the marginal variance directly
      const double ratio = ap < 1.0 ? (1.0 - a) / (1.0 - ap) : (1.0 - a);
      const double c3 = std::sqrt(std::max(0.0, ratio) * table.noise_mult(t));
      Image z(cur.u.channels, cur.u.height, cur.u.width);
      fill_normal(z, *rng);
      for (std::size_t i = 0; i < z.size(); ++i) cur.u.data[i] += float(c3 * double(z.data[i]));
    }
    traj.push_back(std::move(cur));
  }
  return traj;
}

}  // namespace fddiff
