// SPDX-License-Identifier: Apache-2.0

// Multiscale frequency-refinement diffusion: noise schedule, latent sampling,
// the forward diagnostic simulator, the reverse chain and the training loss.

#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fddiff/denoiser.hpp"
#include "fddiff/errors.hpp"
#include "fddiff/image.hpp"
#include "fddiff/pyramid.hpp"
#include "fddiff/rng.hpp"

namespace fddiff {

/// α_t for t = 0..T with α_0 = α_1 = 1.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::vector<double> alpha);
  static NoiseSchedule constant(int T, double value);

  int T() const { return int(alpha_.size()) - 1; }
  double alpha(int t) const { return alpha_.at(t); }
  /// Signal-to-noise ratio α/(1−α); infinite at α = 1.
  double snr(int t) const;

 private:
  std::vector<double> alpha_;
};

/// Cosine schedule (offset 0.008) sampled so that t = 1 maps to the origin of
/// the cosine curve; per-step β is capped at 0.999.
NoiseSchedule alpha_schedule(int T);

enum class DivisorMode { exact, interval };
enum class DenominatorMode { sqrt, linear };

struct SamplerConfig {
  DivisorMode divisor_mode = DivisorMode::exact;
  DenominatorMode denominator_mode = DenominatorMode::sqrt;
  /// Ascending subset of [1, T]; empty means every timestep.
  std::vector<int> timestep_subsequence;
  /// false: re-inject ε̂ instead of fresh noise (deterministic chain).
  bool stochastic = true;
  /// Optional clamp of the denoised estimate, e.g. {−0.5, 1.5}.
  std::optional<std::pair<float, float>> estimate_range;
  // Project each refined estimate so its 2^s block means equal y (exact for
  // the oracle, where every x̂_t already pools to y).
  bool lowpass_consistency = true;
};

struct Latent {
  Image u;
  int t = 0;
  int stage = 0;
};

/// √((1−α_t)·v(t)), the per-pixel noise standard deviation of u_t.
double noise_sigma(const NoiseSchedule& sched, const ScheduleTable& table, int t);

/// u_t = √α_t·x̂_t + √((1−α_t)v(t))·z. The drawn z is returned through `noise`.
Latent sample_latent(const DegradedState& xhat, const NoiseSchedule& sched, const ScheduleTable& table,
                     Rng& rng, Image* noise = nullptr);

/// Ground-truth inversion: ε̂ recovered from u_t and x̂_t, η̂ = η_t. The
/// prediction is at the working stage of step t → t−1.
DenoisePrediction oracle_predict(const Latent& u, const DegradationPyramid& pyramid,
                                 const NoiseSchedule& sched);

class OracleDenoiser : public Denoiser {
 public:
  OracleDenoiser(DegradationPyramid pyramid, NoiseSchedule sched)
      : pyramid_(std::move(pyramid)), sched_(std::move(sched)) {}
  DenoisePrediction predict(const Image& latent, const Image& y, int t, int stage) override;

 private:
  DegradationPyramid pyramid_;
  NoiseSchedule sched_;
};

/// One reverse move from u.t to `t_next` (default u.t − 1). The prediction
/// must be at table.working_stage(u.t).
Latent reverse_step(const Latent& u, const DenoisePrediction& pred, const SamplerConfig& cfg,
                    const NoiseSchedule& sched, const ScheduleTable& table, Rng& rng, int t_next = -1,
                    const Image* lr = nullptr);

/// Descending list of timesteps visited by the sampler, ending at 1.
std::vector<int> sampling_timesteps(const SamplerConfig& cfg, const ScheduleTable& table);

/// Ascending subsequence with about `steps` evenly spaced entries, plus the
/// scale-change timesteps so that no jump crosses a change of stage.
std::vector<int> make_subsequence(const ScheduleTable& table, int steps);

using LatentObserver = std::function<void(const Latent&)>;

/// Runs the reverse chain from u_T (noised LR) to t = 1 and clamps to [0,1].
Image run_sampler(const Image& y, Denoiser& denoiser, const SamplerConfig& cfg, const ScheduleTable& table,
                  const NoiseSchedule& sched, Rng& rng, const LatentObserver& observer = {});

/// Forward recursion u_t from u_{t−1}; trajectory index t−1 holds u_t. A null
/// rng runs it noiseless.
std::vector<Latent> forward_simulate(const Image& x, const ScheduleTable& table, const NoiseSchedule& sched,
                                     DivisorMode divisor, Rng* rng);

// ---------------------------------------------------------------------------
// Training objective

struct LossConfig {
  double weight_cap = 5.0;
  bool clip_weight = true;
  /// Weight of the auxiliary L1 term on ε̂; 0 gives the bare objective.
  double eps_weight = 1.0;
  DenominatorMode denominator_mode = DenominatorMode::sqrt;
};

struct LossResult {
  double loss = 0.0;
  double clipped_fraction = 0.0;
  std::vector<int> timesteps;
};

/// Draws one timestep per item (interval uniformly among the trainable
/// nonempty ones, then t uniformly inside it), forms u_t, and evaluates
/// clip(α/(1−α))·mean|x̂_est + η̂ − x̃_f| + eps_weight·mean|ε̂ − z|, averaged
/// over the batch. With accumulate=true the model's gradients receive
/// ∂loss/∂θ.
///
/// `Model` needs forward(latent, y, t, stage) -> Prediction<Real> and
/// backward(d_eps, d_eta).
template <typename Real, typename Model>
LossResult training_loss(std::span<const DegradationPyramid* const> batch, Model& model,
                         const NoiseSchedule& sched, const LossConfig& cfg, Rng& rng, bool accumulate = true) {
  LossResult result;
  if (batch.empty()) return result;
  const Real inv_b = Real(1) / Real(batch.size());
  int clipped = 0;
  for (const DegradationPyramid* item : batch) {
    const ScheduleTable& table = item->table();
    std::vector<ScheduleTable::Interval> usable;
    for (const auto& iv : table.intervals())
      if (iv.hi >= 2) usable.push_back(iv);
    const auto& iv = usable[uniform_int(rng, 0, int(usable.size()) - 1)];
    const int t = uniform_int(rng, std::max(iv.lo + 1, 2), iv.hi);
    result.timesteps.push_back(t);

    const int st = table.stage(t), ws = table.working_stage(t);
    const double a = sched.alpha(t);
    const Real sigma = Real(noise_sigma(sched, table, t));
    const Real den = Real(cfg.denominator_mode == DenominatorMode::sqrt ? std::sqrt(a) : a);

    Tensor3<Real> xhat = item->degraded(t).image.template cast<Real>();
    Tensor3<Real> z(xhat.channels, xhat.height, xhat.width);
    fill_normal(z, rng);
    Tensor3<Real> u(xhat.channels, xhat.height, xhat.width);
    for (std::size_t i = 0; i < u.size(); ++i) u.data[i] = Real(std::sqrt(a)) * xhat.data[i] + sigma * z.data[i];
    const Tensor3<Real> w = rescale_dyadic(u, ws - st);
    const Tensor3<Real> zw = rescale_dyadic(z, ws - st);
    const Tensor3<Real> y = item->lr().template cast<Real>();
    const Tensor3<Real> target = item->target(t).template cast<Real>();

    Prediction<Real> pred = model.forward(w, y, t, ws);
    if (!pred.eps_hat.same_shape(w) || !pred.eta_hat.same_shape(w))
      throw ConsistencyError("training_loss: prediction shape differs from the working latent");

    double weight = a / (1.0 - a);
    if (cfg.clip_weight && weight > cfg.weight_cap) {
      weight = cfg.weight_cap;
      ++clipped;
    }
    const std::size_t n = w.size();
    const Real inv_n = Real(1) / Real(n);
    Tensor3<Real> d_eps(w.channels, w.height, w.width), d_eta(w.channels, w.height, w.width);
    Real rec = 0, aux = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Real est = (w.data[i] - sigma * pred.eps_hat.data[i]) / den;
      const Real r = est + pred.eta_hat.data[i] - target.data[i];
      const Real e = pred.eps_hat.data[i] - zw.data[i];
      rec += std::abs(r);
      aux += std::abs(e);
      const Real gr = Real(weight) * Real((r > 0) - (r < 0)) * inv_n * inv_b;
      d_eta.data[i] = gr;
      d_eps.data[i] = -sigma / den * gr + Real(cfg.eps_weight) * Real((e > 0) - (e < 0)) * inv_n * inv_b;
    }
    result.loss += double(weight) * double(rec * inv_n) + cfg.eps_weight * double(aux * inv_n);
    if (accumulate) model.backward(d_eps, d_eta);
  }
  result.loss /= double(batch.size());
  result.clipped_fraction = double(clipped) / double(batch.size());
  return result;
}

}  // namespace fddiff
