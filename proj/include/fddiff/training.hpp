// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fddiff/checkpoint.hpp"
#include "fddiff/denoiser.hpp"
#include "fddiff/diffusion.hpp"
#include "fddiff/image.hpp"
#include "fddiff/pyramid.hpp"

namespace fddiff {

/// Desk-scale defaults. At full scale the same loop would run batch 64,
/// T = 1000 and 1M steps.
struct TrainConfig {
  PyramidSpec spec{1, 64};
  DenoiserConfig model;  // p, timesteps and seed are overridden by the pyramid and seed
  LossConfig loss;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  int batch_size = 16;
  int steps = 20000;
  int patch = 32;  // random training crop; 0 trains on whole images
  int eval_every = 0;
  std::uint64_t seed = 0;

  void validate() const;
  DenoiserConfig resolved_model() const;
};

struct DatasetSpec {
  std::filesystem::path root;
  double eval_fraction = 0.1;
  std::uint64_t shuffle_seed = 0;
};

struct NamedImage {
  std::string name;
  Image image;
};

/// PNGs under `root` (sorted by name, then shuffled by `shuffle_seed`), each
/// cropped to `patch`×`patch` at a seeded offset (patch 0 keeps the image).
/// Unreadable or undersized files are skipped with a warning on `warn`.
/// Throws DataError when nothing usable remains.
std::vector<NamedImage> load_dataset(const DatasetSpec& spec, int patch, std::ostream* warn = nullptr);

struct DatasetSplit {
  std::vector<NamedImage> train;
  std::vector<NamedImage> eval;
};

/// Leading round(n·eval_fraction) items (at least one) go to eval. Both
/// splits must be nonempty.
DatasetSplit split_dataset(std::vector<NamedImage> items, double eval_fraction);

/// (x, y) with y the block-average LR image, identical to x̂_T.
std::pair<Image, Image> make_pair(const Image& x, const PyramidSpec& spec);

/// Decoupled-weight-decay Adam over a float parameter store.
class AdamW {
 public:
  AdamW() = default;
  AdamW(double lr, double beta1, double beta2, double weight_decay, double eps);

  /// One update with the store's current gradients; `step` is 1-based.
  void update(nn::ParamStore<float>& params, std::uint64_t step);

  std::vector<Buffer<float>>& first_moment() { return m_; }
  std::vector<Buffer<float>>& second_moment() { return v_; }
  const std::vector<Buffer<float>>& first_moment() const { return m_; }
  const std::vector<Buffer<float>>& second_moment() const { return v_; }

 private:
  double lr_ = 5e-4, beta1_ = 0.9, beta2_ = 0.999, wd_ = 0.01, eps_ = 1e-8;
  std::vector<Buffer<float>> m_, v_;
};

struct StepLog {
  std::uint64_t step = 0;
  double loss = 0.0;
  double clipped_fraction = 0.0;
  double grad_norm = 0.0;
};

/// Single-worker optimization loop. Step k draws its batch, crops and noise
/// from an RNG stream keyed by (seed, k) only, so a run restored from a
/// checkpoint at step k continues exactly as the uninterrupted run.
class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<Image> train_images);

  /// Runs step step_count()+1. Throws NumericError on a non-finite loss,
  /// naming the batch indices and timesteps.
  StepLog step();
  std::uint64_t step_count() const { return step_; }

  const TrainConfig& config() const { return config_; }
  UNet<float>& net() { return *net_; }
  std::shared_ptr<UNet<float>> shared_net() { return net_; }
  const ScheduleTable& table() const { return table_; }
  const NoiseSchedule& noise() const { return sched_; }

  /// Parameters, `adam.m/<name>`, `adam.v/<name>` and the step counter.
  Checkpoint checkpoint(std::string config_text) const;
  void restore(const Checkpoint& ckpt);

 private:
  TrainConfig config_;
  std::vector<Image> images_;
  ScheduleTable table_;
  NoiseSchedule sched_;
  std::shared_ptr<UNet<float>> net_;
  AdamW optimizer_;
  std::uint64_t step_ = 0;
};

/// Network weights from a checkpoint; every parameter of `config` must be
/// present with matching dims.
std::shared_ptr<UNet<float>> load_network(const Checkpoint& ckpt, const DenoiserConfig& config);

struct EvalRow {
  std::string name;
  double psnr = 0, ssim = 0, psnr_baseline = 0, ssim_baseline = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_psnr = 0, mean_ssim = 0, mean_psnr_baseline = 0, mean_ssim_baseline = 0;
};

/// Supplies the denoiser used for one HR image (the oracle needs the image;
/// a trained network ignores it).
using DenoiserProvider = std::function<std::shared_ptr<Denoiser>(const Image& hr)>;

/// Samples each image's LR counterpart, scores it and the nearest-neighbour
/// baseline against the HR image. Image i uses RNG stream (seed, i). Throws
/// ConfigError when an image is not divisible by 2^p.
EvalReport evaluate(const DenoiserProvider& provider, const std::vector<NamedImage>& images,
                    const SamplerConfig& sampler, const ScheduleTable& table, const NoiseSchedule& sched,
                    std::uint64_t seed);

/// `image,psnr,ssim,psnr_baseline,ssim_baseline`; infinite PSNR prints `inf`.
void write_metrics_csv(std::ostream& out, const EvalReport& report);

/// Decimal form used in CSV output: `inf` for +∞, otherwise 6 decimals.
std::string format_metric(double v);

}  // namespace fddiff
