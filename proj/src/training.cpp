// SPDX-License-Identifier: Apache-2.0

#include "fddiff/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "fddiff/errors.hpp"
#include "fddiff/metrics.hpp"
#include "fddiff/png_io.hpp"
#include "fddiff/rng.hpp"

namespace fddiff {

namespace {

// RNG stream tags.
constexpr std::uint64_t kTrainStream = 0x7472;
constexpr std::uint64_t kCropStream = 0x6372;
constexpr std::uint64_t kEvalStream = 0x6576;

Image crop(const Image& img, int y0, int x0, int size) {
  Image out(img.channels, size, size);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

std::vector<std::uint64_t> dims_of(const nn::Param<float>& p) {
  return {p.shape.begin(), p.shape.end()};
}

const Checkpoint::Entry& require_entry(const Checkpoint& ckpt, const std::string& name,
                                       const std::vector<std::uint64_t>& dims) {
  const auto* e = ckpt.find(name);
  if (!e) throw DataError("checkpoint lacks entry '" + name + "'");
  if (e->dims != dims) throw DataError("checkpoint entry '" + name + "' has mismatched dims");
  return *e;
}

}  // namespace

void TrainConfig::validate() const {
  spec.validate();
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("beta1/beta2 must lie in [0,1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be nonnegative");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be nonnegative");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (steps < 0) throw ConfigError("steps must be nonnegative");
  if (eval_every < 0) throw ConfigError("eval_every must be nonnegative");
  if (patch < 0 || patch % spec.factor() != 0)
    throw ConfigError("patch must be a nonnegative multiple of 2^p");
  if (!(loss.weight_cap > 0)) throw ConfigError("weight_cap must be positive");
  if (!(loss.eps_weight >= 0)) throw ConfigError("eps_weight must be nonnegative");
  resolved_model().validate();
}

DenoiserConfig TrainConfig::resolved_model() const {
  DenoiserConfig m = model;
  m.p = spec.p;
  m.timesteps = spec.T;
  m.seed = seed;
  return m;
}

std::vector<NamedImage> load_dataset(const DatasetSpec& spec, int patch, std::ostream* warn) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(spec.root, ec)) throw DataError("dataset root is not a directory: " + spec.root.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(spec.root)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return char(std::tolower(ch)); });
    if (ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  Rng order = make_rng(spec.shuffle_seed);
  std::shuffle(files.begin(), files.end(), order);

  std::vector<NamedImage> items;
  for (std::size_t i = 0; i < files.size(); ++i) {
    Image img;
    try {
      img = read_png(files[i]);
    } catch (const DataError& e) {
      if (warn) *warn << "warning: skipping " << files[i].string() << ": " << e.what() << "\n";
      continue;
    }
    if (patch > 0) {
      if (img.height < patch || img.width < patch) {
        if (warn) *warn << "warning: skipping " << files[i].string() << ": smaller than patch " << patch << "\n";
        continue;
      }
      Rng rng = make_rng(spec.shuffle_seed, {kCropStream, std::uint64_t(i)});
      const int y0 = uniform_int(rng, 0, img.height - patch);
      const int x0 = uniform_int(rng, 0, img.width - patch);
      img = crop(img, y0, x0, patch);
    }
    items.push_back({files[i].filename().string(), std::move(img)});
  }
  if (items.empty()) throw DataError("no usable PNG images under " + spec.root.string());
  return items;
}

DatasetSplit split_dataset(std::vector<NamedImage> items, double eval_fraction) {
  if (!(eval_fraction > 0 && eval_fraction < 1)) throw ConfigError("eval_fraction must lie in (0,1)");
  const std::size_t n = items.size();
  const std::size_t n_eval = std::max<std::size_t>(1, std::size_t(std::llround(double(n) * eval_fraction)));
  if (n_eval >= n) throw DataError("dataset too small to give both splits an image");
  DatasetSplit split;
  split.eval.assign(std::make_move_iterator(items.begin()), std::make_move_iterator(items.begin() + long(n_eval)));
  split.train.assign(std::make_move_iterator(items.begin() + long(n_eval)), std::make_move_iterator(items.end()));
  return split;
}

std::pair<Image, Image> make_pair(const Image& x, const PyramidSpec& spec) {
  spec.validate();
  if (x.height % spec.factor() || x.width % spec.factor())
    throw DimensionError("make_pair: image not divisible by 2^p");
  return {x, block_average(x, spec.factor())};
}

// ---------------------------------------------------------------------------

AdamW::AdamW(double lr, double beta1, double beta2, double weight_decay, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), wd_(weight_decay), eps_(eps) {}

void AdamW::update(nn::ParamStore<float>& params, std::uint64_t step) {
  auto& entries = params.entries();
  if (m_.size() != entries.size()) {
    m_.assign(entries.size(), {});
    v_.assign(entries.size(), {});
  }
  const double c1 = 1.0 - std::pow(beta1_, double(step));
  const double c2 = 1.0 - std::pow(beta2_, double(step));
  const float b1 = float(beta1_), b2 = float(beta2_);
  const float step_size = float(lr_ / c1), inv_c2 = float(1.0 / c2);
  const float decay = float(lr_ * wd_), eps = float(eps_);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& p = entries[k];
    auto& m = m_[k];
    auto& v = v_[k];
    m.resize(p.size(), 0.0f);
    v.resize(p.size(), 0.0f);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float g = p.grad[i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      p.value[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps) + decay * p.value[i];
    }
  }
}

// ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig config, std::vector<Image> train_images)
    : config_(std::move(config)),
      images_(std::move(train_images)),
      table_(config_.spec),
      sched_(alpha_schedule(config_.spec.T)) {
  config_.validate();
  if (images_.empty()) throw DataError("training set is empty");
  for (const auto& img : images_) {
    const int f = config_.spec.factor();
    if (config_.patch > 0) {
      if (img.height < config_.patch || img.width < config_.patch)
        throw DataError("training image smaller than patch");
    } else if (img.height % f || img.width % f) {
      throw ConfigError("training image not divisible by 2^p");
    }
  }
  net_ = std::make_shared<UNet<float>>(config_.resolved_model());
  optimizer_ = AdamW(config_.learning_rate, config_.beta1, config_.beta2, config_.weight_decay, config_.adam_eps);
  const auto& entries = net_->params().entries();
  optimizer_.first_moment().assign(entries.size(), {});
  optimizer_.second_moment().assign(entries.size(), {});
  for (std::size_t k = 0; k < entries.size(); ++k) {
    optimizer_.first_moment()[k].assign(entries[k].size(), 0.0f);
    optimizer_.second_moment()[k].assign(entries[k].size(), 0.0f);
  }
}

StepLog Trainer::step() {
  Rng rng = make_rng(config_.seed, {kTrainStream, step_});
  const int n = int(images_.size());
  std::vector<int> indices;
  std::vector<DegradationPyramid> pyramids;
  pyramids.reserve(std::size_t(config_.batch_size));
  for (int b = 0; b < config_.batch_size; ++b) {
    const int idx = uniform_int(rng, 0, n - 1);
    indices.push_back(idx);
    const Image& img = images_[std::size_t(idx)];
    if (config_.patch > 0) {
      const int y0 = uniform_int(rng, 0, img.height - config_.patch);
      const int x0 = uniform_int(rng, 0, img.width - config_.patch);
      pyramids.emplace_back(crop(img, y0, x0, config_.patch), table_);
    } else {
      pyramids.emplace_back(img, table_);
    }
  }
  std::vector<const DegradationPyramid*> batch;
  for (const auto& pyr : pyramids) batch.push_back(&pyr);

  net_->params().zero_grad();
  const LossResult res = training_loss<float>(std::span<const DegradationPyramid* const>(batch), *net_, sched_,
                                              config_.loss, rng);
  if (!std::isfinite(res.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << step_ + 1 << "; batch indices:";
    for (int i : indices) msg << ' ' << i;
    msg << "; t:";
    for (int t : res.timesteps) msg << ' ' << t;
    throw NumericError(msg.str());
  }

  double sq = 0;
  for (const auto& p : net_->params().entries())
    for (float g : p.grad) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(step_ + 1));
  if (config_.grad_clip > 0 && norm > config_.grad_clip) {
    const float scale = float(config_.grad_clip / norm);
    for (auto& p : net_->params().entries())
      for (float& g : p.grad) g *= scale;
  }
  ++step_;
  optimizer_.update(net_->params(), step_);
  return {step_, res.loss, res.clipped_fraction, norm};
}

Checkpoint Trainer::checkpoint(std::string config_text) const {
  Checkpoint ckpt;
  ckpt.config_text = std::move(config_text);
  ckpt.step = step_;
  const auto& entries = net_->params().entries();
  for (const auto& p : entries) ckpt.entries.push_back({p.name, dims_of(p), p.value});
  for (std::size_t k = 0; k < entries.size(); ++k)
    ckpt.entries.push_back({"adam.m/" + entries[k].name, dims_of(entries[k]), optimizer_.first_moment()[k]});
  for (std::size_t k = 0; k < entries.size(); ++k)
    ckpt.entries.push_back({"adam.v/" + entries[k].name, dims_of(entries[k]), optimizer_.second_moment()[k]});
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  auto& entries = net_->params().entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& p = entries[k];
    const auto dims = dims_of(p);
    p.value = require_entry(ckpt, p.name, dims).values;
    optimizer_.first_moment()[k] = require_entry(ckpt, "adam.m/" + p.name, dims).values;
    optimizer_.second_moment()[k] = require_entry(ckpt, "adam.v/" + p.name, dims).values;
  }
  step_ = ckpt.step;
}

std::shared_ptr<UNet<float>> load_network(const Checkpoint& ckpt, const DenoiserConfig& config) {
  auto net = std::make_shared<UNet<float>>(config);
  for (auto& p : net->params().entries()) p.value = require_entry(ckpt, p.name, dims_of(p)).values;
  return net;
}

// ---------------------------------------------------------------------------

EvalReport evaluate(const DenoiserProvider& provider, const std::vector<NamedImage>& images,
                    const SamplerConfig& sampler, const ScheduleTable& table, const NoiseSchedule& sched,
                    std::uint64_t seed) {
  const PyramidSpec& spec = table.spec();
  const int f = spec.factor();
  EvalReport report;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& hr = images[i].image;
    if (hr.height % f || hr.width % f)
      throw ConfigError("scale mismatch: " + images[i].name + " is not divisible by 2^p = " + std::to_string(f));
    const auto [x, y] = make_pair(hr, spec);
    auto denoiser = provider(x);
    Rng rng = make_rng(seed, {kEvalStream, std::uint64_t(i)});
    const Image sr = run_sampler(y, *denoiser, sampler, table, sched, rng);
    const Image base = upsample_nearest(y, f);
    const MetricReport m = compare(sr, x), b = compare(base, x);
    report.rows.push_back({images[i].name, m.psnr, m.ssim, b.psnr, b.ssim});
  }
  if (!report.rows.empty()) {
    const double n = double(report.rows.size());
    for (const auto& r : report.rows) {
      report.mean_psnr += r.psnr / n;
      report.mean_ssim += r.ssim / n;
      report.mean_psnr_baseline += r.psnr_baseline / n;
      report.mean_ssim_baseline += r.ssim_baseline / n;
    }
  }
  return report;
}

std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_metrics_csv(std::ostream& out, const EvalReport& report) {
  out << "image,psnr,ssim,psnr_baseline,ssim_baseline\n";
  for (const auto& r : report.rows)
    out << r.name << ',' << format_metric(r.psnr) << ',' << format_metric(r.ssim) << ','
        << format_metric(r.psnr_baseline) << ',' << format_metric(r.ssim_baseline) << '\n';
}

}  // namespace fddiff
