// SPDX-License-Identifier: Apache-2.0

#include "fddiff/denoiser.hpp"

#include <algorithm>
#include <string>

#include "fddiff/errors.hpp"

namespace fddiff {

void DenoiserConfig::validate() const {
  if (p < 1) throw ConfigError("denoiser: p must be >= 1");
  if (int(channels.size()) != p + 1)
    throw ConfigError("denoiser: channels needs p+1 = " + std::to_string(p + 1) + " entries, got " +
                      std::to_string(channels.size()));
  for (int c : channels)
    if (c <= 0) throw ConfigError("denoiser: channel widths must be positive");
  for (int d : attention_depths)
    if (d < 0 || d > p) throw ConfigError("denoiser: attention depth " + std::to_string(d) + " out of range");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
    throw ConfigError("denoiser: time_embed_dim must be a positive even number");
  if (norm_groups < 1) throw ConfigError("denoiser: norm_groups must be positive");
  if (timesteps < 2) throw ConfigError("denoiser: timesteps must be >= 2");
}

std::vector<int> DenoiserConfig::resolved_attention() const {
  if (attention_depths.empty()) return {p};
  return attention_depths;
}

template <typename Real>
UNet<Real>::UNet(const DenoiserConfig& config) : config_(config) {
  config_.validate();
  const int p = config_.p, td = config_.time_embed_dim, g = config_.norm_groups;
  const auto& ch = config_.channels;
  Rng rng = make_rng(config_.seed, {0x756e6574});

  time1_ = nn::Linear<Real>(store_, "time.lin1", td, td, rng);
  time2_ = nn::Linear<Real>(store_, "time.lin2", td, td, rng);

  for (int q = 0; q <= p; ++q) {
    const int e = p - q;
    const std::string n = "stage" + std::to_string(q);
    in_adapters_.emplace_back(store_, n + ".in", 2 * latent_channels_, ch[e], 1, rng);
    out_norms_.emplace_back(store_, n + ".out_norm", ch[e], g);
    out_acts_.emplace_back();
    out_adapters_.emplace_back(store_, n + ".out", ch[e], 2 * latent_channels_, 1, rng, 0.0);
  }

  const auto attn = config_.resolved_attention();
  levels_.resize(p + 1);
  for (int d = 0; d <= p; ++d) {
    auto& L = levels_[d];
    const std::string n = "depth" + std::to_string(d);
    L.enc1 = nn::ResBlock<Real>(store_, n + ".enc1", ch[d], ch[d], td, g, rng);
    L.enc2 = nn::ResBlock<Real>(store_, n + ".enc2", ch[d], ch[d], td, g, rng);
    L.attention = std::find(attn.begin(), attn.end(), d) != attn.end();
    if (L.attention) L.enc_attn = nn::SelfAttention<Real>(store_, n + ".enc_attn", ch[d], g, rng);
    if (d < p) L.down = nn::Conv2d<Real>(store_, n + ".down", ch[d], ch[d + 1], 1, rng);
  }
  for (int d = p; d >= 0; --d) {
    auto& L = levels_[d];
    const std::string n = "depth" + std::to_string(d);
    L.dec1 = nn::ResBlock<Real>(store_, n + ".dec1", d == p ? ch[d] : 2 * ch[d], ch[d], td, g, rng);
    L.dec2 = nn::ResBlock<Real>(store_, n + ".dec2", ch[d], ch[d], td, g, rng);
    if (L.attention) L.dec_attn = nn::SelfAttention<Real>(store_, n + ".dec_attn", ch[d], g, rng);
    if (d > 0) L.up = nn::Conv2d<Real>(store_, n + ".up", ch[d], ch[d - 1], 3, rng);
  }
}

template <typename Real>
Prediction<Real> UNet<Real>::forward(const Tensor3<Real>& latent, const Tensor3<Real>& y, int t,
                                     int stage) {
  const int p = config_.p;
  if (stage < 0 || stage > p) throw ConsistencyError("denoiser: stage " + std::to_string(stage) + " out of range");
  if (latent.channels != latent_channels_ || y.channels != latent_channels_)
    throw ConsistencyError("denoiser: expected 3-channel latent and conditioning image");
  if (latent.height != (y.height << stage) || latent.width != (y.width << stage))
    throw ConsistencyError("denoiser: latent " + std::to_string(latent.height) + "x" +
                           std::to_string(latent.width) + " is not LR·2^" + std::to_string(stage));
  stage_ = stage;
  entry_ = p - stage;

  const double ts = double(t) * 1000.0 / double(config_.timesteps);
  const auto base = nn::sinusoidal_embedding(ts, config_.time_embed_dim);
  Buffer<Real> e0(base.begin(), base.end());
  temb_ = temb_act_.forward(time2_.forward(time_act_.forward(time1_.forward(e0))));

  Tensor3<Real> h = in_adapters_[stage].forward(concat_channels(latent, upsample_nearest(y, 1 << stage)));
  std::vector<Tensor3<Real>> skips(p + 1);
  for (int d = entry_; d <= p; ++d) {
    auto& L = levels_[d];
    h = L.enc2.forward(L.enc1.forward(h, temb_), temb_);
    if (L.attention) h = L.enc_attn.forward(h);
    if (d < p) {
      skips[d] = h;
      h = L.down.forward(nn::avg_pool2(h));
    }
  }
  for (int d = p; d >= entry_; --d) {
    auto& L = levels_[d];
    if (d < p) h = concat_channels(h, skips[d]);
    h = L.dec2.forward(L.dec1.forward(h, temb_), temb_);
    if (L.attention) h = L.dec_attn.forward(h);
    if (d > entry_) h = L.up.forward(upsample_nearest(h, 2));
  }
  Tensor3<Real> out = out_adapters_[stage].forward(out_acts_[stage].forward(out_norms_[stage].forward(h)));
  auto [eps, eta] = nn::split_channels(out, latent_channels_);
  return {std::move(eps), std::move(eta)};
}

template <typename Real>
void UNet<Real>::backward(const Tensor3<Real>& d_eps, const Tensor3<Real>& d_eta) {
  const int p = config_.p;
  Buffer<Real> dtemb(temb_.size(), Real(0));
  Tensor3<Real> dh = out_norms_[stage_].backward(
      out_acts_[stage_].backward(out_adapters_[stage_].backward(concat_channels(d_eps, d_eta))));

  std::vector<Tensor3<Real>> dskips(p + 1);
  for (int d = entry_; d <= p; ++d) {
    auto& L = levels_[d];
    if (d > entry_) dh = nn::upsample2_backward(L.up.backward(dh));
    if (L.attention) dh = L.dec_attn.backward(dh);
    dh = L.dec1.backward(L.dec2.backward(dh, dtemb), dtemb);
    if (d < p) {
      auto [a, b] = nn::split_channels(dh, config_.channels[d]);
      dh = std::move(a);
      dskips[d] = std::move(b);
    }
  }
  for (int d = p; d >= entry_; --d) {
    auto& L = levels_[d];
    if (d < p) {
      dh = nn::avg_pool2_backward(L.down.backward(dh));
      for (std::size_t i = 0; i < dh.size(); ++i) dh.data[i] += dskips[d].data[i];
    }
    if (L.attention) dh = L.enc_attn.backward(dh);
    dh = L.enc1.backward(L.enc2.backward(dh, dtemb), dtemb);
  }
  in_adapters_[stage_].backward(dh);

  time1_.backward(time_act_.backward(time2_.backward(temb_act_.backward(dtemb))));
}

std::size_t parameter_count(const DenoiserConfig& config) {
  return UNet<float>(config).params().scalar_count();
}

template class UNet<float>;
template class UNet<double>;

}  // namespace fddiff
