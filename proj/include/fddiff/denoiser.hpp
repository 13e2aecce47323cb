// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fddiff/image.hpp"
#include "fddiff/nn.hpp"

namespace fddiff {

/// (ε̂, η̂) at the working scale of a step.
template <typename Real>
struct Prediction {
  Tensor3<Real> eps_hat;
  Tensor3<Real> eta_hat;
};

using DenoisePrediction = Prediction<float>;

/// Anything that can drive the reverse chain: a trained network or the
/// ground-truth oracle. `latent` is already at the working stage `stage`.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual DenoisePrediction predict(const Image& latent, const Image& y, int t, int stage) = 0;
};

struct DenoiserConfig {
  int p = 1;
  std::vector<int> channels{32, 64};  // one width per depth, p+1 entries
  std::vector<int> attention_depths;  // empty: deepest only
  int time_embed_dim = 32;
  int norm_groups = 8;
  int timesteps = 64;  // t is rescaled to [0, 1000] before embedding
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<int> resolved_attention() const;
};

/// Multiscale two-headed U-Net. Depth d always runs at LR·2^{p−d}; a stage-q
/// input enters at depth p−q through its own 1×1 adapter, runs the shared
/// trunk from there to the bottleneck and back, and leaves through a matching
/// 1×1 output adapter with 6 channels (3 for ε̂, 3 for η̂).
template <typename Real>
class UNet {
 public:
  explicit UNet(const DenoiserConfig& config);

  const DenoiserConfig& config() const { return config_; }
  nn::ParamStore<Real>& params() { return store_; }
  const nn::ParamStore<Real>& params() const { return store_; }

  /// Caches activations for one subsequent backward().
  Prediction<Real> forward(const Tensor3<Real>& latent, const Tensor3<Real>& y, int t, int stage);
  /// Accumulates parameter gradients for the last forward().
  void backward(const Tensor3<Real>& d_eps, const Tensor3<Real>& d_eta);

 private:
  struct Level {
    nn::ResBlock<Real> enc1, enc2, dec1, dec2;
    bool attention = false;
    nn::SelfAttention<Real> enc_attn, dec_attn;
    nn::Conv2d<Real> down;  // to depth d+1, after pooling
    nn::Conv2d<Real> up;    // to depth d−1, after nearest upsampling
  };

  DenoiserConfig config_;
  nn::ParamStore<Real> store_;
  nn::Linear<Real> time1_, time2_;
  nn::SiLU<Real> time_act_, temb_act_;
  std::vector<nn::Conv2d<Real>> in_adapters_;   // by stage
  std::vector<nn::GroupNorm<Real>> out_norms_;  // by stage
  std::vector<nn::SiLU<Real>> out_acts_;
  std::vector<nn::Conv2d<Real>> out_adapters_;
  std::vector<Level> levels_;

  int entry_ = 0, stage_ = 0, latent_channels_ = 3;
  Buffer<Real> temb_;
};

/// Parameter count for a config without materializing twice.
std::size_t parameter_count(const DenoiserConfig& config);

/// Float network exposed through the Denoiser interface.
class UNetDenoiser : public Denoiser {
 public:
  explicit UNetDenoiser(std::shared_ptr<UNet<float>> net) : net_(std::move(net)) {}
  DenoisePrediction predict(const Image& latent, const Image& y, int t, int stage) override {
    return net_->forward(latent, y, t, stage);
  }
  UNet<float>& net() { return *net_; }

 private:
  std::shared_ptr<UNet<float>> net_;
};

}  // namespace fddiff
