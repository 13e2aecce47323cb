// SPDX-License-Identifier: Apache-2.0

// Minimal layer library with hand-written backward passes. Every layer caches
// what its backward needs during forward, so a layer instance may be applied
// at most once between forward and backward. Instantiated for float (training)
// and double (gradient checks).

#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fddiff/image.hpp"
#include "fddiff/rng.hpp"

namespace fddiff::nn {

template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
struct Param {
  std::string name;
  std::vector<std::int64_t> shape;
  Buffer<Real> value;
  Buffer<Real> grad;

  std::size_t size() const { return value.size(); }
};

/// Named parameter arrays in registration order. Addresses are stable.
template <typename Real>
class ParamStore {
 public:
  Param<Real>& add(std::string name, std::vector<std::int64_t> shape);

  std::deque<Param<Real>>& entries() { return params_; }
  const std::deque<Param<Real>>& entries() const { return params_; }
  Param<Real>* find(const std::string& name);
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::deque<Param<Real>> params_;
};

/// Fills with U(−bound, bound), bound = scale/√fan_in, drawn in double so the
/// float and double instantiations start from the same values.
template <typename Real>
void init_uniform(Param<Real>& p, int fan_in, Rng& rng, double scale = 1.0);

template <typename Real>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<Real>& store, const std::string& name, int in, int out, int kernel, Rng& rng,
         double init_scale = 1.0);

  Tensor3<Real> forward(const Tensor3<Real>& x);
  Tensor3<Real> backward(const Tensor3<Real>& dy);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_ = 0, out_ = 0, k_ = 1;
  Param<Real>* weight_ = nullptr;
  Param<Real>* bias_ = nullptr;
  int h_ = 0, w_ = 0;
  Matrix<Real> cols_;  // (in·k·k) × (h·w)
};

template <typename Real>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(ParamStore<Real>& store, const std::string& name, int channels, int groups);

  Tensor3<Real> forward(const Tensor3<Real>& x);
  Tensor3<Real> backward(const Tensor3<Real>& dy);

 private:
  int channels_ = 0, groups_ = 1;
  Param<Real>* gamma_ = nullptr;
  Param<Real>* beta_ = nullptr;
  Tensor3<Real> xhat_;
  Buffer<Real> inv_std_;
};

template <typename Real>
class SiLU {
 public:
  Tensor3<Real> forward(const Tensor3<Real>& x);
  Tensor3<Real> backward(const Tensor3<Real>& dy) const;
  Buffer<Real> forward(const Buffer<Real>& x);
  Buffer<Real> backward(const Buffer<Real>& dy) const;

 private:
  Buffer<Real> x_;
};

template <typename Real>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<Real>& store, const std::string& name, int in, int out, Rng& rng,
         double init_scale = 1.0);

  Buffer<Real> forward(const Buffer<Real>& x);
  Buffer<Real> backward(const Buffer<Real>& dy);

 private:
  int in_ = 0, out_ = 0;
  Param<Real>* weight_ = nullptr;
  Param<Real>* bias_ = nullptr;
  Buffer<Real> x_;
};

/// Pre-norm residual block with timestep scale-and-shift after the second norm.
template <typename Real>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(ParamStore<Real>& store, const std::string& name, int in, int out, int temb_dim,
           int norm_groups, Rng& rng);

  /// `temb` is the already-activated time embedding.
  Tensor3<Real> forward(const Tensor3<Real>& x, const Buffer<Real>& temb);
  /// Returns dx; accumulates the embedding gradient into `dtemb`.
  Tensor3<Real> backward(const Tensor3<Real>& dy, Buffer<Real>& dtemb);

 private:
  bool has_skip_ = false;
  int out_ = 0;
  GroupNorm<Real> norm1_, norm2_;
  SiLU<Real> act1_, act2_;
  Conv2d<Real> conv1_, conv2_, skip_;
  Linear<Real> film_;
  Tensor3<Real> normed_;
  Buffer<Real> scale_shift_;
};

/// Single-head spatial self-attention with a residual connection.
template <typename Real>
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(ParamStore<Real>& store, const std::string& name, int channels, int norm_groups,
                Rng& rng);

  Tensor3<Real> forward(const Tensor3<Real>& x);
  Tensor3<Real> backward(const Tensor3<Real>& dy);

 private:
  int channels_ = 0;
  GroupNorm<Real> norm_;
  Conv2d<Real> qkv_, proj_;
  Matrix<Real> q_, k_, v_, attn_;
  int h_ = 0, w_ = 0;
};

template <typename Real>
Tensor3<Real> avg_pool2(const Tensor3<Real>& x);
template <typename Real>
Tensor3<Real> avg_pool2_backward(const Tensor3<Real>& dy);
template <typename Real>
Tensor3<Real> upsample2_backward(const Tensor3<Real>& dy);

/// Splits channel-concatenated gradients back into two parts.
template <typename Real>
std::pair<Tensor3<Real>, Tensor3<Real>> split_channels(const Tensor3<Real>& x, int first);

std::vector<double> sinusoidal_embedding(double t, int dim);

}  // namespace fddiff::nn
