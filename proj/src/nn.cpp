// SPDX-License-Identifier: Apache-2.0

#include "fddiff/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fddiff/errors.hpp"

namespace fddiff::nn {

template <typename Real>
using MapM = Eigen::Map<Matrix<Real>>;
template <typename Real>
using CMapM = Eigen::Map<const Matrix<Real>>;
template <typename Real>
using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// ParamStore

template <typename Real>
Param<Real>& ParamStore<Real>::add(std::string name, std::vector<std::int64_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= std::size_t(d);
  auto& p = params_.emplace_back();
  p.name = std::move(name);
  p.shape = std::move(shape);
  p.value.assign(n, Real(0));
  p.grad.assign(n, Real(0));
  return p;
}

template <typename Real>
Param<Real>* ParamStore<Real>::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename Real>
std::size_t ParamStore<Real>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

template <typename Real>
void ParamStore<Real>::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), Real(0));
}

template <typename Real>
void init_uniform(Param<Real>& p, int fan_in, Rng& rng, double scale) {
  const double bound = scale / std::sqrt(double(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  for (auto& v : p.value) {
    const double r = ud(rng);  // always drawn so the stream does not depend on scale
    v = Real(r * bound);
  }
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename Real>
Conv2d<Real>::Conv2d(ParamStore<Real>& store, const std::string& name, int in, int out, int kernel,
                     Rng& rng, double init_scale)
    : in_(in), out_(out), k_(kernel) {
  if (kernel != 1 && kernel != 3) throw ArgumentError("Conv2d: kernel must be 1 or 3");
  weight_ = &store.add(name + ".weight", {out, in, kernel, kernel});
  bias_ = &store.add(name + ".bias", {out});
  const int fan_in = in * kernel * kernel;
  init_uniform(*weight_, fan_in, rng, init_scale);
  init_uniform(*bias_, fan_in, rng, init_scale);
}

template <typename Real>
Tensor3<Real> Conv2d<Real>::forward(const Tensor3<Real>& x) {
  if (x.channels != in_)
    throw ConsistencyError("Conv2d: expected " + std::to_string(in_) + " channels, got " +
                           std::to_string(x.channels));
  h_ = x.height;
  w_ = x.width;
  const int hw = h_ * w_;
  if (k_ == 1) {
    cols_ = CMapM<Real>(x.data.data(), in_, hw);
  } else {
    cols_.resize(in_ * 9, hw);
    for (int c = 0; c < in_; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          Real* row = cols_.data() + std::size_t(c * 9 + ky * 3 + kx) * hw;
          for (int y = 0; y < h_; ++y) {
            const int sy = y + ky - 1;
            Real* dst = row + std::size_t(y) * w_;
            if (sy < 0 || sy >= h_) {
              std::fill(dst, dst + w_, Real(0));
              continue;
            }
            const Real* src = x.data.data() + (std::size_t(c) * h_ + sy) * w_;
            for (int xx = 0; xx < w_; ++xx) {
              const int sx = xx + kx - 1;
              dst[xx] = (sx < 0 || sx >= w_) ? Real(0) : src[sx];
            }
          }
        }
  }
  Tensor3<Real> y(out_, h_, w_);
  MapM<Real> ym(y.data.data(), out_, hw);
  CMapM<Real> wm(weight_->value.data(), out_, in_ * k_ * k_);
  ym.noalias() = wm * cols_;
  Eigen::Map<const Vec<Real>> b(bias_->value.data(), out_);
  ym.colwise() += b;
  return y;
}

template <typename Real>
Tensor3<Real> Conv2d<Real>::backward(const Tensor3<Real>& dy) {
  const int hw = h_ * w_;
  CMapM<Real> dym(dy.data.data(), out_, hw);
  MapM<Real> dw(weight_->grad.data(), out_, in_ * k_ * k_);
  dw.noalias() += dym * cols_.transpose();
  Eigen::Map<Vec<Real>> db(bias_->grad.data(), out_);
  db += dym.rowwise().sum();
  CMapM<Real> wm(weight_->value.data(), out_, in_ * k_ * k_);
  Tensor3<Real> dx(in_, h_, w_);
  if (k_ == 1) {
    MapM<Real>(dx.data.data(), in_, hw).noalias() = wm.transpose() * dym;
    return dx;
  }
  Matrix<Real> dcols = wm.transpose() * dym;
  for (int c = 0; c < in_; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Real* row = dcols.data() + std::size_t(c * 9 + ky * 3 + kx) * hw;
        for (int y = 0; y < h_; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h_) continue;
          const Real* src = row + std::size_t(y) * w_;
          Real* dst = dx.data.data() + (std::size_t(c) * h_ + sy) * w_;
          for (int xx = 0; xx < w_; ++xx) {
            const int sx = xx + kx - 1;
            if (sx >= 0 && sx < w_) dst[sx] += src[xx];
          }
        }
      }
  return dx;
}

// ---------------------------------------------------------------------------
// GroupNorm

template <typename Real>
GroupNorm<Real>::GroupNorm(ParamStore<Real>& store, const std::string& name, int channels, int groups)
    : channels_(channels), groups_(std::gcd(channels, std::max(groups, 1))) {
  gamma_ = &store.add(name + ".gamma", {channels});
  beta_ = &store.add(name + ".beta", {channels});
  std::fill(gamma_->value.begin(), gamma_->value.end(), Real(1));
}

template <typename Real>
Tensor3<Real> GroupNorm<Real>::forward(const Tensor3<Real>& x) {
  if (x.channels != channels_) throw ConsistencyError("GroupNorm: channel mismatch");
  const int cpg = channels_ / groups_;
  const std::size_t n = std::size_t(cpg) * x.plane_size();
  xhat_ = Tensor3<Real>(x.channels, x.height, x.width);
  inv_std_.assign(groups_, Real(0));
  Tensor3<Real> y(x.channels, x.height, x.width);
  for (int g = 0; g < groups_; ++g) {
    const std::size_t off = std::size_t(g) * n;
    double mean = 0, sq = 0;
    for (std::size_t i = 0; i < n; ++i) mean += double(x.data[off + i]);
    mean /= double(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = double(x.data[off + i]) - mean;
      sq += d * d;
    }
    const Real inv = Real(1.0 / std::sqrt(sq / double(n) + 1e-5));
    inv_std_[g] = inv;
    for (std::size_t i = 0; i < n; ++i) xhat_.data[off + i] = (x.data[off + i] - Real(mean)) * inv;
  }
  const std::size_t ps = x.plane_size();
  for (int c = 0; c < channels_; ++c) {
    const Real ga = gamma_->value[c], be = beta_->value[c];
    for (std::size_t i = 0; i < ps; ++i) y.data[c * ps + i] = ga * xhat_.data[c * ps + i] + be;
  }
  return y;
}

template <typename Real>
Tensor3<Real> GroupNorm<Real>::backward(const Tensor3<Real>& dy) {
  const std::size_t ps = dy.plane_size();
  const int cpg = channels_ / groups_;
  const std::size_t n = std::size_t(cpg) * ps;
  Tensor3<Real> dxhat(dy.channels, dy.height, dy.width);
  for (int c = 0; c < channels_; ++c) {
    Real sg = 0, sb = 0;
    const Real ga = gamma_->value[c];
    for (std::size_t i = 0; i < ps; ++i) {
      const Real d = dy.data[c * ps + i];
      sg += d * xhat_.data[c * ps + i];
      sb += d;
      dxhat.data[c * ps + i] = d * ga;
    }
    gamma_->grad[c] += sg;
    beta_->grad[c] += sb;
  }
  Tensor3<Real> dx(dy.channels, dy.height, dy.width);
  for (int g = 0; g < groups_; ++g) {
    const std::size_t off = std::size_t(g) * n;
    Real s1 = 0, s2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s1 += dxhat.data[off + i];
      s2 += dxhat.data[off + i] * xhat_.data[off + i];
    }
    const Real inv_n = Real(1) / Real(n);
    for (std::size_t i = 0; i < n; ++i)
      dx.data[off + i] =
          inv_std_[g] * (dxhat.data[off + i] - inv_n * s1 - xhat_.data[off + i] * inv_n * s2);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// SiLU

template <typename Real>
static inline Real sigmoid(Real v) {
  return Real(1) / (Real(1) + std::exp(-v));
}

template <typename Real>
Tensor3<Real> SiLU<Real>::forward(const Tensor3<Real>& x) {
  x_ = x.data;
  Tensor3<Real> y(x.channels, x.height, x.width);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] * sigmoid(x.data[i]);
  return y;
}

template <typename Real>
Tensor3<Real> SiLU<Real>::backward(const Tensor3<Real>& dy) const {
  Tensor3<Real> dx(dy.channels, dy.height, dy.width);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const Real s = sigmoid(x_[i]);
    dx.data[i] = dy.data[i] * (s + x_[i] * s * (Real(1) - s));
  }
  return dx;
}

template <typename Real>
Buffer<Real> SiLU<Real>::forward(const Buffer<Real>& x) {
  x_ = x;
  Buffer<Real> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
  return y;
}

template <typename Real>
Buffer<Real> SiLU<Real>::backward(const Buffer<Real>& dy) const {
  Buffer<Real> dx(dy.size());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const Real s = sigmoid(x_[i]);
    dx[i] = dy[i] * (s + x_[i] * s * (Real(1) - s));
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

template <typename Real>
Linear<Real>::Linear(ParamStore<Real>& store, const std::string& name, int in, int out, Rng& rng,
                     double init_scale)
    : in_(in), out_(out) {
  weight_ = &store.add(name + ".weight", {out, in});
  bias_ = &store.add(name + ".bias", {out});
  init_uniform(*weight_, in, rng, init_scale);
  init_uniform(*bias_, in, rng, init_scale);
}

template <typename Real>
Buffer<Real> Linear<Real>::forward(const Buffer<Real>& x) {
  if (int(x.size()) != in_) throw ConsistencyError("Linear: input size mismatch");
  x_ = x;
  Buffer<Real> y(out_);
  Eigen::Map<Vec<Real>> ym(y.data(), out_);
  ym = CMapM<Real>(weight_->value.data(), out_, in_) * Eigen::Map<const Vec<Real>>(x.data(), in_) +
       Eigen::Map<const Vec<Real>>(bias_->value.data(), out_);
  return y;
}

template <typename Real>
Buffer<Real> Linear<Real>::backward(const Buffer<Real>& dy) {
  Eigen::Map<const Vec<Real>> d(dy.data(), out_);
  Eigen::Map<const Vec<Real>> x(x_.data(), in_);
  MapM<Real>(weight_->grad.data(), out_, in_).noalias() += d * x.transpose();
  Eigen::Map<Vec<Real>>(bias_->grad.data(), out_) += d;
  Buffer<Real> dx(in_);
  Eigen::Map<Vec<Real>>(dx.data(), in_).noalias() =
      CMapM<Real>(weight_->value.data(), out_, in_).transpose() * d;
  return dx;
}

// ---------------------------------------------------------------------------
// ResBlock

template <typename Real>
ResBlock<Real>::ResBlock(ParamStore<Real>& store, const std::string& name, int in, int out,
                         int temb_dim, int norm_groups, Rng& rng)
    : has_skip_(in != out), out_(out) {
  norm1_ = GroupNorm<Real>(store, name + ".norm1", in, norm_groups);
  conv1_ = Conv2d<Real>(store, name + ".conv1", in, out, 3, rng);
  film_ = Linear<Real>(store, name + ".film", temb_dim, 2 * out, rng);
  norm2_ = GroupNorm<Real>(store, name + ".norm2", out, norm_groups);
  conv2_ = Conv2d<Real>(store, name + ".conv2", out, out, 3, rng, 0.0);
  if (has_skip_) skip_ = Conv2d<Real>(store, name + ".skip", in, out, 1, rng);
}

template <typename Real>
Tensor3<Real> ResBlock<Real>::forward(const Tensor3<Real>& x, const Buffer<Real>& temb) {
  Tensor3<Real> h = conv1_.forward(act1_.forward(norm1_.forward(x)));
  scale_shift_ = film_.forward(temb);
  normed_ = norm2_.forward(h);
  const std::size_t ps = h.plane_size();
  Tensor3<Real> f(normed_.channels, normed_.height, normed_.width);
  for (int c = 0; c < out_; ++c) {
    const Real sc = Real(1) + scale_shift_[c], sh = scale_shift_[out_ + c];
    for (std::size_t i = 0; i < ps; ++i) f.data[c * ps + i] = normed_.data[c * ps + i] * sc + sh;
  }
  Tensor3<Real> out = conv2_.forward(act2_.forward(f));
  const Tensor3<Real> s = has_skip_ ? skip_.forward(x) : x;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += s.data[i];
  return out;
}

template <typename Real>
Tensor3<Real> ResBlock<Real>::backward(const Tensor3<Real>& dy, Buffer<Real>& dtemb) {
  Tensor3<Real> df = act2_.backward(conv2_.backward(dy));
  const std::size_t ps = df.plane_size();
  Buffer<Real> dss(2 * out_, Real(0));
  Tensor3<Real> dn(df.channels, df.height, df.width);
  for (int c = 0; c < out_; ++c) {
    const Real sc = Real(1) + scale_shift_[c];
    Real ds = 0, dh = 0;
    for (std::size_t i = 0; i < ps; ++i) {
      const Real g = df.data[c * ps + i];
      ds += g * normed_.data[c * ps + i];
      dh += g;
      dn.data[c * ps + i] = g * sc;
    }
    dss[c] = ds;
    dss[out_ + c] = dh;
  }
  const auto dt = film_.backward(dss);
  for (std::size_t i = 0; i < dt.size(); ++i) dtemb[i] += dt[i];
  Tensor3<Real> dx = norm1_.backward(act1_.backward(conv1_.backward(norm2_.backward(dn))));
  const Tensor3<Real> ds = has_skip_ ? skip_.backward(dy) : dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += ds.data[i];
  return dx;
}

// ---------------------------------------------------------------------------
// SelfAttention

template <typename Real>
SelfAttention<Real>::SelfAttention(ParamStore<Real>& store, const std::string& name, int channels,
                                   int norm_groups, Rng& rng)
    : channels_(channels) {
  norm_ = GroupNorm<Real>(store, name + ".norm", channels, norm_groups);
  qkv_ = Conv2d<Real>(store, name + ".qkv", channels, 3 * channels, 1, rng);
  proj_ = Conv2d<Real>(store, name + ".proj", channels, channels, 1, rng, 0.0);
}

template <typename Real>
Tensor3<Real> SelfAttention<Real>::forward(const Tensor3<Real>& x) {
  h_ = x.height;
  w_ = x.width;
  const int n = h_ * w_, c = channels_;
  const Tensor3<Real> qkv = qkv_.forward(norm_.forward(x));
  CMapM<Real> all(qkv.data.data(), 3 * c, n);
  q_ = all.topRows(c);
  k_ = all.middleRows(c, c);
  v_ = all.bottomRows(c);
  const Real scale = Real(1) / std::sqrt(Real(c));
  attn_.noalias() = (q_.transpose() * k_) * scale;  // n × n, row i attends over j
  for (int i = 0; i < n; ++i) {
    auto row = attn_.row(i);
    const Real mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
  Tensor3<Real> o(c, h_, w_);
  MapM<Real>(o.data.data(), c, n).noalias() = v_ * attn_.transpose();
  Tensor3<Real> out = proj_.forward(o);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += x.data[i];
  return out;
}

template <typename Real>
Tensor3<Real> SelfAttention<Real>::backward(const Tensor3<Real>& dy) {
  const int n = h_ * w_, c = channels_;
  const Tensor3<Real> dout = proj_.backward(dy);
  CMapM<Real> d_o(dout.data.data(), c, n);
  Tensor3<Real> dqkv(3 * c, h_, w_);
  MapM<Real> dall(dqkv.data.data(), 3 * c, n);
  dall.bottomRows(c).noalias() = d_o * attn_;             // dV
  Matrix<Real> da = d_o.transpose() * v_;                 // n × n
  Matrix<Real> ds = attn_.cwiseProduct(da);
  Vec<Real> rs = ds.rowwise().sum();
  ds -= attn_.cwiseProduct(rs.replicate(1, n));
  const Real scale = Real(1) / std::sqrt(Real(c));
  dall.topRows(c).noalias() = (k_ * ds.transpose()) * scale;   // dQ
  dall.middleRows(c, c).noalias() = (q_ * ds) * scale;         // dK
  Tensor3<Real> dx = norm_.backward(qkv_.backward(dqkv));
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += dy.data[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Resampling helpers

template <typename Real>
Tensor3<Real> avg_pool2(const Tensor3<Real>& x) {
  return block_average(x, 2);
}

template <typename Real>
Tensor3<Real> avg_pool2_backward(const Tensor3<Real>& dy) {
  Tensor3<Real> dx = upsample_nearest(dy, 2);
  for (auto& v : dx.data) v *= Real(0.25);
  return dx;
}

template <typename Real>
Tensor3<Real> upsample2_backward(const Tensor3<Real>& dy) {
  Tensor3<Real> dx = block_average(dy, 2);
  for (auto& v : dx.data) v *= Real(4);
  return dx;
}

template <typename Real>
std::pair<Tensor3<Real>, Tensor3<Real>> split_channels(const Tensor3<Real>& x, int first) {
  Tensor3<Real> a(first, x.height, x.width), b(x.channels - first, x.height, x.width);
  std::copy(x.data.begin(), x.data.begin() + std::ptrdiff_t(a.size()), a.data.begin());
  std::copy(x.data.begin() + std::ptrdiff_t(a.size()), x.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

std::vector<double> sinusoidal_embedding(double t, int dim) {
  std::vector<double> e(dim, 0.0);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / double(std::max(half, 1)));
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

#define FDDIFF_NN_INSTANTIATE(R)                                                               \
  template class ParamStore<R>;                                                                \
  template void init_uniform(Param<R>&, int, Rng&, double);                                    \
  template class Conv2d<R>;                                                                    \
  template class GroupNorm<R>;                                                                 \
  template class SiLU<R>;                                                                      \
  template class Linear<R>;                                                                    \
  template class ResBlock<R>;                                                                  \
  template class SelfAttention<R>;                                                             \
  template Tensor3<R> avg_pool2(const Tensor3<R>&);                                            \
  template Tensor3<R> avg_pool2_backward(const Tensor3<R>&);                                   \
  template Tensor3<R> upsample2_backward(const Tensor3<R>&);                                   \
  template std::pair<Tensor3<R>, Tensor3<R>> split_channels(const Tensor3<R>&, int);

FDDIFF_NN_INSTANTIATE(float)
FDDIFF_NN_INSTANTIATE(double)
#undef FDDIFF_NN_INSTANTIATE

}  // namespace fddiff::nn
