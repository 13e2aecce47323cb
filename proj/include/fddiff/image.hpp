// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <vector>

namespace fddiff {

/// Allocator with cache-line alignment. Eigen picks its reduction split from
/// the buffer address, so equal shapes must imply equal alignment for runs
/// to be bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense channel-major C×H×W array. `Image` (float) is the domain object for
/// HR/LR images, pyramid states and latents; the double instantiation is used
/// where 64-bit accumulation is required (gradient checks).
template <typename Real>
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  Buffer<Real> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, Real fill = Real(0))
      : channels(c), height(h), width(w), data(std::size_t(c) * h * w, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane_size() const { return std::size_t(height) * width; }

  Real& at(int c, int y, int x) { return data[(std::size_t(c) * height + y) * width + x]; }
  Real at(int c, int y, int x) const { return data[(std::size_t(c) * height + y) * width + x]; }

  std::span<Real> plane(int c) { return {data.data() + std::size_t(c) * plane_size(), plane_size()}; }
  std::span<const Real> plane(int c) const {
    return {data.data() + std::size_t(c) * plane_size(), plane_size()};
  }

  bool same_shape(const Tensor3& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  template <typename Other>
  Tensor3<Other> cast() const {
    Tensor3<Other> out(channels, height, width);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = Other(data[i]);
    return out;
  }
};

using Image = Tensor3<float>;

/// Mean over non-overlapping factor×factor blocks.
template <typename Real>
Tensor3<Real> block_average(const Tensor3<Real>& img, int factor);

/// Replicates each pixel into a factor×factor block.
template <typename Real>
Tensor3<Real> upsample_nearest(const Tensor3<Real>& img, int factor);

/// Resamples by a power-of-two ratio: positive `levels` upsample, negative pool.
template <typename Real>
Tensor3<Real> rescale_dyadic(const Tensor3<Real>& img, int levels);

template <typename Real>
Tensor3<Real> concat_channels(const Tensor3<Real>& a, const Tensor3<Real>& b);

template <typename Real>
Real max_abs_diff(const Tensor3<Real>& a, const Tensor3<Real>& b);

Image clamp01(Image img);

}  // namespace fddiff
