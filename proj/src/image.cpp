// SPDX-License-Identifier: Apache-2.0

#include "fddiff/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fddiff/errors.hpp"

namespace fddiff {

template <typename Real>
Tensor3<Real> block_average(const Tensor3<Real>& img, int factor) {
  if (factor < 1 || img.height % factor != 0 || img.width % factor != 0)
    throw DimensionError("block_average: " + std::to_string(img.height) + "x" +
                         std::to_string(img.width) + " not divisible by " + std::to_string(factor));
  if (factor == 1) return img;
  Tensor3<Real> out(img.channels, img.height / factor, img.width / factor);
  const Real inv = Real(1) / Real(factor * factor);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        Real acc = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) acc += img.at(c, y * factor + dy, x * factor + dx);
        out.at(c, y, x) = acc * inv;
      }
  return out;
}

template <typename Real>
Tensor3<Real> upsample_nearest(const Tensor3<Real>& img, int factor) {
  if (factor < 1) throw ArgumentError("upsample_nearest: factor must be positive");
  if (factor == 1) return img;
  Tensor3<Real> out(img.channels, img.height * factor, img.width * factor);
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) out.at(c, y, x) = img.at(c, y / factor, x / factor);
  return out;
}

template <typename Real>
Tensor3<Real> rescale_dyadic(const Tensor3<Real>& img, int levels) {
  if (levels > 0) return upsample_nearest(img, 1 << levels);
  if (levels < 0) return block_average(img, 1 << -levels);
  return img;
}

template <typename Real>
Tensor3<Real> concat_channels(const Tensor3<Real>& a, const Tensor3<Real>& b) {
  if (a.height != b.height || a.width != b.width)
    throw ConsistencyError("concat_channels: spatial size mismatch");
  Tensor3<Real> out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + std::ptrdiff_t(a.size()));
  return out;
}

template <typename Real>
Real max_abs_diff(const Tensor3<Real>& a, const Tensor3<Real>& b) {
  if (!a.same_shape(b)) throw ConsistencyError("max_abs_diff: shape mismatch");
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

Image clamp01(Image img) {
  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

#define FDDIFF_INSTANTIATE(R)                                                   \
  template Tensor3<R> block_average(const Tensor3<R>&, int);                    \
  template Tensor3<R> upsample_nearest(const Tensor3<R>&, int);                 \
  template Tensor3<R> rescale_dyadic(const Tensor3<R>&, int);                   \
  template Tensor3<R> concat_channels(const Tensor3<R>&, const Tensor3<R>&);    \
  template R max_abs_diff(const Tensor3<R>&, const Tensor3<R>&);

FDDIFF_INSTANTIATE(float)
FDDIFF_INSTANTIATE(double)
#undef FDDIFF_INSTANTIATE

}  // namespace fddiff
