// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "fddiff/image.hpp"
#include "fddiff/rng.hpp"

namespace fddiff::test {

inline Image random_image(int c, int h, int w, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x7465});
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(c, h, w);
  for (auto& v : img.data) v = u(rng);
  return img;
}

// Independent block-mean reference: accumulates in double, no library calls.
inline Image pool_reference(const Image& x, int f) {
  Image out(x.channels, x.height / f, x.width / f);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int xx = 0; xx < out.width; ++xx) {
        double s = 0;
        for (int dy = 0; dy < f; ++dy)
          for (int dx = 0; dx < f; ++dx) s += x.at(c, y * f + dy, xx * f + dx);
        out.at(c, y, xx) = float(s / (f * f));
      }
  return out;
}

inline double max_diff(const Image& a, const Image& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.data[i]) - double(b.data[i])));
  return m;
}

inline double energy(const Image& a) {
  double e = 0;
  for (float v : a.data) e += double(v) * v;
  return e;
}

}  // namespace fddiff::test
