// SPDX-License-Identifier: Apache-2.0

#include "fddiff/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace fddiff {

namespace {

using Colour = std::array<float, 3>;

Colour random_colour(std::uniform_real_distribution<float>& u, Rng& rng) { return {u(rng), u(rng), u(rng)}; }

}  // namespace

Image synthetic_image(int size, Rng& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(3, size, size);

  const Colour c0 = random_colour(u, rng), c1 = random_colour(u, rng);
  const float angle = u(rng) * 2.0f * std::numbers::pi_v<float>;
  const float dx = std::cos(angle), dy = std::sin(angle);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float s = 0.5f + ((x + 0.5f) / size - 0.5f) * dx + ((y + 0.5f) / size - 0.5f) * dy;
      const float w = std::clamp(s, 0.0f, 1.0f);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = (1 - w) * c0[c] + w * c1[c];
    }

  std::uniform_int_distribution<int> count(1, 3);
  const int rects = count(rng);
  for (int r = 0; r < rects; ++r) {
    std::uniform_int_distribution<int> pos(0, size - 4);
    const int x0 = pos(rng), y0 = pos(rng);
    std::uniform_int_distribution<int> ext(3, std::max(3, size / 2));
    const int x1 = std::min(size, x0 + ext(rng)), y1 = std::min(size, y0 + ext(rng));
    const Colour col = random_colour(u, rng);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x)
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
  }

  // Texture covers one size/2 square.
  const float freq = 2.0f + u(rng) * 6.0f;
  const float phase = u(rng) * 2.0f * std::numbers::pi_v<float>;
  const float theta = u(rng) * std::numbers::pi_v<float>;
  const float amp = 0.1f + 0.15f * u(rng);
  std::uniform_int_distribution<int> pos(0, size / 2);
  const int tx0 = pos(rng), ty0 = pos(rng);
  const int tx1 = tx0 + size / 2, ty1 = ty0 + size / 2;
  for (int y = ty0; y < ty1; ++y)
    for (int x = tx0; x < tx1; ++x) {
      const float arg = 2.0f * std::numbers::pi_v<float> * freq *
                            (std::cos(theta) * x + std::sin(theta) * y) / float(size) + phase;
      const float v = amp * std::sin(arg);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp(img.at(c, y, x) + v, 0.0f, 1.0f);
    }
  return img;
}

std::vector<Image> synthetic_dataset(int count, int size, std::uint64_t seed) {
  std::vector<Image> out;
  out.reserve(std::size_t(count));
  for (int i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, {0x5359u, std::uint64_t(i)});
    out.push_back(synthetic_image(size, rng));
  }
  return out;
}

}  // namespace fddiff
