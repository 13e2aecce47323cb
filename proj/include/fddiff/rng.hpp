// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "fddiff/image.hpp"

namespace fddiff {

using Rng = std::mt19937_64;

/// Independent stream for (seed, stream ids...). Streams are derived by
/// hashing, so e.g. training step k for item i never depends on draws made
/// for any other (k', i').
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {}) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  for (auto s : stream) h = mix(h ^ mix(s + 0x632be59bd9b4e019ULL));
  return Rng(h);
}

template <typename Real>
void fill_normal(Tensor3<Real>& t, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& v : t.data) v = Real(nd(rng));
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace fddiff
