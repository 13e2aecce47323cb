// SPDX-License-Identifier: Apache-2.0

#include "fddiff/wpt.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <map>
#include <string>
#include <tuple>
#include <utility>

#include "fddiff/errors.hpp"

namespace fddiff {

namespace {

// Children are indexed by (row_high, col_high) as 2*row_high + col_high.
std::array<Image, 4> analyze_plane(const Image& img) {
  if (img.height % 2 != 0 || img.width % 2 != 0)
    throw DimensionError("analyze_once: odd dimensions " + std::to_string(img.height) + "x" +
                         std::to_string(img.width));
  const int h = img.height / 2, w = img.width / 2;
  std::array<Image, 4> out{Image(img.channels, h, w), Image(img.channels, h, w),
                           Image(img.channels, h, w), Image(img.channels, h, w)};
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float a = img.at(c, 2 * y, 2 * x), b = img.at(c, 2 * y, 2 * x + 1);
        const float d = img.at(c, 2 * y + 1, 2 * x), e = img.at(c, 2 * y + 1, 2 * x + 1);
        out[0].at(c, y, x) = 0.25f * (a + b + d + e);
        out[1].at(c, y, x) = 0.25f * (a - b + d - e);
        out[2].at(c, y, x) = 0.25f * (a + b - d - e);
        out[3].at(c, y, x) = 0.25f * (a - b - d + e);
      }
  return out;
}

Image synthesize_plane(const Image& ll, const Image& lh, const Image& hl, const Image& hh) {
  Image out(ll.channels, ll.height * 2, ll.width * 2);
  for (int c = 0; c < ll.channels; ++c)
    for (int y = 0; y < ll.height; ++y)
      for (int x = 0; x < ll.width; ++x) {
        const float s = ll.at(c, y, x), cv = lh.at(c, y, x);
        const float rv = hl.at(c, y, x), dv = hh.at(c, y, x);
        out.at(c, 2 * y, 2 * x) = s + cv + rv + dv;
        out.at(c, 2 * y, 2 * x + 1) = s - cv + rv - dv;
        out.at(c, 2 * y + 1, 2 * x) = s + cv - rv - dv;
        out.at(c, 2 * y + 1, 2 * x + 1) = s - cv - rv + dv;
      }
  return out;
}

using PathMap = std::map<std::pair<int, int>, Image>;

}  // namespace

int subband_level(const SubbandKey& key) {
  return int(std::bit_width(unsigned(std::max(key.row_sequency, key.col_sequency))));
}

bool frequency_less(const SubbandKey& a, const SubbandKey& b) {
  auto rank = [](const SubbandKey& k) {
    return std::make_tuple(subband_level(k), k.row_sequency + k.col_sequency,
                           std::max(k.row_sequency, k.col_sequency), k.row_sequency);
  };
  return rank(a) < rank(b);
}

int sequency_to_path(int sequency) { return sequency ^ (sequency >> 1); }

int path_to_sequency(int path) {
  int s = 0;
  for (; path; path >>= 1) s ^= path;
  return s;
}

std::vector<SubbandKey> subband_order(int stage) {
  if (stage < 0 || stage > 12) throw ArgumentError("subband_order: stage out of range");
  const int n = 1 << stage;
  std::vector<SubbandKey> keys;
  keys.reserve(std::size_t(n) * n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) keys.push_back({r, c, stage});
  std::sort(keys.begin(), keys.end(), frequency_less);
  return keys;
}

int stage_for_band_count(int band_count) {
  if (band_count < 1) throw ArgumentError("band count must be positive");
  int s = 0;
  while ((1 << (2 * s)) < band_count) ++s;
  return s;
}

CoeffStack analyze_once(const Image& img) { return decompose(img, 1); }

Image synthesize_once(const CoeffStack& coeffs) {
  if (coeffs.bands.size() % 4 != 0)
    throw StructureError("synthesize_once: band count " + std::to_string(coeffs.bands.size()) +
                         " is not a multiple of 4");
  if (coeffs.stage != 1 || coeffs.bands.size() != 4)
    throw StructureError("synthesize_once: expects one stage-1 quartet; use restore for deeper stacks");
  std::array<const Image*, 4> by_path{};
  for (const auto& b : coeffs.bands)
    by_path[2 * sequency_to_path(b.key.row_sequency) + sequency_to_path(b.key.col_sequency)] = &b.plane;
  return synthesize_plane(*by_path[0], *by_path[1], *by_path[2], *by_path[3]);
}

CoeffStack decompose(const Image& img, int stages) {
  if (stages < 0) throw ArgumentError("decompose: negative stage count");
  const int f = 1 << stages;
  if (img.height % f != 0 || img.width % f != 0)
    throw DimensionError("decompose: " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " not divisible by 2^" + std::to_string(stages));
  PathMap nodes;
  nodes.emplace(std::make_pair(0, 0), img);
  for (int s = 0; s < stages; ++s) {
    PathMap next;
    for (auto& [path, plane] : nodes) {
      auto kids = analyze_plane(plane);
      for (int k = 0; k < 4; ++k)
        next.emplace(std::make_pair(2 * path.first + (k >> 1), 2 * path.second + (k & 1)),
                     std::move(kids[k]));
    }
    nodes = std::move(next);
  }
  CoeffStack out;
  out.stage = stages;
  out.channels = img.channels;
  out.base_height = img.height / f;
  out.base_width = img.width / f;
  out.bands.reserve(nodes.size());
  for (auto& [path, plane] : nodes)
    out.bands.push_back({{path_to_sequency(path.first), path_to_sequency(path.second), stages},
                         std::move(plane)});
  std::sort(out.bands.begin(), out.bands.end(),
            [](const Subband& a, const Subband& b) { return frequency_less(a.key, b.key); });
  return out;
}

CoeffStack lowpass_select(const CoeffStack& coeffs, int band_count) {
  if (band_count < 1 || band_count > coeffs.present_bands())
    throw ArgumentError("lowpass_select: band count " + std::to_string(band_count) + " outside [1, " +
                        std::to_string(coeffs.present_bands()) + "]");
  CoeffStack out;
  out.stage = coeffs.stage;
  out.channels = coeffs.channels;
  out.base_height = coeffs.base_height;
  out.base_width = coeffs.base_width;
  out.bands.assign(coeffs.bands.begin(), coeffs.bands.begin() + band_count);
  return out;
}

Image restore(const CoeffStack& partial, int stages) {
  if (stages < 0 || stages > partial.stage)
    throw ArgumentError("restore: stage count " + std::to_string(stages) + " outside [0, " +
                        std::to_string(partial.stage) + "]");
  const int n = 1 << stages;
  PathMap nodes;
  for (const auto& b : partial.bands) {
    if (subband_level(b.key) > stages)
      throw ArgumentError("restore: " + std::to_string(stages) +
                          " stages cannot house the present bands");
    nodes.emplace(std::make_pair(sequency_to_path(b.key.row_sequency),
                                 sequency_to_path(b.key.col_sequency)),
                  b.plane);
  }
  const Image zero(partial.channels, partial.base_height, partial.base_width);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) nodes.try_emplace({r, c}, zero);

  for (int level = stages; level > 0; --level) {
    PathMap parents;
    const int m = 1 << (level - 1);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c)
        parents.emplace(std::make_pair(r, c),
                        synthesize_plane(nodes.at({2 * r, 2 * c}), nodes.at({2 * r, 2 * c + 1}),
                                         nodes.at({2 * r + 1, 2 * c}), nodes.at({2 * r + 1, 2 * c + 1})));
    nodes = std::move(parents);
  }
  return nodes.at({0, 0});
}

}  // namespace fddiff
