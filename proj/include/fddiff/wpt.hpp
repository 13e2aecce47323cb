// SPDX-License-Identifier: Apache-2.0

// 2D Haar wavelet-packet transform with averaging analysis (¼-scaled kernels)
// and ±1 synthesis. Under this normalization the all-lowpass band after k
// stages is the 2^k×2^k block mean, and zero-detail synthesis is nearest
// upsampling.

#pragma once

#include <vector>

#include "fddiff/image.hpp"

namespace fddiff {

/// Per-axis sequency (sign-change count of the packet basis) at a stage.
struct SubbandKey {
  int row_sequency = 0;
  int col_sequency = 0;
  int stage = 0;

  bool operator==(const SubbandKey&) const = default;
};

/// Smallest k such that the band lives in the packet subtree of the
/// stage-(stage−k) lowpass node, i.e. both sequencies are < 2^k.
int subband_level(const SubbandKey& key);

/// Total frequency order: (level, row+col, max(row,col), row) ascending.
bool frequency_less(const SubbandKey& a, const SubbandKey& b);

/// Natural (filter-path) index of a sequency: the Gray code of it.
int sequency_to_path(int sequency);
int path_to_sequency(int path);

/// All 4^stage keys, ascending in frequency.
std::vector<SubbandKey> subband_order(int stage);

struct Subband {
  SubbandKey key;
  Image plane;  // channels × base_height × base_width
};

/// Frequency-ascending subbands at one stage. A partial stack (produced by
/// lowpass_select) holds only a prefix of the 4^stage bands; the rest are
/// implicitly zero.
struct CoeffStack {
  int stage = 0;
  int channels = 0;
  int base_height = 0;
  int base_width = 0;
  std::vector<Subband> bands;

  int total_bands() const { return 1 << (2 * stage); }
  int present_bands() const { return int(bands.size()); }
  bool is_partial() const { return present_bands() < total_bands(); }
  const SubbandKey& key_of(int index) const { return bands.at(index).key; }
};

CoeffStack analyze_once(const Image& img);
Image synthesize_once(const CoeffStack& coeffs);

CoeffStack decompose(const Image& img, int stages);

/// Keeps the `band_count` lowest-frequency bands.
CoeffStack lowpass_select(const CoeffStack& coeffs, int band_count);

/// Synthesizes `stages` levels from the present bands (absent siblings are
/// zero), producing an image at base·2^stages.
Image restore(const CoeffStack& partial, int stages);

/// Number of synthesis levels needed to house the lowest `band_count` bands.
int stage_for_band_count(int band_count);

}  // namespace fddiff
