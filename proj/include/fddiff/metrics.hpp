// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fddiff/image.hpp"

namespace fddiff {

struct MetricReport {
  double psnr = 0.0;
  double ssim = 0.0;
};

/// 10·log₁₀(1/MSE) with peak 1; +inf for identical inputs.
double psnr(const Image& a, const Image& b);

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5), K₁ = 0.01, K₂ = 0.03,
/// dynamic range 1, averaged over all fully-covered window positions and
/// channels (RGB treated per channel, no luma conversion).
double ssim(const Image& a, const Image& b);

MetricReport compare(const Image& a, const Image& b);

}  // namespace fddiff
