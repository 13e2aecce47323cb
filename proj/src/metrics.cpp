// SPDX-License-Identifier: Apache-2.0

#include "fddiff/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "fddiff/errors.hpp"

namespace fddiff {

namespace {

constexpr int kWindow = 11;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> g{};
  double sum = 0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Valid-mode separable Gaussian filter of one plane.
std::vector<double> filter_valid(const std::vector<double>& in, int h, int w) {
  static const auto g = gaussian_taps();
  const int oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(std::size_t(h) * ow, 0.0), out(std::size_t(oh) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * in[std::size_t(y) * w + x + k];
      rows[std::size_t(y) * ow + x] = acc;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * rows[std::size_t(y + k) * ow + x];
      out[std::size_t(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw DimensionError("psnr: shape mismatch");
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(double(a.size()) / se);
}

double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw DimensionError("ssim: shape mismatch");
  if (a.height < kWindow || a.width < kWindow)
    throw DimensionError("ssim: image smaller than the 11x11 window");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int h = a.height, w = a.width;
  const std::size_t n = a.plane_size();
  double total = 0;
  std::size_t count = 0;
  for (int c = 0; c < a.channels; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a.plane(c)[i];
      y[i] = b.plane(c)[i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w), my = filter_valid(y, h, w);
    const auto sxx = filter_valid(xx, h, w), syy = filter_valid(yy, h, w), sxy = filter_valid(xy, h, w);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
      total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / double(count);
}

MetricReport compare(const Image& a, const Image& b) { return {psnr(a, b), ssim(a, b)}; }

}  // namespace fddiff
