// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Textbook Canny written independently of the library: a full 2-D Gaussian
// kernel, atan2 orientation sectors and fixed-point hysteresis relaxation.
// Conventions match the library's documented ones (replicated border,
// central differences, magnitude normalized to max 1, strict "before" and
// non-strict "after" comparison in suppression, no edges on the border ring).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

inline std::vector<std::uint8_t> canny(const std::vector<double>& img, int h, int w, double sigma, double low,
                                       double high) {
  auto px = [&](const std::vector<double>& a, int y, int x) {
    y = std::min(std::max(y, 0), h - 1);
    x = std::min(std::max(x, 0), w - 1);
    return a[static_cast<std::size_t>(y * w + x)];
  };

  const int r = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> kernel;
  double z = 0.0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) {
      kernel.push_back(std::exp(-(i * i + j * j) / (2.0 * sigma * sigma)));
      z += kernel.back();
    }
  std::vector<double> blur(img.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      int n = 0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) acc += kernel[static_cast<std::size_t>(n++)] * px(img, y + i, x + j);
      blur[static_cast<std::size_t>(y * w + x)] = acc / z;
    }

  std::vector<double> mag(img.size()), angle(img.size());
  double peak = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = 0.5 * (px(blur, y, x + 1) - px(blur, y, x - 1));
      const double gy = 0.5 * (px(blur, y + 1, x) - px(blur, y - 1, x));
      const auto i = static_cast<std::size_t>(y * w + x);
      mag[i] = std::sqrt(gx * gx + gy * gy);
      double deg = std::atan2(gy, gx) * 180.0 / 3.14159265358979323846;
      if (deg < 0) deg += 180.0;
      angle[i] = deg;
      peak = std::max(peak, mag[i]);
    }
  std::vector<std::uint8_t> edges(img.size(), 0);
  if (peak <= 1e-12) return edges;
  for (auto& m : mag) m /= peak;

  std::vector<double> kept(img.size(), 0.0);
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      const auto i = static_cast<std::size_t>(y * w + x);
      const double a = angle[i];
      int dx, dy;
      if (a < 22.5 || a >= 157.5) {
        dx = 1, dy = 0;
      } else if (a < 67.5) {
        dx = 1, dy = 1;
      } else if (a < 112.5) {
        dx = 0, dy = 1;
      } else {
        dx = -1, dy = 1;
      }
      if (mag[i] > px(mag, y - dy, x - dx) && mag[i] >= px(mag, y + dy, x + dx)) kept[i] = mag[i];
    }

  for (std::size_t i = 0; i < kept.size(); ++i) edges[i] = kept[i] >= high;
  for (bool changed = true; changed;) {
    changed = false;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const auto i = static_cast<std::size_t>(y * w + x);
        if (edges[i] || kept[i] < low) continue;
        for (int a = -1; a <= 1 && !edges[i]; ++a)
          for (int b = -1; b <= 1; ++b) {
            const int yy = y + a, xx = x + b;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            if (edges[static_cast<std::size_t>(yy * w + xx)]) {
              edges[i] = 1;
              changed = true;
              break;
            }
          }
      }
  }
  return edges;
}

}  // namespace oracle
