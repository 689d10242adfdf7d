// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "geopatch/autodiff.hpp"

namespace geopatch {

/// An opaque, flat, piecewise-constant square surface of n x n RGB elements,
/// each element_size_m meters on a side.
struct PhysicalPatch {
  std::size_t n = 0;
  double element_size_m = 0.0;
  TensorF elements;  // n x n x 3, values in [0, 1]

  PhysicalPatch() = default;
  PhysicalPatch(std::size_t n, double element_size_m, float fill = 0.5f);

  double side_m() const { return static_cast<double>(n) * element_size_m; }
};

/// Pixel side of a rendered patch: round(n * element_size / gsd). Throws
/// NumericError when the result is below one pixel.
std::size_t rendered_side(std::size_t n, double element_size_m, double gsd_m_per_px);

/// Nearest-element lookup: raster pixel i takes element floor((2i+1) n / 2p).
std::shared_ptr<const std::vector<std::uint32_t>> render_index(std::size_t n, std::size_t p);

template <typename T>
ad::Var<T> render(ad::Var<T> elements, std::size_t n, double element_size_m, double gsd_m_per_px);
TensorF render(const PhysicalPatch& patch, double gsd_m_per_px);

/// Resolved footprint position: top-left corner of the p x p raster.
struct Placement {
  long top = 0;
  long left = 0;

  /// top-left = floor((S - p) / 2) shifted by (dx, dy).
  static Placement centered(std::size_t chip_size, std::size_t raster_side, int dx = 0, int dy = 0);
};

struct Footprint {
  std::size_t height = 0, width = 0;  // chip extents
  long top = 0, left = 0;             // clipped window
  long bottom = 0, right = 0;         // exclusive
  std::size_t clipped_pixels = 0;     // raster pixels falling outside the chip

  std::size_t count() const { return static_cast<std::size_t>((bottom - top) * (right - left)); }
  bool contains(long y, long x) const { return y >= top && y < bottom && x >= left && x < right; }
  std::vector<std::uint8_t> mask() const;
};

Footprint footprint_of(std::size_t chip_h, std::size_t chip_w, std::size_t raster_side, Placement placement);

template <typename T>
struct Composite {
  ad::Var<T> image;
  Footprint footprint;
};

/// Opaque overlay: inside the footprint the output is the raster pixel,
/// outside it is the chip pixel. Throws DataError if nothing overlaps.
template <typename T>
Composite<T> overlay(ad::Var<T> chip, ad::Var<T> raster, Placement placement);

struct PlainComposite {
  TensorF image;
  Footprint footprint;
};
PlainComposite overlay(const TensorF& chip, const TensorF& raster, Placement placement);

/// Manipulated pixels for a centered patch: p^2 minus clipped pixels.
std::size_t pixel_count(const PhysicalPatch& patch, double gsd_m_per_px, std::size_t chip_size, int dx = 0,
                        int dy = 0);

void save_patch(const PhysicalPatch& patch, const std::filesystem::path& path);
PhysicalPatch load_patch(const std::filesystem::path& path);

}  // namespace geopatch
