// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "geopatch/autodiff.hpp"
#include "geopatch/patch.hpp"
#include "json.hpp"

namespace geopatch {

struct CannyParams {
  double sigma = 2.0;
  /// Hysteresis thresholds on gradient magnitude normalized to max 1.
  double low = 0.1;
  double high = 0.2;
};

void to_json(nlohmann::json& j, const CannyParams& p);
void from_json(const nlohmann::json& j, CannyParams& p);

struct EdgeMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> mask;  // row-major, 1 = edge
  CannyParams params;

  std::size_t count() const;
};

/// Channel mean of an HxWx3 image.
std::vector<double> grayscale(const TensorF& image);

/// Gaussian blur (radius ceil(4 sigma), replicated border), central
/// difference gradients, non-maximum suppression over four orientations,
/// double threshold with 8-connected hysteresis. The outermost pixel ring
/// never holds an edge.
EdgeMask canny(const std::vector<double>& gray, std::size_t height, std::size_t width, const CannyParams& params = {});
EdgeMask canny(const TensorF& image, const CannyParams& params = {});

/// 3x3 (8-connected) dilation.
EdgeMask dilate(const EdgeMask& edges);

struct PenaltyWeights {
  double lambda1 = 1e-3;
  double lambda2 = 1e-1;
};

/// Subtlety penalty:
///   lambda1 * mean over F of |composite - original|^2
/// + lambda2 * mean over (F and dilate(E)) of |composite - original|^2
/// where |.|^2 sums the three channels of a pixel. The second term is zero
/// when the intersection is empty.
template <typename T>
ad::Var<T> penalty_d(ad::Var<T> composite, const Tensor<T>& original, const Footprint& footprint,
                     const EdgeMask& edges, const PenaltyWeights& weights);

}  // namespace geopatch
