// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "geopatch/edge_penalty.hpp"

#include <algorithm>
#include <cmath>

namespace geopatch {

void to_json(nlohmann::json& j, const CannyParams& p) {
  j = nlohmann::json{{"sigma", p.sigma}, {"low", p.low}, {"high", p.high}};
}

void from_json(const nlohmann::json& j, CannyParams& p) {
  p.sigma = j.value("sigma", p.sigma);
  p.low = j.value("low", p.low);
  p.high = j.value("high", p.high);
}

std::size_t EdgeMask::count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::vector<double> grayscale(const TensorF& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("grayscale: expected HxWx3 image");
  std::vector<double> gray(image.dim(0) * image.dim(1));
  for (std::size_t i = 0; i < gray.size(); ++i) {
    gray[i] = (static_cast<double>(image[i * 3]) + image[i * 3 + 1] + image[i * 3 + 2]) / 3.0;
  }
  return gray;
}

namespace {

std::vector<double> gaussian_blur(const std::vector<double>& img, long h, long w, double sigma) {
  if (!(sigma > 0.0)) return img;
  const long radius = static_cast<long>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : kernel) v /= total;

  std::vector<double> rows(img.size()), out(img.size());
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * img[static_cast<std::size_t>(y * w + std::clamp(x + k, 0L, w - 1))];
      }
      rows[static_cast<std::size_t>(y * w + x)] = acc;
    }
  }
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * rows[static_cast<std::size_t>(std::clamp(y + k, 0L, h - 1) * w + x)];
      }
      out[static_cast<std::size_t>(y * w + x)] = acc;
    }
  }
  return out;
}

}  // namespace

EdgeMask canny(const std::vector<double>& gray, std::size_t height, std::size_t width, const CannyParams& params) {
  if (gray.size() != height * width) throw ShapeError("canny: image size does not match extents");
  if (!(params.low >= 0.0 && params.low < params.high)) throw UsageError("canny: need 0 <= low < high");
  const long h = static_cast<long>(height), w = static_cast<long>(width);
  EdgeMask result{height, width, std::vector<std::uint8_t>(gray.size(), 0), params};
  if (h < 3 || w < 3) return result;

  const auto blurred = gaussian_blur(gray, h, w, params.sigma);
  const auto at = [&](long y, long x) {
    return blurred[static_cast<std::size_t>(std::clamp(y, 0L, h - 1) * w + std::clamp(x, 0L, w - 1))];
  };
  std::vector<double> gx(gray.size()), gy(gray.size()), mag(gray.size());
  double max_mag = 0.0;
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y * w + x);
      gx[i] = (at(y, x + 1) - at(y, x - 1)) / 2.0;
      gy[i] = (at(y + 1, x) - at(y - 1, x)) / 2.0;
      mag[i] = std::hypot(gx[i], gy[i]);
      max_mag = std::max(max_mag, mag[i]);
    }
  }
  if (max_mag <= 1e-12) return result;
  for (auto& m : mag) m /= max_mag;

  // tan(22.5 deg) and tan(67.5 deg) split the four orientation sectors.
  constexpr double kTan22 = 0.41421356237309503;
  constexpr double kTan67 = 2.4142135623730949;
  std::vector<double> thin(gray.size(), 0.0);
  for (long y = 1; y < h - 1; ++y) {
    for (long x = 1; x < w - 1; ++x) {
      const auto i = static_cast<std::size_t>(y * w + x);
      const double ax = std::abs(gx[i]), ay = std::abs(gy[i]);
      long dx = 0, dy = 0;
      if (ay <= kTan22 * ax) {
        dx = 1;
      } else if (ay >= kTan67 * ax) {
        dy = 1;
      } else if ((gx[i] > 0) == (gy[i] > 0)) {
        dx = 1;
        dy = 1;
      } else {
        dx = -1;
        dy = 1;
      }
      const double before = mag[static_cast<std::size_t>((y - dy) * w + (x - dx))];
      const double after = mag[static_cast<std::size_t>((y + dy) * w + (x + dx))];
      if (mag[i] > before && mag[i] >= after) thin[i] = mag[i];
    }
  }

  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < thin.size(); ++i) {
    if (thin[i] >= params.high) {
      result.mask[i] = 1;
      stack.push_back(i);
    }
  }
  while (!stack.empty()) {
    const auto i = stack.back();
    stack.pop_back();
    const long y = static_cast<long>(i) / w, x = static_cast<long>(i) % w;
    for (long ny = y - 1; ny <= y + 1; ++ny) {
      for (long nx = x - 1; nx <= x + 1; ++nx) {
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const auto j = static_cast<std::size_t>(ny * w + nx);
        if (!result.mask[j] && thin[j] >= params.low) {
          result.mask[j] = 1;
          stack.push_back(j);
        }
      }
    }
  }
  return result;
}

EdgeMask canny(const TensorF& image, const CannyParams& params) {
  return canny(grayscale(image), image.dim(0), image.dim(1), params);
}

EdgeMask dilate(const EdgeMask& edges) {
  EdgeMask out = edges;
  const long h = static_cast<long>(edges.height), w = static_cast<long>(edges.width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      if (!edges.mask[static_cast<std::size_t>(y * w + x)]) continue;
      for (long ny = std::max(y - 1, 0L); ny <= std::min(y + 1, h - 1); ++ny) {
        for (long nx = std::max(x - 1, 0L); nx <= std::min(x + 1, w - 1); ++nx) {
          out.mask[static_cast<std::size_t>(ny * w + nx)] = 1;
        }
      }
    }
  }
  return out;
}

template <typename T>
ad::Var<T> penalty_d(ad::Var<T> composite, const Tensor<T>& original, const Footprint& footprint,
                     const EdgeMask& edges, const PenaltyWeights& weights) {
  if (composite.shape() != original.shape()) {
    throw ShapeError("penalty_d: composite " + shape_string(composite.shape()) + " vs original " +
                     shape_string(original.shape()));
  }
  const std::size_t h = original.dim(0), w = original.dim(1), c = original.dim(2);
  if (edges.height != h || edges.width != w || footprint.height != h || footprint.width != w) {
    throw ShapeError("penalty_d: mask extents differ from the image");
  }
  if (footprint.count() == 0) throw DataError("penalty_d: empty footprint");
  if (weights.lambda1 < 0.0 || weights.lambda2 < 0.0) throw UsageError("penalty_d: weights must be nonnegative");

  const auto near_edge = dilate(edges);
  std::size_t edge_pixels = 0;
  for (long y = footprint.top; y < footprint.bottom; ++y) {
    for (long x = footprint.left; x < footprint.right; ++x) {
      edge_pixels += near_edge.mask[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
    }
  }
  const T w1 = static_cast<T>(weights.lambda1 / static_cast<double>(footprint.count()));
  const T w2 = edge_pixels ? static_cast<T>(weights.lambda2 / static_cast<double>(edge_pixels)) : T{0};
  std::vector<T> per_element(original.size(), T{0});
  for (long y = footprint.top; y < footprint.bottom; ++y) {
    for (long x = footprint.left; x < footprint.right; ++x) {
      const auto px = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
      const T wt = w1 + (near_edge.mask[px] ? w2 : T{0});
      for (std::size_t ch = 0; ch < c; ++ch) per_element[px * c + ch] = wt;
    }
  }
  auto& tape = composite.tape();
  auto diff = ad::sub(composite, tape.constant(original));
  return ad::weighted_sum(ad::mul(diff, diff), std::move(per_element));
}

template ad::Var<float> penalty_d<float>(ad::Var<float>, const TensorF&, const Footprint&, const EdgeMask&,
                                         const PenaltyWeights&);
template ad::Var<double> penalty_d<double>(ad::Var<double>, const TensorD&, const Footprint&, const EdgeMask&,
                                           const PenaltyWeights&);

}  // namespace geopatch
