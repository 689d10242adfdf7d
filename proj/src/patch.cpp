// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "geopatch/patch.hpp"

#include <cmath>

#include "geopatch/io.hpp"

namespace geopatch {

PhysicalPatch::PhysicalPatch(std::size_t n_, double element_size_m_, float fill)
    : n(n_), element_size_m(element_size_m_), elements({n_, n_, 3}, fill) {
  if (!(element_size_m_ > 0.0)) throw UsageError("patch: element size must be positive");
}

std::size_t rendered_side(std::size_t n, double element_size_m, double gsd_m_per_px) {
  if (!(gsd_m_per_px > 0.0)) throw DataError("render: gsd must be positive");
  const double p = std::round(static_cast<double>(n) * element_size_m / gsd_m_per_px);
  if (!(p >= 1.0)) throw NumericError("render: patch below sensor resolution");
  return static_cast<std::size_t>(p);
}

std::shared_ptr<const std::vector<std::uint32_t>> render_index(std::size_t n, std::size_t p) {
  std::vector<std::size_t> element_of(p);
  for (std::size_t i = 0; i < p; ++i) element_of[i] = ((2 * i + 1) * n) / (2 * p);
  auto index = std::make_shared<std::vector<std::uint32_t>>(p * p * 3);
  for (std::size_t y = 0; y < p; ++y) {
    for (std::size_t x = 0; x < p; ++x) {
      const std::size_t e = element_of[y] * n + element_of[x];
      for (std::size_t c = 0; c < 3; ++c) (*index)[(y * p + x) * 3 + c] = static_cast<std::uint32_t>(e * 3 + c);
    }
  }
  return index;
}

template <typename T>
ad::Var<T> render(ad::Var<T> elements, std::size_t n, double element_size_m, double gsd_m_per_px) {
  if (elements.shape() != Shape{n, n, 3}) {
    throw ShapeError("render: elements must be " + shape_string({n, n, 3}) + ", got " + shape_string(elements.shape()));
  }
  const auto p = rendered_side(n, element_size_m, gsd_m_per_px);
  return ad::gather(elements, render_index(n, p), {p, p, 3});
}

TensorF render(const PhysicalPatch& patch, double gsd_m_per_px) {
  ad::Tape<float> tape;
  return render(tape.constant(patch.elements), patch.n, patch.element_size_m, gsd_m_per_px).value();
}

Placement Placement::centered(std::size_t chip_size, std::size_t raster_side, int dx, int dy) {
  const long s = static_cast<long>(chip_size), p = static_cast<long>(raster_side);
  // floor division so that p > S still centers correctly.
  const auto floor_half = [](long v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); };
  return {floor_half(s - p) + dy, floor_half(s - p) + dx};
}

std::vector<std::uint8_t> Footprint::mask() const {
  std::vector<std::uint8_t> m(height * width, 0);
  for (long y = top; y < bottom; ++y) {
    for (long x = left; x < right; ++x) m[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)] = 1;
  }
  return m;
}

Footprint footprint_of(std::size_t chip_h, std::size_t chip_w, std::size_t raster_side, Placement placement) {
  Footprint f;
  f.height = chip_h;
  f.width = chip_w;
  const long p = static_cast<long>(raster_side);
  f.top = std::max<long>(placement.top, 0);
  f.left = std::max<long>(placement.left, 0);
  f.bottom = std::min<long>(placement.top + p, static_cast<long>(chip_h));
  f.right = std::min<long>(placement.left + p, static_cast<long>(chip_w));
  if (f.bottom <= f.top || f.right <= f.left) throw DataError("overlay: patch footprint lies entirely outside the chip");
  f.clipped_pixels = static_cast<std::size_t>(p * p) - f.count();
  return f;
}

template <typename T>
Composite<T> overlay(ad::Var<T> chip, ad::Var<T> raster, Placement placement) {
  const auto& cs = chip.shape();
  const auto& rs = raster.shape();
  if (cs.size() != 3 || rs.size() != 3 || rs[0] != rs[1] || cs[2] != rs[2]) {
    throw ShapeError("overlay: incompatible chip " + shape_string(cs) + " and raster " + shape_string(rs));
  }
  auto fp = footprint_of(cs[0], cs[1], rs[0], placement);
  auto image = ad::paste(chip, raster, static_cast<int>(placement.top), static_cast<int>(placement.left));
  return {image, fp};
}

PlainComposite overlay(const TensorF& chip, const TensorF& raster, Placement placement) {
  ad::Tape<float> tape;
  auto c = overlay(tape.constant(chip), tape.constant(raster), placement);
  return {c.image.value(), c.footprint};
}

std::size_t pixel_count(const PhysicalPatch& patch, double gsd_m_per_px, std::size_t chip_size, int dx, int dy) {
  const auto p = rendered_side(patch.n, patch.element_size_m, gsd_m_per_px);
  return footprint_of(chip_size, chip_size, p, Placement::centered(chip_size, p, dx, dy)).count();
}

void save_patch(const PhysicalPatch& patch, const std::filesystem::path& path) {
  const nlohmann::json header{{"format", "geopatch-patch"},
                              {"version", 1},
                              {"n", patch.n},
                              {"element_size_m", patch.element_size_m},
                              {"element_count", patch.elements.size()}};
  io::write_file_atomic(path, io::encode_framed(header, patch.elements.data()));
}

PhysicalPatch load_patch(const std::filesystem::path& path) {
  const auto origin = path.string();
  auto framed = io::decode_framed(io::read_file(path), origin);
  try {
    if (framed.header.value("format", "") != "geopatch-patch") throw DataError(origin + ": not a geopatch patch file");
    if (framed.header.value("version", -1) != 1) throw DataError(origin + ": unsupported patch version");
    PhysicalPatch patch(framed.header.at("n").get<std::size_t>(), framed.header.at("element_size_m").get<double>());
    if (framed.blob.size() != patch.elements.size()) {
      throw DataError(origin + ": expected " + std::to_string(patch.elements.size()) + " element values, found " +
                      std::to_string(framed.blob.size()));
    }
    for (auto v : framed.blob) {
      if (!(v >= 0.0f && v <= 1.0f)) throw DataError(origin + ": element value outside [0, 1]");
    }
    patch.elements = TensorF({patch.n, patch.n, 3}, std::move(framed.blob));
    return patch;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": malformed header: " + e.what());
  }
}

template ad::Var<float> render<float>(ad::Var<float>, std::size_t, double, double);
template ad::Var<double> render<double>(ad::Var<double>, std::size_t, double, double);
template Composite<float> overlay<float>(ad::Var<float>, ad::Var<float>, Placement);
template Composite<double> overlay<double>(ad::Var<double>, ad::Var<double>, Placement);

}  // namespace geopatch
