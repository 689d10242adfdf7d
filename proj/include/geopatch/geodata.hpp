// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

// Temporal sequences of geolocated image chips.
//
// On-disk layout of one scene directory:
//   scene.json            {"scene_id", "true_label", "frames": [names in order]}
//   <frame>.ppm           binary P6, 8-bit RGB
//   <frame>.json          FrameMetadata sidecar
// See docs/formats.md and schemas/ for the exact schemas.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geopatch/classifier.hpp"
#include "geopatch/tensor.hpp"
#include "json.hpp"

namespace geopatch {

struct PixelBox {
  long x = 0;
  long y = 0;
  long width = 0;
  long height = 0;
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

struct FrameMetadata {
  double gsd_m_per_px = 1.0;
  double off_nadir_deg = 0.0;
  double cloud_cover_frac = 0.0;
  double sun_elevation_deg = 90.0;
  /// Seconds since the Unix epoch, UTC.
  std::int64_t timestamp = 0;
  PixelBox bbox;
  /// Ground truth content shift; only synthetic data carries it.
  std::optional<std::array<int, 2>> registration_offset_px;

  friend bool operator==(const FrameMetadata&, const FrameMetadata&) = default;
};

void to_json(nlohmann::json& j, const FrameMetadata& m);
void from_json(const nlohmann::json& j, FrameMetadata& m);

std::string format_utc(std::int64_t seconds);
/// Parses "YYYY-MM-DDTHH:MM:SSZ".
std::int64_t parse_utc(const std::string& text);

/// Throws DataError prefixed with `origin` if a field is out of range.
void validate_metadata(const FrameMetadata& m, const std::string& origin);

struct ImageChip {
  std::string name;
  TensorF pixels;  // S x S x 3, values in [0, 1]
  FrameMetadata metadata;

  std::size_t size() const { return pixels.dim(0); }
};

struct SceneSequence {
  std::string scene_id;
  int true_label = 0;
  std::vector<ImageChip> frames;
};

// ---- images

/// Reads a binary P6 8-bit PPM into an HxWx3 tensor scaled to [0, 1].
TensorF read_ppm(const std::filesystem::path& path);
std::string encode_ppm(const TensorF& image);
void write_ppm(const std::filesystem::path& path, const TensorF& image);
/// Writes a binary P4 bitmap; `mask` is row-major, `width * height`.
void write_pbm(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask, std::size_t width,
               std::size_t height);
/// Rounds every value to the nearest multiple of 1/255.
TensorF quantize8(const TensorF& image);

// ---- sequences

SceneSequence load_sequence(const std::filesystem::path& dir);
void save_sequence(const SceneSequence& seq, const std::filesystem::path& dir);

struct FilterRules {
  double max_off_nadir_deg = 30.0;      // strict
  double max_cloud_cover_frac = 0.20;   // strict
  double min_sun_elevation_deg = 60.0;  // inclusive
  std::size_t min_frames = 8;
  bool require_correct_prediction = true;
};

void to_json(nlohmann::json& j, const FilterRules& r);
void from_json(const nlohmann::json& j, FilterRules& r);

struct FilterOutcome {
  std::optional<SceneSequence> sequence;
  std::string rejection;
  std::vector<std::string> dropped;  // "<frame>: <reason>"

  bool accepted() const { return sequence.has_value(); }
};

/// Keeps frames under benign sensing conditions that `model` classifies
/// correctly; rejects the sequence when fewer than min_frames survive.
/// `model` may be null only when require_correct_prediction is false.
FilterOutcome filter_admissible(const SceneSequence& seq, const Model* model, const FilterRules& rules = {});

/// Center-pads `bbox` to a square, crops it out of `raw` (zero fill outside
/// the image), bilinearly resizes to target x target and rescales the GSD.
ImageChip preprocess_chip(const TensorF& raw, const FrameMetadata& metadata, std::size_t target);

/// Bilinear resize with half-pixel centers; identity when sizes match.
TensorF resize_bilinear(const TensorF& image, std::size_t out_h, std::size_t out_w);

}  // namespace geopatch
