// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geopatch/geodata.hpp"

namespace geopatch {

/// Nuisance model for synthetic revisit sequences. Texture families are
/// defined in ground coordinates (meters), so a frame's GSD sets how many
/// pixels a texture period spans.
struct SynthConfig {
  std::size_t class_count = 6;
  std::size_t sequences_per_class = 20;
  std::size_t frames_per_sequence = 8;
  std::size_t image_size = 64;
  double gsd_min = 0.4;
  double gsd_max = 1.2;
  double sun_elevation_min = 60.0;
  double sun_elevation_max = 85.0;
  double off_nadir_min = 0.0;
  double off_nadir_max = 25.0;
  /// Peak hue rotation in radians over the seasonal cycle.
  double hue_drift_amplitude = 0.15;
  int jitter_px = 2;
  double cloud_probability = 0.3;
  double cloud_radius_min_px = 3.0;
  double cloud_radius_max_px = 7.0;
  std::size_t max_clouds = 2;
  double pixel_noise = 0.02;
  /// The class texture fills a disc of this radius (meters) around the scene
  /// center over a class-agnostic background; 0 fills the whole chip.
  double site_radius_m = 12.0;
  double validation_fraction = 0.2;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// Display names of the texture families, indexed by class.
const std::vector<std::string>& synth_class_names();

/// 0.7 + 0.3 sin(sun elevation).
double brightness_scale(double sun_elevation_deg);

/// Deterministic in (label, scene_seed, config). `cloud_masks`, when given,
/// receives each frame's S*S cloud mask.
SceneSequence generate_scene(int label, std::uint64_t scene_seed, const SynthConfig& config,
                             const std::string& scene_id = "scene",
                             std::vector<std::vector<std::uint8_t>>* cloud_masks = nullptr);

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<std::string> class_names;
  std::size_t image_size = 0;
  std::vector<std::string> train;  // scene directories relative to root
  std::vector<std::string> val;
  nlohmann::json manifest;
};

/// Writes every scene in the geodata layout plus dataset.json. Refuses a
/// non-empty `out` unless `force` is set.
DatasetIndex generate_dataset(const SynthConfig& config, const std::filesystem::path& out, bool force);

DatasetIndex load_dataset_index(const std::filesystem::path& root);

/// All frames of the given scenes as labeled training examples.
std::vector<LabeledImage> load_labeled_frames(const DatasetIndex& index, const std::vector<std::string>& scenes);

}  // namespace geopatch
