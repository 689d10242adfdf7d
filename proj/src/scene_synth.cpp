// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "geopatch/scene_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "geopatch/io.hpp"
#include "geopatch/random.hpp"

namespace geopatch {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  if (class_count < 2 || class_count > synth_class_names().size()) {
    throw UsageError("synth config: class_count must lie in [2, " + std::to_string(synth_class_names().size()) + "]");
  }
  if (sequences_per_class == 0 || frames_per_sequence == 0 || image_size < 8) {
    throw UsageError("synth config: counts must be positive and image_size at least 8");
  }
  if (!(gsd_min > 0.0) || gsd_max < gsd_min) throw UsageError("synth config: need 0 < gsd_min <= gsd_max");
  if (jitter_px < 0) throw UsageError("synth config: jitter_px must be nonnegative");
  if (!(sun_elevation_min > 0.0) || sun_elevation_max > 90.0 || sun_elevation_max < sun_elevation_min) {
    throw UsageError("synth config: sun elevation range must lie in (0, 90]");
  }
  if (off_nadir_min < 0.0 || off_nadir_max >= 90.0 || off_nadir_max < off_nadir_min) {
    throw UsageError("synth config: off-nadir range must lie in [0, 90)");
  }
  if (cloud_probability < 0.0 || cloud_probability > 1.0 || cloud_radius_min_px <= 0.0 ||
      cloud_radius_max_px < cloud_radius_min_px) {
    throw UsageError("synth config: invalid cloud parameters");
  }
  if (!(site_radius_m >= 0.0)) throw UsageError("synth config: site_radius_m must be nonnegative");
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
    throw UsageError("synth config: validation_fraction must lie in [0, 1)");
  }
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"class_count", c.class_count},
                     {"sequences_per_class", c.sequences_per_class},
                     {"frames_per_sequence", c.frames_per_sequence},
                     {"image_size", c.image_size},
                     {"gsd_min", c.gsd_min},
                     {"gsd_max", c.gsd_max},
                     {"sun_elevation_min", c.sun_elevation_min},
                     {"sun_elevation_max", c.sun_elevation_max},
                     {"off_nadir_min", c.off_nadir_min},
                     {"off_nadir_max", c.off_nadir_max},
                     {"hue_drift_amplitude", c.hue_drift_amplitude},
                     {"jitter_px", c.jitter_px},
                     {"cloud_probability", c.cloud_probability},
                     {"cloud_radius_min_px", c.cloud_radius_min_px},
                     {"cloud_radius_max_px", c.cloud_radius_max_px},
                     {"max_clouds", c.max_clouds},
                     {"pixel_noise", c.pixel_noise},
                     {"site_radius_m", c.site_radius_m},
                     {"validation_fraction", c.validation_fraction},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
#define GP_FIELD(name) c.name = j.value(#name, c.name)
  GP_FIELD(class_count);
  GP_FIELD(sequences_per_class);
  GP_FIELD(frames_per_sequence);
  GP_FIELD(image_size);
  GP_FIELD(gsd_min);
  GP_FIELD(gsd_max);
  GP_FIELD(sun_elevation_min);
  GP_FIELD(sun_elevation_max);
  GP_FIELD(off_nadir_min);
  GP_FIELD(off_nadir_max);
  GP_FIELD(hue_drift_amplitude);
  GP_FIELD(jitter_px);
  GP_FIELD(cloud_probability);
  GP_FIELD(cloud_radius_min_px);
  GP_FIELD(cloud_radius_max_px);
  GP_FIELD(max_clouds);
  GP_FIELD(pixel_noise);
  GP_FIELD(site_radius_m);
  GP_FIELD(validation_fraction);
  GP_FIELD(seed);
#undef GP_FIELD
}

const std::vector<std::string>& synth_class_names() {
  static const std::vector<std::string> names = {"crop_field", "hospital", "office_building",
                                                 "park",       "lake",     "stadium"};
  return names;
}

double brightness_scale(double sun_elevation_deg) {
  return 0.7 + 0.3 * std::sin(sun_elevation_deg * std::numbers::pi / 180.0);
}

namespace {

using Rgb = std::array<double, 3>;

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

double smoothstep01(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return v * v * (3.0 - 2.0 * v);
}

/// Per-scene parameters of one texture family, evaluated in meters.
struct Texture {
  int family = 0;
  double angle = 0.0;
  double period = 10.0;
  double phase = 0.0;
  double cx = 0.0, cy = 0.0;
  Rgb color_a{}, color_b{};
  std::vector<std::array<double, 3>> blobs;  // x, y, radius

  Rgb at(double u, double v) const {
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double ru = u * ca + v * sa;
    const double rv = -u * sa + v * ca;
    constexpr double tau = 2.0 * std::numbers::pi;
    switch (family) {
      case 0: {  // stripes
        return mix(color_a, color_b, 0.5 + 0.5 * std::sin(tau * ru / period + phase));
      }
      case 1: {  // checkerboard blocks
        const long i = static_cast<long>(std::floor(ru / period + phase));
        const long k = static_cast<long>(std::floor(rv / period + phase));
        return ((i + k) & 1) ? color_a : color_b;
      }
      case 2: {  // thin grid lines
        const double fu = ru / period + phase - std::floor(ru / period + phase);
        const double fv = rv / period + phase - std::floor(rv / period + phase);
        const double line = 1.5 / period;
        return (fu < line || fv < line) ? color_b : color_a;
      }
      case 3: {  // blobs
        double field = 0.0;
        for (const auto& b : blobs) {
          const double dx = u - b[0], dy = v - b[1];
          field += std::exp(-(dx * dx + dy * dy) / (2.0 * b[2] * b[2]));
        }
        return mix(color_a, color_b, smoothstep01(field));
      }
      case 4: {  // linear gradient
        return mix(color_a, color_b, smoothstep01(0.5 + ru / (4.0 * period)));
      }
      default: {  // concentric rings
        const double r = std::hypot(u - cx, v - cy);
        return mix(color_a, color_b, 0.5 + 0.5 * std::cos(tau * r / period + phase));
      }
    }
  }
};

Rgb jitter_color(Rgb c, Rng& rng) {
  for (auto& v : c) v = std::clamp(v + rng.uniform(-0.05, 0.05), 0.0, 1.0);
  return c;
}

Texture make_texture(int family, Rng& rng) {
  Texture t;
  t.family = family;
  t.angle = rng.uniform(0.0, std::numbers::pi);
  t.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  switch (family) {
    case 0:
      t.period = rng.uniform(6.0, 12.0);
      t.color_a = jitter_color({0.25, 0.55, 0.20}, rng);
      t.color_b = jitter_color({0.58, 0.45, 0.25}, rng);
      break;
    case 1:
      t.period = rng.uniform(8.0, 14.0);
      t.color_a = jitter_color({0.82, 0.80, 0.78}, rng);
      t.color_b = jitter_color({0.62, 0.30, 0.28}, rng);
      break;
    case 2:
      t.period = rng.uniform(7.0, 12.0);
      t.color_a = jitter_color({0.55, 0.60, 0.70}, rng);
      t.color_b = jitter_color({0.18, 0.20, 0.28}, rng);
      break;
    case 3: {
      t.color_a = jitter_color({0.12, 0.30, 0.12}, rng);
      t.color_b = jitter_color({0.35, 0.62, 0.28}, rng);
      const auto count = rng.uniform_int(12, 18);
      for (long i = 0; i < count; ++i) {
        t.blobs.push_back({rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0), rng.uniform(4.0, 9.0)});
      }
      break;
    }
    case 4:
      t.period = rng.uniform(8.0, 14.0);
      t.color_a = jitter_color({0.12, 0.25, 0.50}, rng);
      t.color_b = jitter_color({0.40, 0.58, 0.72}, rng);
      break;
    default:
      t.period = rng.uniform(6.0, 11.0);
      t.cx = rng.uniform(-5.0, 5.0);
      t.cy = rng.uniform(-5.0, 5.0);
      t.color_a = jitter_color({0.78, 0.72, 0.55}, rng);
      t.color_b = jitter_color({0.38, 0.50, 0.32}, rng);
      break;
  }
  return t;
}

/// Class-agnostic terrain: a few low-frequency plane waves blending two
/// earth tones.
struct Background {
  Rgb color_a{}, color_b{};
  std::array<std::array<double, 4>, 3> waves{};  // kx, ky, phase, weight

  Rgb at(double u, double v) const {
    double field = 0.0;
    for (const auto& w : waves) field += w[3] * std::sin(w[0] * u + w[1] * v + w[2]);
    return mix(color_a, color_b, 0.5 + 0.5 * std::tanh(field));
  }
};

Background make_background(Rng& rng) {
  Background b;
  b.color_a = jitter_color({0.45, 0.42, 0.36}, rng);
  b.color_b = jitter_color({0.36, 0.40, 0.30}, rng);
  for (auto& w : b.waves) {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double k = 2.0 * std::numbers::pi / rng.uniform(25.0, 60.0);
    w = {k * std::cos(angle), k * std::sin(angle), rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.3, 0.8)};
  }
  return b;
}

/// Rotation by `angle` radians about the gray axis of RGB space.
Rgb rotate_hue(const Rgb& c, double angle) {
  const double cs = std::cos(angle), sn = std::sin(angle);
  const double k = (1.0 - cs) / 3.0, r = std::sqrt(1.0 / 3.0) * sn;
  return {c[0] * (cs + k) + c[1] * (k - r) + c[2] * (k + r), c[0] * (k + r) + c[1] * (cs + k) + c[2] * (k - r),
          c[0] * (k - r) + c[1] * (k + r) + c[2] * (cs + k)};
}

double day_of_year(std::int64_t timestamp) {
  const double days = static_cast<double>(timestamp) / 86400.0;
  return std::fmod(days, 365.2425);
}

}  // namespace

SceneSequence generate_scene(int label, std::uint64_t scene_seed, const SynthConfig& config,
                             const std::string& scene_id, std::vector<std::vector<std::uint8_t>>* cloud_masks) {
  config.validate();
  if (label < 0 || static_cast<std::size_t>(label) >= config.class_count) {
    throw UsageError("generate_scene: label " + std::to_string(label) + " outside [0, " +
                     std::to_string(config.class_count) + ")");
  }
  Rng scene_rng(derive_seed(scene_seed, {0x7363656e65ULL}));
  const Texture texture = make_texture(label, scene_rng);
  const Background background = make_background(scene_rng);
  const double season_offset = scene_rng.uniform(0.0, 2.0 * std::numbers::pi);
  // 2016-01-01T00:00:00Z plus a per-scene start within the first year.
  std::int64_t timestamp = 1451606400 + scene_rng.uniform_int(0, 364) * 86400 + scene_rng.uniform_int(36000, 50400);

  const std::size_t s = config.image_size;
  SceneSequence seq;
  seq.scene_id = scene_id;
  seq.true_label = label;
  for (std::size_t f = 0; f < config.frames_per_sequence; ++f) {
    Rng rng(derive_seed(scene_seed, {0x6672616d65ULL, f}));
    if (f > 0) timestamp += rng.uniform_int(15, 60) * 86400 + rng.uniform_int(-3600, 3600);
    FrameMetadata meta;
    meta.timestamp = timestamp;
    meta.gsd_m_per_px = rng.uniform(config.gsd_min, config.gsd_max);
    meta.sun_elevation_deg = rng.uniform(config.sun_elevation_min, config.sun_elevation_max);
    meta.off_nadir_deg = rng.uniform(config.off_nadir_min, config.off_nadir_max);
    meta.bbox = {0, 0, static_cast<long>(s), static_cast<long>(s)};
    const int dx = static_cast<int>(rng.uniform_int(-config.jitter_px, config.jitter_px));
    const int dy = static_cast<int>(rng.uniform_int(-config.jitter_px, config.jitter_px));
    meta.registration_offset_px = std::array<int, 2>{dx, dy};

    const double season = 2.0 * std::numbers::pi * day_of_year(timestamp) / 365.2425 + season_offset;
    const double hue = config.hue_drift_amplitude * std::sin(season);
    const double gain = brightness_scale(meta.sun_elevation_deg);
    const double half = static_cast<double>(s) / 2.0;

    TensorF img({s, s, 3});
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        // Pixel (x, y) shows the ground point that sits at (x - dx, y - dy)
        // in a registered frame.
        const double u = (static_cast<double>(x) + 0.5 - half - dx) * meta.gsd_m_per_px;
        const double v = (static_cast<double>(y) + 0.5 - half - dy) * meta.gsd_m_per_px;
        Rgb ground = texture.at(u, v);
        if (config.site_radius_m > 0.0) {
          // 1 m soft rim so the site boundary is not a hard aliasing edge.
          const double inside = smoothstep01(config.site_radius_m + 0.5 - std::hypot(u, v));
          ground = mix(background.at(u, v), ground, inside);
        }
        const Rgb c = rotate_hue(ground, hue);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double noisy = c[ch] * gain + rng.uniform(-config.pixel_noise, config.pixel_noise);
          img.at(y, x, ch) = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
        }
      }
    }

    std::vector<std::uint8_t> cloud(s * s, 0);
    if (rng.bernoulli(config.cloud_probability)) {
      const auto count = rng.uniform_int(1, static_cast<long>(std::max<std::size_t>(config.max_clouds, 1)));
      for (long i = 0; i < count; ++i) {
        const double cx = rng.uniform(0.0, static_cast<double>(s));
        const double cy = rng.uniform(0.0, static_cast<double>(s));
        const double r = rng.uniform(config.cloud_radius_min_px, config.cloud_radius_max_px);
        for (std::size_t y = 0; y < s; ++y) {
          for (std::size_t x = 0; x < s; ++x) {
            const double ddx = static_cast<double>(x) + 0.5 - cx, ddy = static_cast<double>(y) + 0.5 - cy;
            if (ddx * ddx + ddy * ddy <= r * r) cloud[y * s + x] = 1;
          }
        }
      }
    }
    std::size_t covered = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      if (!cloud[i]) continue;
      ++covered;
      for (std::size_t ch = 0; ch < 3; ++ch) img[i * 3 + ch] = 0.93f;
    }
    meta.cloud_cover_frac = static_cast<double>(covered) / static_cast<double>(s * s);
    if (cloud_masks) cloud_masks->push_back(std::move(cloud));

    ImageChip chip;
    char name[32];
    std::snprintf(name, sizeof name, "frame_%02zu", f);
    chip.name = name;
    chip.pixels = quantize8(img);
    chip.metadata = meta;
    seq.frames.push_back(std::move(chip));
  }
  return seq;
}

DatasetIndex generate_dataset(const SynthConfig& config, const fs::path& out, bool force) {
  config.validate();
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) throw UsageError(out.string() + " exists and is not empty (use --force to overwrite)");
    fs::remove_all(out);
  }
  fs::create_directories(out);
  const auto& names = synth_class_names();
  const std::size_t val_count = static_cast<std::size_t>(
      std::lround(config.validation_fraction * static_cast<double>(config.sequences_per_class)));
  DatasetIndex index;
  index.root = out;
  index.image_size = config.image_size;
  index.class_names.assign(names.begin(), names.begin() + static_cast<long>(config.class_count));
  nlohmann::json scenes = nlohmann::json::array();
  for (std::size_t label = 0; label < config.class_count; ++label) {
    for (std::size_t i = 0; i < config.sequences_per_class; ++i) {
      const auto seed = derive_seed(config.seed, {label, i});
      char id[64];
      std::snprintf(id, sizeof id, "%s_%03zu", names[label].c_str(), i);
      const bool is_val = i >= config.sequences_per_class - val_count;
      const std::string rel = std::string(is_val ? "val/" : "train/") + id;
      save_sequence(generate_scene(static_cast<int>(label), seed, config, id), out / rel);
      (is_val ? index.val : index.train).push_back(rel);
      scenes.push_back({{"scene_id", id}, {"path", rel}, {"label", label}, {"seed", seed}});
    }
  }
  index.manifest = nlohmann::json{{"format", "geopatch-dataset"},
                                  {"version", 1},
                                  {"class_names", index.class_names},
                                  {"image_size", config.image_size},
                                  {"synth_config", config},
                                  {"train", index.train},
                                  {"val", index.val},
                                  {"scenes", scenes}};
  io::write_json(out / "dataset.json", index.manifest);
  return index;
}

DatasetIndex load_dataset_index(const fs::path& root) {
  const auto path = root / "dataset.json";
  if (!fs::exists(path)) throw DataError(path.string() + ": missing dataset manifest");
  DatasetIndex index;
  index.root = root;
  index.manifest = io::read_json(path);
  try {
    index.class_names = index.manifest.at("class_names").get<std::vector<std::string>>();
    index.image_size = index.manifest.at("image_size").get<std::size_t>();
    index.train = index.manifest.at("train").get<std::vector<std::string>>();
    index.val = index.manifest.at("val").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return index;
}

std::vector<LabeledImage> load_labeled_frames(const DatasetIndex& index, const std::vector<std::string>& scenes) {
  std::vector<LabeledImage> out;
  for (const auto& rel : scenes) {
    auto seq = load_sequence(index.root / rel);
    for (auto& f : seq.frames) out.push_back({std::move(f.pixels), seq.true_label});
  }
  return out;
}

}  // namespace geopatch
