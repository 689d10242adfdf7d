// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "geopatch/geodata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "geopatch/io.hpp"

namespace geopatch {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- time

namespace {

// Howard Hinnant's civil-date algorithms.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
}

}  // namespace

std::string format_utc(std::int64_t seconds) {
  std::int64_t days = seconds / 86400;
  std::int64_t rem = seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  std::int64_t y = 0;
  unsigned m = 0, d = 0;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lldZ", static_cast<long long>(y), m, d,
                static_cast<long long>(rem / 3600), static_cast<long long>((rem / 60) % 60),
                static_cast<long long>(rem % 60));
  return buf;
}

std::int64_t parse_utc(const std::string& text) {
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char z = 0;
  if (std::sscanf(text.c_str(), "%4d-%2u-%2uT%2u:%2u:%2u%c", &y, &mo, &d, &h, &mi, &s, &z) != 7 || z != 'Z' ||
      mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s > 60) {
    throw DataError("invalid UTC timestamp '" + text + "' (expected YYYY-MM-DDTHH:MM:SSZ)");
  }
  return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
}

// ---------------------------------------------------------------- metadata

void to_json(nlohmann::json& j, const FrameMetadata& m) {
  j = nlohmann::json{{"gsd_m_per_px", m.gsd_m_per_px},
                     {"off_nadir_deg", m.off_nadir_deg},
                     {"cloud_cover_frac", m.cloud_cover_frac},
                     {"sun_elevation_deg", m.sun_elevation_deg},
                     {"timestamp", format_utc(m.timestamp)},
                     {"bbox", {m.bbox.x, m.bbox.y, m.bbox.width, m.bbox.height}}};
  if (m.registration_offset_px) {
    j["registration_offset_px"] = *m.registration_offset_px;
  } else {
    j["registration_offset_px"] = nullptr;
  }
}

void from_json(const nlohmann::json& j, FrameMetadata& m) {
  m.gsd_m_per_px = j.at("gsd_m_per_px").get<double>();
  m.off_nadir_deg = j.at("off_nadir_deg").get<double>();
  m.cloud_cover_frac = j.at("cloud_cover_frac").get<double>();
  m.sun_elevation_deg = j.at("sun_elevation_deg").get<double>();
  m.timestamp = parse_utc(j.at("timestamp").get<std::string>());
  const auto bbox = j.at("bbox").get<std::vector<long>>();
  if (bbox.size() != 4) throw DataError("bbox must be [x, y, width, height]");
  m.bbox = {bbox[0], bbox[1], bbox[2], bbox[3]};
  m.registration_offset_px.reset();
  if (j.contains("registration_offset_px") && !j.at("registration_offset_px").is_null()) {
    m.registration_offset_px = j.at("registration_offset_px").get<std::array<int, 2>>();
  }
}

void validate_metadata(const FrameMetadata& m, const std::string& origin) {
  const auto fail = [&](const std::string& what) { throw DataError(origin + ": " + what); };
  if (!(m.gsd_m_per_px > 0.0) || !std::isfinite(m.gsd_m_per_px)) fail("gsd_m_per_px must be positive");
  if (!(m.off_nadir_deg >= 0.0 && m.off_nadir_deg < 90.0)) fail("off_nadir_deg must lie in [0, 90)");
  if (!(m.cloud_cover_frac >= 0.0 && m.cloud_cover_frac <= 1.0)) fail("cloud_cover_frac must lie in [0, 1]");
  if (!(m.sun_elevation_deg > 0.0 && m.sun_elevation_deg <= 90.0)) fail("sun_elevation_deg must lie in (0, 90]");
  if (m.bbox.width <= 0 || m.bbox.height <= 0) fail("bbox must have positive extent");
}

// ---------------------------------------------------------------- images

namespace {

// Reads the next header token of a PNM file, skipping whitespace/comments.
std::string pnm_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  const auto start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  return bytes.substr(start, pos - start);
}

}  // namespace

TensorF read_ppm(const fs::path& path) {
  const auto bytes = io::read_file(path);
  const auto origin = path.string();
  std::size_t pos = 0;
  if (pnm_token(bytes, pos) != "P6") throw DataError(origin + ": not a binary P6 PPM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(pnm_token(bytes, pos));
    h = std::stoul(pnm_token(bytes, pos));
    maxval = std::stoul(pnm_token(bytes, pos));
  } catch (const std::exception&) {
    throw DataError(origin + ": malformed PPM header");
  }
  if (w == 0 || h == 0 || maxval != 255) throw DataError(origin + ": only 8-bit PPM with positive extents supported");
  ++pos;  // single whitespace byte after maxval
  if (bytes.size() < pos + w * h * 3) throw DataError(origin + ": truncated pixel data");
  TensorF img({h, w, 3});
  for (std::size_t i = 0; i < w * h * 3; ++i) {
    img[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
  }
  return img;
}

std::string encode_ppm(const TensorF& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("ppm: expected HxWx3 image, got " + shape_string(image.shape()));
  std::string out = "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  const auto offset = out.size();
  out.resize(offset + image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float v = std::clamp(image[i], 0.0f, 1.0f);
    out[offset + i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
  }
  return out;
}

void write_ppm(const fs::path& path, const TensorF& image) { io::write_file_atomic(path, encode_ppm(image)); }

void write_pbm(const fs::path& path, const std::vector<std::uint8_t>& mask, std::size_t width, std::size_t height) {
  if (mask.size() != width * height) throw ShapeError("pbm: mask size does not match extents");
  std::string out = "P4\n" + std::to_string(width) + " " + std::to_string(height) + "\n";
  const std::size_t row_bytes = (width + 7) / 8;
  for (std::size_t y = 0; y < height; ++y) {
    std::string row(row_bytes, '\0');
    for (std::size_t x = 0; x < width; ++x) {
      if (mask[y * width + x]) row[x / 8] = static_cast<char>(row[x / 8] | (0x80 >> (x % 8)));
    }
    out += row;
  }
  io::write_file_atomic(path, out);
}

TensorF quantize8(const TensorF& image) {
  TensorF out = image;
  for (auto& v : out.storage()) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return out;
}

// ---------------------------------------------------------------- sequences

SceneSequence load_sequence(const fs::path& dir) {
  const auto manifest_path = dir / "scene.json";
  if (!fs::exists(manifest_path)) throw DataError(manifest_path.string() + ": missing scene manifest");
  const auto manifest = io::read_json(manifest_path);
  SceneSequence seq;
  try {
    seq.scene_id = manifest.at("scene_id").get<std::string>();
    seq.true_label = manifest.at("true_label").get<int>();
    if (seq.true_label < 0) throw DataError(manifest_path.string() + ": true_label must be nonnegative");
    for (const auto& name : manifest.at("frames")) {
      ImageChip chip;
      chip.name = name.get<std::string>();
      const auto image_path = dir / (chip.name + ".ppm");
      const auto sidecar_path = dir / (chip.name + ".json");
      if (!fs::exists(sidecar_path)) throw DataError(sidecar_path.string() + ": missing metadata sidecar");
      if (!fs::exists(image_path)) throw DataError(image_path.string() + ": missing frame image");
      try {
        chip.metadata = io::read_json(sidecar_path).get<FrameMetadata>();
      } catch (const nlohmann::json::exception& e) {
        throw DataError(sidecar_path.string() + ": " + e.what());
      } catch (const DataError& e) {
        throw DataError(sidecar_path.string() + ": " + e.what());
      }
      validate_metadata(chip.metadata, sidecar_path.string());
      chip.pixels = read_ppm(image_path);
      if (chip.pixels.dim(0) != chip.pixels.dim(1)) {
        throw DataError(image_path.string() + ": chip must be square, got " + shape_string(chip.pixels.shape()));
      }
      if (!seq.frames.empty() && chip.pixels.shape() != seq.frames.front().pixels.shape()) {
        throw DataError(image_path.string() + ": frame extents differ within the sequence");
      }
      seq.frames.push_back(std::move(chip));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  if (seq.frames.empty()) throw DataError(manifest_path.string() + ": sequence has no frames");
  std::stable_sort(seq.frames.begin(), seq.frames.end(), [](const ImageChip& a, const ImageChip& b) {
    return a.metadata.timestamp < b.metadata.timestamp;
  });
  for (std::size_t i = 1; i < seq.frames.size(); ++i) {
    if (seq.frames[i].metadata.timestamp == seq.frames[i - 1].metadata.timestamp) {
      throw DataError((dir / (seq.frames[i].name + ".json")).string() + ": duplicate timestamp within sequence");
    }
  }
  return seq;
}

void save_sequence(const SceneSequence& seq, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : seq.frames) {
    write_ppm(dir / (f.name + ".ppm"), f.pixels);
    io::write_json(dir / (f.name + ".json"), f.metadata);
    frames.push_back(f.name);
  }
  io::write_json(dir / "scene.json",
                 nlohmann::json{{"scene_id", seq.scene_id}, {"true_label", seq.true_label}, {"frames", frames}});
}

void to_json(nlohmann::json& j, const FilterRules& r) {
  j = nlohmann::json{{"max_off_nadir_deg", r.max_off_nadir_deg},
                     {"max_cloud_cover_frac", r.max_cloud_cover_frac},
                     {"min_sun_elevation_deg", r.min_sun_elevation_deg},
                     {"min_frames", r.min_frames},
                     {"require_correct_prediction", r.require_correct_prediction}};
}

void from_json(const nlohmann::json& j, FilterRules& r) {
  r.max_off_nadir_deg = j.value("max_off_nadir_deg", r.max_off_nadir_deg);
  r.max_cloud_cover_frac = j.value("max_cloud_cover_frac", r.max_cloud_cover_frac);
  r.min_sun_elevation_deg = j.value("min_sun_elevation_deg", r.min_sun_elevation_deg);
  r.min_frames = j.value("min_frames", r.min_frames);
  r.require_correct_prediction = j.value("require_correct_prediction", r.require_correct_prediction);
}

FilterOutcome filter_admissible(const SceneSequence& seq, const Model* model, const FilterRules& rules) {
  if (rules.require_correct_prediction && model == nullptr) {
    throw UsageError("filter_admissible: a model is required to check predictions");
  }
  FilterOutcome outcome;
  SceneSequence kept{seq.scene_id, seq.true_label, {}};
  for (const auto& f : seq.frames) {
    const auto& m = f.metadata;
    std::string reason;
    if (!(m.off_nadir_deg < rules.max_off_nadir_deg)) {
      reason = "off-nadir angle too large";
    } else if (!(m.cloud_cover_frac < rules.max_cloud_cover_frac)) {
      reason = "cloud cover too large";
    } else if (!(m.sun_elevation_deg >= rules.min_sun_elevation_deg)) {
      reason = "sun elevation too low";
    } else if (rules.require_correct_prediction && model->predict(f.pixels).label != seq.true_label) {
      reason = "misclassified before attack";
    }
    if (reason.empty()) {
      kept.frames.push_back(f);
    } else {
      outcome.dropped.push_back(f.name + ": " + reason);
    }
  }
  if (kept.frames.size() < rules.min_frames) {
    outcome.rejection = std::to_string(kept.frames.size()) + " admissible frames, need at least " +
                        std::to_string(rules.min_frames);
  } else {
    outcome.sequence = std::move(kept);
  }
  return outcome;
}

// ---------------------------------------------------------------- preprocessing

TensorF resize_bilinear(const TensorF& image, std::size_t out_h, std::size_t out_w) {
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (h == out_h && w == out_w) return image;
  TensorF out({out_h, out_w, c});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = image.at(y0, x0, ch) * (1.0 - tx) + image.at(y0, x1, ch) * tx;
        const double bottom = image.at(y1, x0, ch) * (1.0 - tx) + image.at(y1, x1, ch) * tx;
        out.at(y, x, ch) = static_cast<float>(top * (1.0 - ty) + bottom * ty);
      }
    }
  }
  return out;
}

ImageChip preprocess_chip(const TensorF& raw, const FrameMetadata& metadata, std::size_t target) {
  if (raw.rank() != 3 || raw.dim(2) != 3) throw ShapeError("preprocess_chip: expected HxWx3 image");
  if (target == 0) throw UsageError("preprocess_chip: target size must be positive");
  const auto& b = metadata.bbox;
  const long h = static_cast<long>(raw.dim(0)), w = static_cast<long>(raw.dim(1));
  if (b.width <= 0 || b.height <= 0) throw DataError("preprocess_chip: degenerate bbox");
  if (b.x < 0 || b.y < 0 || b.x + b.width > w || b.y + b.height > h) {
    throw DataError("preprocess_chip: bbox lies outside the source image");
  }
  // Pad the short side symmetrically; the extra row/column of an odd
  // difference goes to the bottom/right.
  const long side = std::max(b.width, b.height);
  const long top = b.y - (side - b.height) / 2;
  const long left = b.x - (side - b.width) / 2;
  TensorF crop({static_cast<std::size_t>(side), static_cast<std::size_t>(side), 3});
  for (long y = 0; y < side; ++y) {
    const long sy = top + y;
    if (sy < 0 || sy >= h) continue;
    for (long x = 0; x < side; ++x) {
      const long sx = left + x;
      if (sx < 0 || sx >= w) continue;
      for (std::size_t c = 0; c < 3; ++c) crop.at(y, x, c) = raw.at(sy, sx, c);
    }
  }
  ImageChip chip;
  chip.pixels = resize_bilinear(crop, target, target);
  chip.metadata = metadata;
  chip.metadata.gsd_m_per_px = metadata.gsd_m_per_px * static_cast<double>(side) / static_cast<double>(target);
  return chip;
}

}  // namespace geopatch
