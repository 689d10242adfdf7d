// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "geopatch/error.hpp"
#include "geopatch/geodata.hpp"
#include "geopatch/io.hpp"
#include "test_util.hpp"

using namespace geopatch;
namespace fs = std::filesystem;
using testutil::random_tensor;

namespace {

FrameMetadata benign(std::int64_t t) {
  FrameMetadata m;
  m.gsd_m_per_px = 0.5;
  m.off_nadir_deg = 10.0;
  m.cloud_cover_frac = 0.05;
  m.sun_elevation_deg = 70.0;
  m.timestamp = t;
  m.bbox = {0, 0, 8, 8};
  return m;
}

TensorF flat_image(std::size_t s, float v) { return TensorF({s, s, 3}, v); }

SceneSequence make_sequence(std::size_t frames, int label = 1) {
  SceneSequence seq{"scene_a", label, {}};
  for (std::size_t f = 0; f < frames; ++f) {
    ImageChip c;
    c.name = "frame_" + std::to_string(f);
    c.pixels = quantize8(random_tensor({8, 8, 3}, 100 + f));
    c.metadata = benign(1500000000 + static_cast<std::int64_t>(f) * 86400);
    seq.frames.push_back(c);
  }
  return seq;
}

// Linear 2-class model on 8x8x3 chips: predicts 1 iff mean intensity > 0.5.
Model brightness_model() {
  ModelConfig c;
  c.input_size = 8;
  c.class_count = 2;
  c.conv_filters = {};
  c.dense_widths = {};
  Model m{c};
  auto& params = m.mutable_parameters();
  REQUIRE(params.size() == 2);
  auto& w = params[0].value;  // [192, 2]
  for (std::size_t i = 0; i < 192; ++i) {
    w[i * 2 + 0] = 0.0f;
    w[i * 2 + 1] = 1.0f;
  }
  params[1].value[0] = 0.0f;
  params[1].value[1] = -96.0f;
  return m;
}

}  // namespace

TEST_CASE("metadata validation") {
  auto m = benign(0);
  CHECK_NOTHROW(validate_metadata(m, "x"));
  m.cloud_cover_frac = 1.2;
  CHECK_THROWS_AS(validate_metadata(m, "x"), DataError);
  m = benign(0);
  m.gsd_m_per_px = 0.0;
  CHECK_THROWS_AS(validate_metadata(m, "x"), DataError);
  m = benign(0);
  m.off_nadir_deg = 90.0;
  CHECK_THROWS_AS(validate_metadata(m, "x"), DataError);
  m = benign(0);
  m.sun_elevation_deg = 0.0;
  CHECK_THROWS_AS(validate_metadata(m, "x"), DataError);
  m.sun_elevation_deg = 90.0;
  CHECK_NOTHROW(validate_metadata(m, "x"));
}

TEST_CASE("metadata JSON uses the documented field names and ISO timestamps") {
  auto m = benign(parse_utc("2017-03-04T05:06:07Z"));
  m.registration_offset_px = std::array<int, 2>{-2, 1};
  const nlohmann::json j = m;
  for (const char* key : {"gsd_m_per_px", "off_nadir_deg", "cloud_cover_frac", "sun_elevation_deg", "timestamp",
                          "bbox", "registration_offset_px"}) {
    CHECK(j.contains(key));
  }
  CHECK(j.at("timestamp") == "2017-03-04T05:06:07Z");
  CHECK(j.get<FrameMetadata>() == m);
  CHECK(format_utc(0) == "1970-01-01T00:00:00Z");
  CHECK(parse_utc("2000-02-29T23:59:59Z") == 951868799);
  CHECK_THROWS_AS(parse_utc("2000-02-30"), DataError);
}

TEST_CASE("PPM round trip is lossless at 8 bits") {
  const auto dir = testutil::scratch_dir("ppm");
  const auto img = quantize8(random_tensor({5, 7, 3}, 1));
  write_ppm(dir / "a.ppm", img);
  const auto back = read_ppm(dir / "a.ppm");
  CHECK(back == img);
  io::write_file_atomic(dir / "bad.ppm", "P3\n1 1\n255\n0 0 0\n");
  CHECK_THROWS_AS(read_ppm(dir / "bad.ppm"), DataError);
}

TEST_CASE("sequence save/load") {
  const auto dir = testutil::scratch_dir("sequence");
  const auto seq = make_sequence(4);

  SUBCASE("round trip") {
    save_sequence(seq, dir / "s");
    const auto back = load_sequence(dir / "s");
    CHECK(back.scene_id == seq.scene_id);
    CHECK(back.true_label == seq.true_label);
    REQUIRE(back.frames.size() == seq.frames.size());
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
      CHECK(back.frames[i].name == seq.frames[i].name);
      CHECK(back.frames[i].pixels == seq.frames[i].pixels);
      CHECK(back.frames[i].metadata == seq.frames[i].metadata);
    }
  }
  SUBCASE("out-of-order timestamps load sorted") {
    auto shuffled = seq;
    std::swap(shuffled.frames[0].metadata.timestamp, shuffled.frames[3].metadata.timestamp);
    save_sequence(shuffled, dir / "s");
    const auto back = load_sequence(dir / "s");
    for (std::size_t i = 1; i < back.frames.size(); ++i) {
      CHECK(back.frames[i - 1].metadata.timestamp < back.frames[i].metadata.timestamp);
    }
    CHECK(back.frames.front().name == "frame_3");
  }
  SUBCASE("errors name the offending file") {
    save_sequence(seq, dir / "s");
    auto side = io::read_json(dir / "s" / "frame_1.json");
    side["cloud_cover_frac"] = 1.2;
    io::write_json(dir / "s" / "frame_1.json", side);
    try {
      load_sequence(dir / "s");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("frame_1.json") != std::string::npos);
    }
    fs::remove(dir / "s" / "frame_1.json");
    try {
      load_sequence(dir / "s");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("frame_1.json") != std::string::npos);
    }
    save_sequence(seq, dir / "t");
    fs::remove(dir / "t" / "frame_2.ppm");
    try {
      load_sequence(dir / "t");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("frame_2.ppm") != std::string::npos);
    }
    CHECK_THROWS_AS(load_sequence(dir / "missing"), DataError);
  }
  SUBCASE("duplicate timestamps are rejected") {
    auto dup = seq;
    dup.frames[2].metadata.timestamp = dup.frames[1].metadata.timestamp;
    save_sequence(dup, dir / "s");
    CHECK_THROWS_AS(load_sequence(dir / "s"), DataError);
  }
}

TEST_CASE("filter_admissible") {
  FilterRules no_model;
  no_model.require_correct_prediction = false;
  no_model.min_frames = 1;

  SUBCASE("boundary thresholds") {
    auto seq = make_sequence(4);
    seq.frames[0].metadata.off_nadir_deg = 35.0;     // dropped
    seq.frames[1].metadata.sun_elevation_deg = 60.0; // kept: inclusive
    seq.frames[2].metadata.cloud_cover_frac = 0.20;  // dropped: strict
    seq.frames[3].metadata.off_nadir_deg = 29.999;   // kept
    const auto out = filter_admissible(seq, nullptr, no_model);
    REQUIRE(out.accepted());
    REQUIRE(out.sequence->frames.size() == 2);
    CHECK(out.sequence->frames[0].name == "frame_1");
    CHECK(out.sequence->frames[1].name == "frame_3");
    CHECK(out.dropped.size() == 2);
  }
  SUBCASE("ten admissible frames, seven correctly classified, rejected") {
    const auto model = brightness_model();
    SceneSequence seq{"bright", 1, {}};
    for (int f = 0; f < 10; ++f) {
      ImageChip c{"f" + std::to_string(f), flat_image(8, f < 7 ? 0.8f : 0.2f), benign(1000 + f)};
      seq.frames.push_back(c);
    }
    const FilterRules rules;  // default thresholds
    const auto out = filter_admissible(seq, &model, rules);
    CHECK_FALSE(out.accepted());
    CHECK(out.dropped.size() == 3);
    // Flip one more frame to correct: 8 survive, accepted.
    seq.frames[7].pixels = flat_image(8, 0.8f);
    CHECK(filter_admissible(seq, &model, rules).accepted());
  }
  SUBCASE("rule conjunction, enumerated") {
    const auto model = brightness_model();
    // Each bit toggles one failing condition; a frame survives only at mask 0.
    SceneSequence seq{"enum", 1, {}};
    for (int mask = 0; mask < 16; ++mask) {
      ImageChip c{"m" + std::to_string(mask), flat_image(8, (mask & 8) ? 0.2f : 0.8f), benign(5000 + mask)};
      if (mask & 1) c.metadata.off_nadir_deg = 30.0;
      if (mask & 2) c.metadata.cloud_cover_frac = 0.25;
      if (mask & 4) c.metadata.sun_elevation_deg = 59.9;
      seq.frames.push_back(c);
    }
    FilterRules rules;
    rules.min_frames = 1;
    const auto out = filter_admissible(seq, &model, rules);
    REQUIRE(out.accepted());
    REQUIRE(out.sequence->frames.size() == 1);
    CHECK(out.sequence->frames[0].name == "m0");
    CHECK(out.dropped.size() == 15);
  }
  SUBCASE("idempotent") {
    auto seq = make_sequence(6);
    seq.frames[2].metadata.cloud_cover_frac = 0.5;
    const auto once = filter_admissible(seq, nullptr, no_model);
    const auto twice = filter_admissible(*once.sequence, nullptr, no_model);
    REQUIRE(twice.accepted());
    CHECK(twice.dropped.empty());
    CHECK(twice.sequence->frames.size() == once.sequence->frames.size());
  }
  SUBCASE("a model is required when predictions are checked") {
    CHECK_THROWS_AS(filter_admissible(make_sequence(8), nullptr, FilterRules{}), UsageError);
  }
}

TEST_CASE("preprocess_chip") {
  SUBCASE("bbox side 458, gsd 0.5, S=229 gives gsd 1.0 and 229x229x3") {
    const auto raw = random_tensor({458, 458, 3}, 3);
    FrameMetadata m = benign(0);
    m.bbox = {0, 0, 458, 458};
    const auto chip = preprocess_chip(raw, m, 229);
    CHECK(chip.metadata.gsd_m_per_px == 1.0);
    CHECK(chip.pixels.shape() == Shape{229, 229, 3});
  }
  SUBCASE("bbox side equal to S passes pixels through") {
    const auto raw = random_tensor({40, 50, 3}, 4);
    FrameMetadata m = benign(0);
    m.bbox = {5, 3, 32, 32};
    const auto chip = preprocess_chip(raw, m, 32);
    CHECK(chip.metadata.gsd_m_per_px == m.gsd_m_per_px);
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x)
        for (std::size_t c = 0; c < 3; ++c) CHECK(chip.pixels.at(y, x, c) == raw.at(y + 3, x + 5, c));
  }
  SUBCASE("non-square bbox is center-padded to a square") {
    const auto raw = random_tensor({20, 20, 3}, 5);
    FrameMetadata m = benign(0);
    m.bbox = {4, 6, 10, 6};  // padded to 10x10 starting at row 4
    const auto chip = preprocess_chip(raw, m, 10);
    CHECK(chip.pixels.at(0, 0, 0) == raw.at(4, 4, 0));
    CHECK(chip.pixels.at(9, 9, 2) == raw.at(13, 13, 2));
  }
  SUBCASE("padding outside the source image is zero") {
    const auto raw = TensorF({6, 10, 3}, 0.5f);
    FrameMetadata m = benign(0);
    m.bbox = {0, 0, 10, 6};  // padded to 10x10 from row -2
    const auto chip = preprocess_chip(raw, m, 10);
    CHECK(chip.pixels.at(0, 5, 0) == 0.0f);
    CHECK(chip.pixels.at(5, 5, 0) == 0.5f);
    CHECK(chip.pixels.at(9, 5, 0) == 0.0f);
  }
  SUBCASE("degenerate or out-of-image bbox") {
    const auto raw = random_tensor({10, 10, 3}, 6);
    FrameMetadata m = benign(0);
    m.bbox = {0, 0, 0, 5};
    CHECK_THROWS_AS(preprocess_chip(raw, m, 8), DataError);
    m.bbox = {5, 5, 8, 8};
    CHECK_THROWS_AS(preprocess_chip(raw, m, 8), DataError);
  }
  SUBCASE("gsd update law composes") {
    const auto raw = random_tensor({120, 120, 3}, 7);
    for (const auto& [s1, s2] : {std::pair<std::size_t, std::size_t>{96, 64}, {80, 40}, {50, 229}, {77, 13}}) {
      FrameMetadata m = benign(0);
      m.gsd_m_per_px = 0.37;
      m.bbox = {0, 0, 120, 120};
      auto first = preprocess_chip(raw, m, s1);
      first.metadata.bbox = {0, 0, static_cast<long>(s1), static_cast<long>(s1)};
      const auto twice = preprocess_chip(first.pixels, first.metadata, s2);
      const auto once = preprocess_chip(raw, m, s2);
      // Equal up to double rounding of the intermediate product.
      const double a = twice.metadata.gsd_m_per_px, b = once.metadata.gsd_m_per_px;
      CHECK(std::abs(a - b) <= 4.0 * std::numeric_limits<double>::epsilon() * b);
    }
  }
  SUBCASE("resized pixels stay in [0, 1]") {
    const auto raw = random_tensor({33, 33, 3}, 8);
    FrameMetadata m = benign(0);
    m.bbox = {0, 0, 33, 33};
    const auto chip = preprocess_chip(raw, m, 64);
    for (float v : chip.pixels.data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}
