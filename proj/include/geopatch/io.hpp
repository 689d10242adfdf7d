// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace geopatch::io {

std::string read_file(const std::filesystem::path& path);
/// Writes through a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

/// Framed binary file: JSON header line(s), one blank line, then a raw
/// little-endian float32 blob.
struct Framed {
  nlohmann::json header;
  std::vector<float> blob;
};

std::string encode_framed(const nlohmann::json& header, std::span<const float> blob);
/// Parses a framed file. Throws DataError when the header is malformed or the
/// blob length is not a multiple of four bytes.
Framed decode_framed(std::string_view bytes, const std::string& origin);

}  // namespace geopatch::io
