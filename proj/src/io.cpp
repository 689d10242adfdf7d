// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "geopatch/io.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include "geopatch/error.hpp"

namespace geopatch::io {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()) % 100000) + "." +
         std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_json(const std::filesystem::path& path) {
  const auto text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

std::string encode_framed(const nlohmann::json& header, std::span<const float> blob) {
  std::string out = header.dump();
  out += "\n\n";
  const auto offset = out.size();
  out.resize(offset + blob.size() * 4);
  for (std::size_t i = 0; i < blob.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(blob[i]);
    for (int b = 0; b < 4; ++b) out[offset + i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  return out;
}

Framed decode_framed(std::string_view bytes, const std::string& origin) {
  const auto sep = bytes.find("\n\n");
  if (sep == std::string_view::npos) throw DataError(origin + ": missing blank line after header");
  Framed f;
  try {
    f.header = nlohmann::json::parse(bytes.substr(0, sep));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(origin + ": invalid header: " + e.what());
  }
  const auto blob = bytes.substr(sep + 2);
  if (blob.size() % 4 != 0) throw DataError(origin + ": blob length is not a multiple of 4 bytes");
  f.blob.resize(blob.size() / 4);
  for (std::size_t i = 0; i < f.blob.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[i * 4 + b])) << (8 * b);
    f.blob[i] = std::bit_cast<float>(bits);
  }
  return f;
}

}  // namespace geopatch::io
