#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace trust::io {

std::string read_file(const std::filesystem::path& path);
/// Writes atomically enough for our purposes: temp file then rename.
void write_file(const std::filesystem::path& path, std::string_view bytes);

void append_f64_le(std::string& out, std::span<const double> values);
void append_f32_le(std::string& out, std::span<const double> values);
std::vector<double> parse_f64_le(std::string_view bytes);
std::vector<double> parse_f32_le(std::string_view bytes);

std::string sha256_hex(std::string_view bytes);
/// SHA-1 over "blob <len>\0<bytes>", the object id git assigns to a file.
std::string git_blob_hash(std::string_view bytes);

/// 8-bit binary PGM (P5); values are clamped to [0, 1] and scaled to 0..255.
void write_pgm(const std::filesystem::path& path, std::span<const double> pixels,
               std::size_t height, std::size_t width);

}  // namespace trust::io
