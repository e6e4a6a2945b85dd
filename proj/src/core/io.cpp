#include "io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace trust::io {

static_assert(std::endian::native == std::endian::little,
              "blob encoders assume a little-endian host");

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw IoError("short write to " + path.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

void append_f64_le(std::string& out, std::span<const double> values) {
  const auto* p = reinterpret_cast<const char*>(values.data());
  out.append(p, values.size() * sizeof(double));
}

void append_f32_le(std::string& out, std::span<const double> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * sizeof(float));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto f = static_cast<float>(values[i]);
    std::memcpy(out.data() + start + i * sizeof(float), &f, sizeof(float));
  }
}

std::vector<double> parse_f64_le(std::string_view bytes) {
  if (bytes.size() % sizeof(double) != 0) {
    throw IoError("f64 blob length " + std::to_string(bytes.size()) + " is not a multiple of 8");
  }
  std::vector<double> v(bytes.size() / sizeof(double));
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

std::vector<double> parse_f32_le(std::string_view bytes) {
  if (bytes.size() % sizeof(float) != 0) {
    throw IoError("f32 blob length " + std::to_string(bytes.size()) + " is not a multiple of 4");
  }
  std::vector<double> v(bytes.size() / sizeof(float));
  for (std::size_t i = 0; i < v.size(); ++i) {
    float f;
    std::memcpy(&f, bytes.data() + i * sizeof(float), sizeof(float));
    v[i] = f;
  }
  return v;
}

namespace {

std::string digest_hex(const EVP_MD* md, std::string_view prefix, std::string_view bytes) {
  unsigned char buf[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, md, nullptr);
  EVP_DigestUpdate(ctx, prefix.data(), prefix.size());
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, buf, &len);
  EVP_MD_CTX_free(ctx);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[buf[i] >> 4]);
    out.push_back(hex[buf[i] & 15]);
  }
  return out;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) { return digest_hex(EVP_sha256(), {}, bytes); }

std::string git_blob_hash(std::string_view bytes) {
  std::string header = "blob " + std::to_string(bytes.size());
  header.push_back('\0');
  return digest_hex(EVP_sha1(), header, bytes);
}

void write_pgm(const std::filesystem::path& path, std::span<const double> pixels,
               std::size_t height, std::size_t width) {
  if (pixels.size() != height * width) {
    throw DimensionError("write_pgm: " + std::to_string(pixels.size()) + " pixels for " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (double v : pixels) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  write_file(path, out);
}

}  // namespace trust::io
