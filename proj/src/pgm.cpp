#include "slicegen/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace slicegen {

namespace {

std::string encode(std::size_t rows, std::size_t cols, const std::string& payload) {
  return "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n" + payload;
}

struct RawPgm {
  std::size_t rows = 0, cols = 0;
  std::string payload;
};

RawPgm decode(const std::string& bytes, const std::filesystem::path& path) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) { throw LoadError(path.string() + ": " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    std::size_t start = pos, value = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])))
      value = value * 10 + std::size_t(bytes[pos++] - '0');
    if (pos == start) fail("malformed PGM header");
    return value;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail("not a binary PGM (P5)");
  pos = 2;
  RawPgm out;
  out.cols = number();
  out.rows = number();
  const std::size_t maxval = number();
  if (maxval != 255) fail("only 8-bit PGM (maxval 255) is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    fail("malformed PGM header");
  ++pos;
  if (bytes.size() - pos < out.rows * out.cols) fail("truncated PGM payload");
  out.payload = bytes.substr(pos, out.rows * out.cols);
  return out;
}

}  // namespace

std::string encode_pgm(const Image& image) {
  std::string payload(image.size(), '\0');
  const auto px = image.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = std::clamp(double(px[i]), 0.0, 1.0);
    payload[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  return encode(image.rows(), image.cols(), payload);
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  write_file_atomic(path, encode_pgm(image));
}

void write_pgm(const std::filesystem::path& path, const Mask& mask) {
  std::string payload(mask.size(), '\0');
  for (std::size_t i = 0; i < mask.size(); ++i)
    payload[i] = static_cast<char>(mask[i] ? 255 : 0);
  write_file_atomic(path, encode(mask.rows(), mask.cols(), payload));
}

Image read_pgm(const std::filesystem::path& path) {
  const RawPgm raw = decode(read_file(path), path);
  std::vector<float> pixels(raw.payload.size());
  for (std::size_t i = 0; i < pixels.size(); ++i)
    pixels[i] = float(static_cast<unsigned char>(raw.payload[i])) / 255.0f;
  return Image(raw.rows, raw.cols, std::move(pixels));
}

Mask read_pgm_mask(const std::filesystem::path& path) {
  const RawPgm raw = decode(read_file(path), path);
  Mask mask(raw.rows, raw.cols);
  for (std::size_t i = 0; i < raw.payload.size(); ++i) mask.set(i, raw.payload[i] != 0);
  return mask;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace slicegen
