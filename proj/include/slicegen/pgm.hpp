#pragma once

#include <filesystem>
#include <string>

#include "slicegen/image.hpp"

namespace slicegen {

/// Binary 8-bit PGM (P5). Intensities are clamped to [0, 1] and rounded to 0..255.
void write_pgm(const std::filesystem::path& path, const Image& image);
/// Mask as P5 with values {0, 255}.
void write_pgm(const std::filesystem::path& path, const Mask& mask);

Image read_pgm(const std::filesystem::path& path);
/// Any nonzero pixel reads as true.
Mask read_pgm_mask(const std::filesystem::path& path);

std::string encode_pgm(const Image& image);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace slicegen
