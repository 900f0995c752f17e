#pragma once

#include <filesystem>

#include "endopoint/tensor.hpp"

namespace endopoint {

/// Reads a binary (P5) PGM with 8- or 16-bit samples, scaled to [0, 1].
Tensor read_pgm(const std::filesystem::path& path);

/// Writes an H x W tensor in [0, 1] as P5 PGM with the given maxval
/// (255 or 65535). Values are clamped and rounded.
void write_pgm(const std::filesystem::path& path, const Tensor& image,
               unsigned maxval = 255);

}  // namespace endopoint
