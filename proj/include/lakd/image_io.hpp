#pragma once

#include <string>

#include "lakd/tensor.hpp"

namespace lakd {

/// Reads an 8-bit binary PPM (P6) or PGM (P5), maxval 255, into a
/// [1,C,H,W] tensor scaled to [0,1]. Malformed input reports the byte
/// offset of the failure.
Tensor read_image(const std::string& path);

/// Writes [1,3,H,W] as P6 or [1,1,H,W] as P5. Values are clamped to [0,1]
/// and quantized with round-half-up to the 8-bit grid.
void write_image(const std::string& path, const Tensor& image);

}  // namespace lakd
