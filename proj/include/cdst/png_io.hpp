#pragma once

#include <string>

#include "cdst/image.hpp"

namespace cdst {

// 8-bit PNG in, sRGB buffer out (grey/palette/alpha inputs are expanded or
// flattened to RGB; values mapped to [0,1]).
ImageBuffer read_png(const std::string& path);

// Writes sRGB (8-bit RGB) or Grey (8-bit grayscale) buffers; values are
// clamped to [0,1] and rounded.
void write_png(const ImageBuffer& img, const std::string& path);

// 1-bit grayscale PNG.
void write_png(const EdgeMap& edges, const std::string& path);

}  // namespace cdst
